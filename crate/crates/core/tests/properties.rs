use proptest::prelude::*;

use asyspa_lab::analysis::{audit_asynchrony, reconstruct_augmented};
use asyspa_lab::gensubgrad::{gen_step, make_cyclic_incremental, GenSchedule, GenState, Increments, NoiseRule, Selector};
use asyspa_lab::graph::{asynchrony_bounds, build_topology, TopologyKind};
use asyspa_lab::objective::{Dataset, ObjectiveSpec};
use asyspa_lab::protocol::{Message, NodeState, Share};
use asyspa_lab::simulator::{run, SimConfig, Straggler, Timing, TraceOptions, Trace};
use asyspa_lab::{Algorithm, Digraph, StepsizeSpec};

fn topology() -> impl Strategy<Value = Digraph> {
    prop_oneof![
        (2usize..7).prop_map(|n| build_topology(TopologyKind::Ring, n, None).unwrap()),
        (3usize..7)
            .prop_flat_map(|n| (Just(n), 1..n))
            .prop_map(|(n, k)| build_topology(TopologyKind::RingPlusK, n, Some(k)).unwrap()),
        (3usize..8).prop_map(|n| build_topology(TopologyKind::Exponential, n, None).unwrap()),
    ]
}

fn algorithm() -> impl Strategy<Value = Algorithm> {
    prop_oneof![Just(Algorithm::Asyspa), Just(Algorithm::Naive), Just(Algorithm::Synspa)]
}

fn sim_config() -> impl Strategy<Value = SimConfig> {
    (
        topology(),
        algorithm(),
        1.0f64..1.5,
        0.0f64..1.0,
        0.0f64..2.5,
        any::<u64>(),
        prop::option::of(1.0f64..3.0),
    )
        .prop_map(|(graph, algorithm, tau_min, extra, tau_delay, seed, slow)| {
            let n = graph.node_count();
            let mut timing = Timing::uniform(tau_min, tau_min + extra, tau_delay);
            if let Some(f) = slow {
                timing.straggler = Some(Straggler { nodes: vec![0], period_factor: f, extra_wait_mean: 0.3 });
            }
            SimConfig {
                graph,
                algorithm,
                stepsize: StepsizeSpec::power(1.0, 0.75),
                objectives: (0..n).map(|i| ObjectiveSpec::abs(i as f64 - 1.5)).collect(),
                x0: Some((0..n).map(|i| vec![(i * 7 % 5) as f64 - 2.0]).collect()),
                timing,
                seed,
                max_events: 300,
                trace: TraceOptions::default(),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn runs_conserve_mass_and_replay(cfg in sim_config()) {
        let out = run(&cfg).unwrap();
        prop_assert!(out.max_mass_error <= 1e-9);
        let sched = cfg.stepsize.build().unwrap();
        let sys = reconstruct_augmented(&out.trace, &cfg.graph, &cfg.objectives, &sched, out.bounds.b).unwrap();
        prop_assert!(sys.max_residual <= 1e-9, "residual {}", sys.max_residual);
        prop_assert!(sys.max_column_error <= 1e-12);
    }

    #[test]
    fn counters_and_windows_stay_in_bounds(cfg in sim_config()) {
        let mut cfg = cfg;
        cfg.algorithm = Algorithm::Asyspa;
        let out = run(&cfg).unwrap();
        let audit = audit_asynchrony(&out.trace, &out.bounds).unwrap();
        prop_assert_eq!(audit.violations(), 0, "{:?}", audit);
        for s in &out.states {
            prop_assert!(s.l > s.updates.min(1));
        }
    }

    #[test]
    fn fractional_period_ratios_stay_in_bounds(
        n in 2usize..5,
        seed in any::<u64>(),
        spread in 0.05f64..0.95,
        delay in 0.0f64..1.7,
    ) {
        let graph = build_topology(TopologyKind::Ring, n, None).unwrap();
        let cfg = SimConfig {
            objectives: (0..n).map(|i| ObjectiveSpec::abs(i as f64)).collect(),
            graph,
            algorithm: Algorithm::Asyspa,
            stepsize: StepsizeSpec::power(1.0, 0.75),
            x0: None,
            timing: Timing::uniform(1.0, 1.0 + spread, delay),
            seed,
            max_events: 400,
            trace: TraceOptions::default(),
        };
        let out = run(&cfg).unwrap();
        let audit = audit_asynchrony(&out.trace, &out.bounds).unwrap();
        prop_assert_eq!(audit.violations(), 0, "{:?}", audit);
        let sched = cfg.stepsize.build().unwrap();
        let sys = reconstruct_augmented(&out.trace, &cfg.graph, &cfg.objectives, &sched, out.bounds.b).unwrap();
        prop_assert!(sys.max_residual <= 1e-9);
    }

    #[test]
    fn trace_jsonl_round_trips(cfg in sim_config()) {
        let out = run(&cfg).unwrap();
        let bytes = out.trace.to_jsonl_bytes().unwrap();
        let back = Trace::read_jsonl(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &out.trace);
        prop_assert_eq!(back.to_jsonl_bytes().unwrap(), bytes);
    }

    #[test]
    fn same_seed_same_trace(cfg in sim_config()) {
        let a = run(&cfg).unwrap().trace.to_jsonl_bytes().unwrap();
        let b = run(&cfg).unwrap().trace.to_jsonl_bytes().unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn activation_empties_buffers_and_keeps_mass(
        shares in prop::collection::vec((-5.0f64..5.0, 0.01f64..1.0, 1u64..50), 0..6),
        deg in 1usize..5,
    ) {
        let sched = StepsizeSpec::power(1.0, 0.6).build().unwrap();
        let obj = ObjectiveSpec::abs(0.0);
        let mut s = NodeState::new(0, vec![1.0]);
        for (i, &(x, y, l)) in shares.iter().enumerate() {
            let msg = Message {
                id: i as u64,
                src: 1,
                dst: 0,
                share: Share { x: vec![x], y, l },
                send_time: 0,
                deliver_time: 0,
            };
            s.deposit(&msg).unwrap();
        }
        let incoming: f64 = shares.iter().map(|v| v.1).sum();
        prop_assert!((s.buffered_mass() - incoming).abs() < 1e-12);
        let l_max = shares.iter().map(|v| v.2).max().unwrap_or(1).max(1);
        let upd = s.activate(Algorithm::Asyspa, 0, deg, &sched, &obj).unwrap();
        prop_assert_eq!(s.buffer_sizes(), (0, 0, 0));
        match upd {
            Some(u) => {
                prop_assert_eq!(u.l_before, 1);
                prop_assert_eq!(u.l_after, l_max + 1);
                prop_assert!((u.alpha - sched.window_sum(1, l_max).unwrap()).abs() < 1e-12);
                prop_assert!((u.share.y * deg as f64 - incoming).abs() < 1e-12);
            }
            None => prop_assert!(shares.is_empty()),
        }
    }

    #[test]
    fn window_sums_are_additive(a in 1u64..5000, len1 in 0u64..3000, len2 in 0u64..3000, alpha in 0.55f64..1.0) {
        let s = StepsizeSpec::power(2.0, alpha).build().unwrap();
        let b = a + len1;
        let c = b + len2;
        let whole = s.window_sum(a, c).unwrap();
        let parts = s.window_sum(a, b).unwrap() + s.window_sum(b + 1, c).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
        prop_assert!((s.window_sum(a, a).unwrap() - s.rho(a).unwrap()).abs() <= 1e-15);
        prop_assert_eq!(s.window_sum(b + 1, b).unwrap(), 0.0);
        prop_assert!(whole > 0.0);
    }

    #[test]
    fn topologies_are_strongly_connected(g in topology()) {
        prop_assert!(g.is_strongly_connected());
        let text = g.to_edge_list();
        prop_assert_eq!(Digraph::from_edge_list(&text).unwrap(), g);
    }

    #[test]
    fn bounds_grow_with_slack(
        n in 1usize..10,
        tau_min in 0.1f64..2.0,
        r1 in 1.0f64..5.0,
        r2 in 1.0f64..2.0,
        d1 in 0.0f64..5.0,
        d2 in 1.0f64..2.0,
    ) {
        let lo = asynchrony_bounds(n, tau_min, tau_min * r1, d1).unwrap();
        let hi = asynchrony_bounds(n, tau_min, tau_min * r1 * r2, d1 * d2).unwrap();
        prop_assert!(lo.b1 <= hi.b1 && lo.b2 <= hi.b2 && lo.b <= hi.b);
        prop_assert!(lo.b1 >= 1);
        prop_assert_eq!(lo.b, lo.b1 + lo.b2);
    }

    #[test]
    fn subgradient_inequality_for_analytic_kinds(
        c in -3.0f64..3.0,
        w in 0.0f64..4.0,
        x in -10.0f64..10.0,
        y in -10.0f64..10.0,
    ) {
        for obj in [
            ObjectiveSpec::AbsDeviation { center: vec![c], weight: w },
            ObjectiveSpec::Quadratic { center: vec![c], weight: w },
        ] {
            let g = obj.subgradient(&[x]).unwrap()[0];
            let slack = obj.value(&[y]).unwrap() - obj.value(&[x]).unwrap() - g * (y - x);
            prop_assert!(slack >= -1e-9);
        }
    }

    #[test]
    fn shards_partition_the_rows(rows in 1usize..60, parts in 1usize..8) {
        prop_assume!(parts <= rows);
        let features: Vec<Vec<f64>> = (0..rows).map(|i| vec![i as f64]).collect();
        let labels: Vec<usize> = (0..rows).map(|i| i % 2).collect();
        let ds = Dataset::new(features, labels, 2).unwrap();
        let shards = ds.shard(parts).unwrap();
        prop_assert_eq!(shards.len(), parts);
        let mut seen: Vec<f64> = shards.iter().flat_map(|s| s.features().iter().map(|f| f[0])).collect();
        seen.sort_by(f64::total_cmp);
        prop_assert_eq!(seen, (0..rows).map(|i| i as f64).collect::<Vec<_>>());
        let per = rows / parts;
        for s in &shards[..parts - 1] {
            prop_assert_eq!(s.len(), per);
        }
    }

    #[test]
    fn incremental_counters_stay_balanced(n in 1usize..6, steps in 1u64..400) {
        let rho = StepsizeSpec::power(1.0, 1.0).build().unwrap();
        let objs: Vec<ObjectiveSpec> = (0..n).map(|i| ObjectiveSpec::abs(i as f64)).collect();
        let sched = make_cyclic_incremental(n);
        let mut st = GenState::new(n, vec![0.0]);
        for _ in 0..steps {
            gen_step(&mut st, &sched, &rho, &objs).unwrap();
            let hi = *st.r.iter().max().unwrap();
            let lo = *st.r.iter().min().unwrap();
            prop_assert!(hi - lo <= 1);
        }
        prop_assert_eq!(st.r.iter().sum::<u64>(), steps);
    }

    #[test]
    fn uneven_increments_respect_their_declared_bounds(inc in prop::collection::vec(1u64..4, 1..5)) {
        // Two components alternate; both consume the same increment pattern.
        let pattern: Vec<u64> = inc.iter().flat_map(|&d| [d, d]).collect();
        let sigma2 = *inc.iter().max().unwrap();
        let sched = GenSchedule {
            n: 2,
            selector: Selector::Cyclic,
            increments: Increments::Periodic(pattern),
            sigma1: 2,
            sigma2,
            noise: NoiseRule::Zero,
        };
        let rho = StepsizeSpec::power(1.0, 1.0).build().unwrap();
        let objs = vec![ObjectiveSpec::abs(1.0), ObjectiveSpec::abs(-1.0)];
        let mut st = GenState::new(2, vec![0.5]);
        for _ in 0..200 {
            gen_step(&mut st, &sched, &rho, &objs).unwrap();
        }
    }
}
