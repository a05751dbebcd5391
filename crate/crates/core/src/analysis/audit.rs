use serde::Serialize;

use crate::error::Result;
use crate::graph::AsynchronyBounds;
use crate::simulator::{EventKind, Trace};
use crate::stepsize::StepsizeSchedule;

use super::augmented::MessageLog;

/// Trace audit of the activation window, message age and counter bounds.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AsynchronyAudit {
    pub b1: usize,
    pub b: usize,
    pub nb: usize,
    /// Windows of `b1` consecutive instants missing some node.
    pub window_violations: u64,
    /// Messages consumed more than `b` instants after they were sent.
    pub late_messages: Vec<u64>,
    /// Largest `consumed - sent` over consumed messages.
    pub max_message_age: u64,
    /// Largest `max_i l_i - min_i l_i` after any instant.
    pub max_l_gap: u64,
    /// Updates whose counter increment is outside `[1, nb + 1]`.
    pub increment_violations: u64,
    pub min_increment: u64,
    pub max_increment: u64,
}

impl AsynchronyAudit {
    pub fn violations(&self) -> u64 {
        self.window_violations
            + self.late_messages.len() as u64
            + self.increment_violations
            + u64::from(self.max_l_gap > self.nb as u64)
    }
}

pub fn audit_asynchrony(trace: &Trace, bounds: &AsynchronyBounds) -> Result<AsynchronyAudit> {
    let n = bounds.n;
    let log = MessageLog::from_trace(trace, n)?;
    let instants = log.activations.len() as u64 - 1;
    let mut audit = AsynchronyAudit {
        b1: bounds.b1,
        b: bounds.b,
        nb: bounds.nb(),
        min_increment: u64::MAX,
        ..Default::default()
    };

    // Sliding window over instants: count how many instants of the window each node occupies.
    let b1 = bounds.b1 as u64;
    if instants >= b1 {
        let mut present = vec![0u64; n];
        let mut covered = 0usize;
        for k in 1..=instants {
            for a in &log.activations[k as usize] {
                if present[a.node] == 0 {
                    covered += 1;
                }
                present[a.node] += 1;
            }
            if k > b1 {
                for a in &log.activations[(k - b1) as usize] {
                    present[a.node] -= 1;
                    if present[a.node] == 0 {
                        covered -= 1;
                    }
                }
            }
            if k >= b1 && covered < n {
                audit.window_violations += 1;
            }
        }
    }

    for m in &log.messages {
        if let Some(q) = m.consumed {
            let age = q - m.sent;
            audit.max_message_age = audit.max_message_age.max(age);
            if age > bounds.b as u64 {
                audit.late_messages.push(m.id);
            }
        }
    }

    let mut l = vec![1u64; n];
    for acts in log.activations.iter().skip(1) {
        for a in acts {
            let inc = a.l_after.saturating_sub(a.l_before);
            audit.min_increment = audit.min_increment.min(inc);
            audit.max_increment = audit.max_increment.max(inc);
            if a.l_after < a.l_before || inc < 1 || inc > audit.nb as u64 + 1 {
                audit.increment_violations += 1;
            }
            l[a.node] = a.l_after;
        }
        let gap = l.iter().max().unwrap_or(&0) - l.iter().min().unwrap_or(&0);
        audit.max_l_gap = audit.max_l_gap.max(gap);
    }
    if audit.min_increment == u64::MAX {
        audit.min_increment = 0;
    }
    Ok(audit)
}

/// Gap between the per-node sums of applied stepsizes, checked against
/// `sum_{t=min_l}^{min_l+nb} rho(t)` after every instant.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BalanceAudit {
    pub violations: u64,
    pub max_gap: f64,
    /// Largest gap / bound ratio.
    pub max_ratio: f64,
    pub final_gap: f64,
}

pub fn audit_stepsize_balance(trace: &Trace, sched: &StepsizeSchedule, n: usize, nb: usize) -> Result<BalanceAudit> {
    let mut sums = vec![0.0f64; n];
    let mut l = vec![1u64; n];
    let mut audit = BalanceAudit::default();
    let mut current_k = None;
    let check = |sums: &[f64], l: &[u64], audit: &mut BalanceAudit| -> Result<()> {
        let gap = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - sums.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_l = *l.iter().min().unwrap_or(&1);
        let bound = sched.window_sum(min_l, min_l + nb as u64)?;
        audit.max_gap = audit.max_gap.max(gap);
        audit.max_ratio = audit.max_ratio.max(gap / bound);
        if gap > bound * (1.0 + 1e-12) {
            audit.violations += 1;
        }
        audit.final_gap = gap;
        Ok(())
    };
    for r in trace.records.iter().filter(|r| r.kind == EventKind::Activate) {
        if current_k.is_some_and(|k| k != r.k) {
            check(&sums, &l, &mut audit)?;
        }
        current_k = Some(r.k);
        if r.node < n {
            sums[r.node] += r.alpha.unwrap_or(0.0);
            l[r.node] = r.l_after.unwrap_or(l[r.node]);
        }
    }
    if current_k.is_some() {
        check(&sums, &l, &mut audit)?;
    }
    Ok(audit)
}
