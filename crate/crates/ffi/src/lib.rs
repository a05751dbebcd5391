//! C ABI over the `asyspa-lab` simulator.
//!
//! Every entry point returns an [`AslStatus`]; on failure a message is kept in
//! thread-local storage and can be read with [`asl_last_error`]. Handles are
//! opaque and must be released with their `_free` function. Strings returned
//! through out-pointers are owned by the caller and released with
//! [`asl_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use asyspa_lab::cli::SimSpec;
use asyspa_lab::graph::{asynchrony_bounds, build_topology};
use asyspa_lab::simulator::{run, RunOutput};
use asyspa_lab::{AsynchronyBounds, Digraph, SimConfig, StepsizeSpec, TopologyKind};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AslStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidParameter = 3,
    InvalidConfig = 4,
    InvalidState = 5,
    InvariantViolated = 6,
    ReconstructionFailed = 7,
    Io = 8,
    Format = 9,
    NotRun = 10,
    OutOfRange = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AslTopology {
    Ring = 0,
    /// Uses the `k` argument.
    RingPlusK = 1,
    Exponential = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AslBounds {
    pub b1: usize,
    pub b2: usize,
    pub b: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AslRunSummary {
    pub nodes: usize,
    pub dim: usize,
    pub instants: u64,
    pub activations: u64,
    pub deliveries: u64,
    pub final_time: f64,
    pub max_mass_error: f64,
}

/// Opaque digraph.
pub struct AslGraph(Digraph);

/// Opaque simulation: a validated config plus the output of its last run.
pub struct AslSim {
    cfg: SimConfig,
    out: Option<RunOutput>,
}

#[derive(Debug, thiserror::Error)]
enum FfiError {
    #[error("`{0}` is null")]
    Null(&'static str),
    #[error("`{0}` is not valid UTF-8")]
    Utf8(&'static str),
    #[error("{0}")]
    Core(#[from] asyspa_lab::Error),
    #[error("{0}")]
    Range(String),
    #[error("simulation has not been run")]
    NotRun,
    #[error("string contains an interior NUL byte")]
    Nul,
}

impl FfiError {
    fn status(&self) -> AslStatus {
        use asyspa_lab::Error as E;
        match self {
            FfiError::Null(_) => AslStatus::NullPointer,
            FfiError::Utf8(_) => AslStatus::InvalidUtf8,
            FfiError::Range(_) => AslStatus::OutOfRange,
            FfiError::NotRun => AslStatus::NotRun,
            FfiError::Nul => AslStatus::Format,
            FfiError::Core(e) => match e {
                E::Parameter(_) => AslStatus::InvalidParameter,
                E::Config { .. } => AslStatus::InvalidConfig,
                E::State(_) | E::Routing { .. } => AslStatus::InvalidState,
                E::Invariant(_) => AslStatus::InvariantViolated,
                E::Reconstruction(_) => AslStatus::ReconstructionFailed,
                E::Io(_) => AslStatus::Io,
                E::Json(_) | E::Csv(_) => AslStatus::Format,
            },
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> AslStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AslStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.to_string());
            e.status()
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            AslStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, FfiError> {
    if p.is_null() {
        return Err(FfiError::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| FfiError::Utf8(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, FfiError> {
    p.as_mut().ok_or(FfiError::Null(name))
}

unsafe fn handle<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, FfiError> {
    p.as_ref().ok_or(FfiError::Null(name))
}

fn owned_string(s: String) -> Result<*mut c_char, FfiError> {
    Ok(CString::new(s).map_err(|_| FfiError::Nul)?.into_raw())
}

fn to_c_bounds(b: &AsynchronyBounds) -> AslBounds {
    AslBounds { b1: b.b1, b2: b.b2, b: b.b }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn asl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn asl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn asl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a standard topology on `n` nodes.
///
/// # Safety
/// `out_graph` must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_graph_new(kind: AslTopology, n: usize, k: usize, out_graph: *mut *mut AslGraph) -> AslStatus {
    guard(|| {
        let slot = out(out_graph, "out_graph")?;
        let (kind, k) = match kind {
            AslTopology::Ring => (TopologyKind::Ring, None),
            AslTopology::RingPlusK => (TopologyKind::RingPlusK, Some(k)),
            AslTopology::Exponential => (TopologyKind::Exponential, None),
        };
        let g = build_topology(kind, n, k)?;
        *slot = Box::into_raw(Box::new(AslGraph(g)));
        Ok(())
    })
}

/// Parses an edge list (`n=<count>` header, then one `src dst` pair per line).
///
/// # Safety
/// `text` must be NUL-terminated; `out_graph` must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_graph_from_edge_list(text: *const c_char, out_graph: *mut *mut AslGraph) -> AslStatus {
    guard(|| {
        let slot = out(out_graph, "out_graph")?;
        let g = Digraph::from_edge_list(c_str(text, "text")?)?;
        *slot = Box::into_raw(Box::new(AslGraph(g)));
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_graph_node_count(graph: *const AslGraph, out_n: *mut usize) -> AslStatus {
    guard(|| {
        *out(out_n, "out_n")? = handle(graph, "graph")?.0.node_count();
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_graph_is_strongly_connected(graph: *const AslGraph, out_flag: *mut bool) -> AslStatus {
    guard(|| {
        *out(out_flag, "out_flag")? = handle(graph, "graph")?.0.is_strongly_connected();
        Ok(())
    })
}

/// Serializes the graph as an edge list; free the result with `asl_string_free`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_graph_edge_list(graph: *const AslGraph, out_text: *mut *mut c_char) -> AslStatus {
    guard(|| {
        let slot = out(out_text, "out_text")?;
        *slot = owned_string(handle(graph, "graph")?.0.to_edge_list())?;
        Ok(())
    })
}

/// # Safety
/// `graph` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn asl_graph_free(graph: *mut AslGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Creates a simulation from the JSON of an experiment config's `simulate` object.
/// Relative data and graph paths resolve against `base_dir` (the working
/// directory when null).
///
/// # Safety
/// Strings must be NUL-terminated; `out_sim` must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_sim_new(
    json: *const c_char,
    base_dir: *const c_char,
    seed: u64,
    out_sim: *mut *mut AslSim,
) -> AslStatus {
    guard(|| {
        let slot = out(out_sim, "out_sim")?;
        let spec: SimSpec = serde_json::from_str(c_str(json, "json")?).map_err(asyspa_lab::Error::from)?;
        let base = if base_dir.is_null() { PathBuf::from(".") } else { PathBuf::from(c_str(base_dir, "base_dir")?) };
        let (cfg, _) = spec.sim_config(&base, seed)?;
        *slot = Box::into_raw(Box::new(AslSim { cfg, out: None }));
        Ok(())
    })
}

/// Runs the simulation to completion, replacing any previous output.
///
/// # Safety
/// `sim` must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_sim_run(sim: *mut AslSim) -> AslStatus {
    guard(|| {
        let s = out(sim, "sim")?;
        s.out = Some(run(&s.cfg)?);
        Ok(())
    })
}

/// Asynchrony bounds implied by the simulation's timing; available before a run.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_sim_bounds(sim: *const AslSim, out_bounds: *mut AslBounds) -> AslStatus {
    guard(|| {
        *out(out_bounds, "out_bounds")? = to_c_bounds(&handle(sim, "sim")?.cfg.bounds()?);
        Ok(())
    })
}

unsafe fn finished<'a>(sim: *const AslSim) -> Result<(&'a AslSim, &'a RunOutput), FfiError> {
    let s = handle(sim, "sim")?;
    let o = s.out.as_ref().ok_or(FfiError::NotRun)?;
    Ok((s, o))
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_sim_summary(sim: *const AslSim, out_summary: *mut AslRunSummary) -> AslStatus {
    guard(|| {
        let slot = out(out_summary, "out_summary")?;
        let (_, o) = finished(sim)?;
        *slot = AslRunSummary {
            nodes: o.states.len(),
            dim: o.states.first().map_or(0, |s| s.z.len()),
            instants: o.instants,
            activations: o.activations,
            deliveries: o.deliveries,
            final_time: o.final_time,
            max_mass_error: o.max_mass_error,
        };
        Ok(())
    })
}

/// Copies node `node`'s final estimate z into `buf`, which holds `len >= dim` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn asl_sim_node_z(sim: *const AslSim, node: usize, buf: *mut f64, len: usize) -> AslStatus {
    guard(|| {
        let (_, o) = finished(sim)?;
        let st = o
            .states
            .get(node)
            .ok_or_else(|| FfiError::Range(format!("node {node} out of {}", o.states.len())))?;
        if buf.is_null() {
            return Err(FfiError::Null("buf"));
        }
        if len < st.z.len() {
            return Err(FfiError::Range(format!("buffer holds {len} values, z has {}", st.z.len())));
        }
        std::slice::from_raw_parts_mut(buf, st.z.len()).copy_from_slice(&st.z);
        Ok(())
    })
}

/// Final push-sum weight y of node `node`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_sim_node_y(sim: *const AslSim, node: usize, out_y: *mut f64) -> AslStatus {
    guard(|| {
        let slot = out(out_y, "out_y")?;
        let (_, o) = finished(sim)?;
        let st = o
            .states
            .get(node)
            .ok_or_else(|| FfiError::Range(format!("node {node} out of {}", o.states.len())))?;
        *slot = st.y;
        Ok(())
    })
}

/// The recorded trace as JSON lines; free the result with `asl_string_free`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_sim_trace_jsonl(sim: *const AslSim, out_text: *mut *mut c_char) -> AslStatus {
    guard(|| {
        let slot = out(out_text, "out_text")?;
        let (_, o) = finished(sim)?;
        let bytes = o.trace.to_jsonl_bytes()?;
        *slot = CString::new(bytes).map_err(|_| FfiError::Nul)?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `sim` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn asl_sim_free(sim: *mut AslSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Event-index bounds for `n` nodes with the given timing constants.
///
/// # Safety
/// `out_bounds` must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_asynchrony_bounds(
    n: usize,
    tau_min: f64,
    tau_max: f64,
    tau_delay: f64,
    out_bounds: *mut AslBounds,
) -> AslStatus {
    guard(|| {
        let slot = out(out_bounds, "out_bounds")?;
        *slot = to_c_bounds(&asynchrony_bounds(n, tau_min, tau_max, tau_delay)?);
        Ok(())
    })
}

/// Sum of the stepsizes `a..=b` for a stepsize spec given as JSON,
/// e.g. `{"kind":"power","scale":1,"alpha":0.6}`. Empty windows sum to 0.
///
/// # Safety
/// `stepsize_json` must be NUL-terminated; `out_sum` must be valid.
#[no_mangle]
pub unsafe extern "C" fn asl_window_sum(stepsize_json: *const c_char, a: u64, b: u64, out_sum: *mut f64) -> AslStatus {
    guard(|| {
        let slot = out(out_sum, "out_sum")?;
        let spec: StepsizeSpec =
            serde_json::from_str(c_str(stepsize_json, "stepsize_json")?).map_err(asyspa_lab::Error::from)?;
        *slot = spec.build()?.window_sum(a, b)?;
        Ok(())
    })
}
