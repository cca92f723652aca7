//! C interface to the sampler.
//!
//! Every fallible function returns a [`ZodmcStatus`]; on failure the message is
//! available from [`zodmc_last_error`] on the same thread. Objects are opaque
//! handles released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use zodmc::baselines::{run_ula, UlaConfig, UlaInit};
use zodmc::diffuser::{run_zodmc, SampleBatch, ZodmcConfig};
use zodmc::gmm::GmmSpec;
use zodmc::schedule::{build_schedule, ScheduleKind};
use zodmc::score::SampleCountPolicy;
use zodmc::target::{
    apply_annulus_penalty, make_gmm, make_mueller_brown, MuellerBrownParams, Phase, QueryLedger, Target,
};
use zodmc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZodmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Starved = 4,
    Aborted = 5,
    Unsupported = 6,
    DominationViolation = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZodmcScheduleKind {
    Constant = 0,
    Linear = 1,
    ExpDecay = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZodmcPolicyKind {
    /// `policy_value` conditional samples per score estimate.
    Fixed = 0,
    /// `policy_value` proposals per score estimate.
    ProposalBudget = 1,
}

/// Sampler settings. Fill with [`zodmc_run_config_default`] and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ZodmcRunConfig {
    pub schedule_kind: ZodmcScheduleKind,
    pub horizon: f64,
    pub steps: usize,
    pub delta: f64,
    pub policy_kind: ZodmcPolicyKind,
    pub policy_value: u64,
    /// Number of output samples.
    pub batch_size: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Query cap; 0 means none.
    pub max_total_queries: u64,
}

/// Opaque target handle.
pub struct ZodmcTarget(Target);

/// Opaque sample batch handle.
pub struct ZodmcBatch(SampleBatch);

/// Potential callback: `x` has `dim` entries; `user` is passed through. Must be
/// safe to call from several threads at once.
pub type ZodmcPotentialFn = Option<extern "C" fn(x: *const f64, dim: usize, user: *mut c_void) -> f64>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> ZodmcStatus {
    match e {
        Error::Config(_) | Error::Parse(_) => ZodmcStatus::Config,
        Error::Argument(_) => ZodmcStatus::InvalidArgument,
        Error::RgoStarved { .. } => ZodmcStatus::Starved,
        Error::RunAborted { .. } => ZodmcStatus::Aborted,
        Error::UnsupportedTarget(_) => ZodmcStatus::Unsupported,
        Error::DominationViolation { .. } => ZodmcStatus::DominationViolation,
        Error::Io(_) => ZodmcStatus::Io,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (ZodmcStatus, String)>) -> ZodmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ZodmcStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ZodmcStatus::Panic
        }
    }
}

fn lib(e: Error) -> (ZodmcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ZodmcStatus, String) {
    (ZodmcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (ZodmcStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), (ZodmcStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn zodmc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn zodmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Gaussian mixture `-log sum_i w_i N(x; mu_i, Sigma_i)`. `means` is `k x dim`
/// and `covariances` is `k x dim x dim`, both row-major.
///
/// # Safety
/// The arrays must hold `k`, `k * dim` and `k * dim * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn zodmc_target_gmm(
    dim: usize,
    k: usize,
    weights: *const f64,
    means: *const f64,
    covariances: *const f64,
    out: *mut *mut ZodmcTarget,
) -> ZodmcStatus {
    guard(|| {
        if dim == 0 || k == 0 {
            return Err((ZodmcStatus::InvalidArgument, "dim and k must be positive".into()));
        }
        let w = slice(weights, k, "weights")?;
        let m = slice(means, k * dim, "means")?;
        let c = slice(covariances, k * dim * dim, "covariances")?;
        let spec = GmmSpec {
            weights: w.to_vec(),
            means: m.chunks(dim).map(<[f64]>::to_vec).collect(),
            covariances: c
                .chunks(dim * dim)
                .map(|block| block.chunks(dim).map(<[f64]>::to_vec).collect())
                .collect(),
        };
        emit(out, ZodmcTarget(make_gmm(&spec).map_err(lib)?))
    })
}

/// The four-mode 2D benchmark mixture. A positive `radius` rescales the means
/// so the `(0, 11)` mode sits at `(0, radius)`; pass 0 for the unscaled mixture.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn zodmc_target_benchmark_2d(radius: f64, out: *mut *mut ZodmcTarget) -> ZodmcStatus {
    guard(|| {
        let spec = if radius > 0.0 {
            GmmSpec::benchmark_2d_at_radius(radius)
        } else {
            GmmSpec::benchmark_2d()
        };
        emit(out, ZodmcTarget(make_gmm(&spec).map_err(lib)?))
    })
}

/// Müller-Brown surface at inverse temperature `beta`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn zodmc_target_mueller_brown(
    beta: f64,
    standard_form: bool,
    out: *mut *mut ZodmcTarget,
) -> ZodmcStatus {
    guard(|| {
        let params = MuellerBrownParams {
            beta,
            mueller_standard_form: standard_form,
            ..Default::default()
        };
        emit(out, ZodmcTarget(make_mueller_brown(&params).map_err(lib)?))
    })
}

struct Callback {
    f: extern "C" fn(*const f64, usize, *mut c_void) -> f64,
    user: *mut c_void,
}

// the caller promises thread safety of the callback and its user data
unsafe impl Send for Callback {}
unsafe impl Sync for Callback {}

/// Target defined by a caller-supplied potential.
///
/// # Safety
/// `f` must be callable concurrently from several threads with `user` for as
/// long as the target lives.
#[no_mangle]
pub unsafe extern "C" fn zodmc_target_from_callback(
    dim: usize,
    f: ZodmcPotentialFn,
    user: *mut c_void,
    out: *mut *mut ZodmcTarget,
) -> ZodmcStatus {
    guard(|| {
        let f = f.ok_or_else(|| null("callback"))?;
        let cb = Callback { f, user };
        let target = Target::from_potential("callback", dim, move |x: &[f64]| {
            let cb = &cb;
            (cb.f)(x.as_ptr(), x.len(), cb.user)
        })
        .map_err(lib)?;
        emit(out, ZodmcTarget(target))
    })
}

/// Adds `height * floor(|x|)` on `inner < |x| < outer` to a target's potential.
///
/// # Safety
/// `base` must be a live target handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn zodmc_target_annulus(
    base: *const ZodmcTarget,
    inner: f64,
    outer: f64,
    height: f64,
    out: *mut *mut ZodmcTarget,
) -> ZodmcStatus {
    guard(|| {
        let base = base.as_ref().ok_or_else(|| null("target"))?;
        emit(
            out,
            ZodmcTarget(apply_annulus_penalty(&base.0, inner, outer, height).map_err(lib)?),
        )
    })
}

/// Dimension of a target; 0 for a null handle.
///
/// # Safety
/// `target` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zodmc_target_dim(target: *const ZodmcTarget) -> usize {
    target.as_ref().map_or(0, |t| t.0.dim())
}

/// Evaluates the potential at `x`.
///
/// # Safety
/// `x` must hold `dim` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn zodmc_target_potential(
    target: *const ZodmcTarget,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> ZodmcStatus {
    guard(|| {
        let t = target.as_ref().ok_or_else(|| null("target"))?;
        let x = slice(x, dim, "x")?;
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        *out = t.0.eval_potential(x, &QueryLedger::new(), Phase::Baseline).map_err(lib)?;
        Ok(())
    })
}

/// # Safety
/// `target` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zodmc_target_free(target: *mut ZodmcTarget) {
    if !target.is_null() {
        drop(Box::from_raw(target));
    }
}

/// Defaults: exponential-decay schedule with `T = 2`, `N = 25`, `delta = 5e-3`,
/// 2200 proposals per score estimate, 1000 samples.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn zodmc_run_config_default(out: *mut ZodmcRunConfig) -> ZodmcStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        *out = ZodmcRunConfig {
            schedule_kind: ZodmcScheduleKind::ExpDecay,
            horizon: 2.0,
            steps: 25,
            delta: 5e-3,
            policy_kind: ZodmcPolicyKind::ProposalBudget,
            policy_value: 2200,
            batch_size: 1000,
            seed: 0,
            workers: 0,
            max_total_queries: 0,
        };
        Ok(())
    })
}

fn to_zodmc_config(c: &ZodmcRunConfig) -> Result<ZodmcConfig, Error> {
    let kind = match c.schedule_kind {
        ZodmcScheduleKind::Constant => ScheduleKind::Constant,
        ZodmcScheduleKind::Linear => ScheduleKind::Linear,
        ZodmcScheduleKind::ExpDecay => ScheduleKind::ExpDecay,
    };
    let schedule = build_schedule(kind, c.horizon, c.steps, c.delta)?;
    let policy = match c.policy_kind {
        ZodmcPolicyKind::Fixed => SampleCountPolicy::Fixed {
            n: c.policy_value as usize,
        },
        ZodmcPolicyKind::ProposalBudget => SampleCountPolicy::ProposalBudget {
            proposals: c.policy_value,
        },
    };
    let mut cfg = ZodmcConfig::new(schedule, policy, c.batch_size, c.seed);
    cfg.workers = c.workers;
    cfg.max_total_queries = (c.max_total_queries > 0).then_some(c.max_total_queries);
    Ok(cfg)
}

/// Draws `config->batch_size` samples.
///
/// # Safety
/// Pointers must be valid; `target` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn zodmc_sample(
    target: *const ZodmcTarget,
    config: *const ZodmcRunConfig,
    out: *mut *mut ZodmcBatch,
) -> ZodmcStatus {
    guard(|| {
        let t = target.as_ref().ok_or_else(|| null("target"))?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let cfg = to_zodmc_config(c).map_err(lib)?;
        let batch = run_zodmc(&t.0, &cfg, &QueryLedger::new()).map_err(lib)?;
        emit(out, ZodmcBatch(batch))
    })
}

/// Unadjusted Langevin from the origin with finite-difference gradients.
///
/// # Safety
/// Pointers must be valid; `target` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn zodmc_ula(
    target: *const ZodmcTarget,
    step: f64,
    n_steps: usize,
    n_chains: usize,
    seed: u64,
    out: *mut *mut ZodmcBatch,
) -> ZodmcStatus {
    guard(|| {
        let t = target.as_ref().ok_or_else(|| null("target"))?;
        let cfg = UlaConfig {
            step,
            n_steps,
            n_chains,
            init: UlaInit::Origin,
            ..Default::default()
        };
        let batch = run_ula(&t.0, &cfg, &QueryLedger::new(), seed).map_err(lib)?;
        emit(out, ZodmcBatch(batch))
    })
}

/// Number of points; 0 for a null handle.
///
/// # Safety
/// `batch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zodmc_batch_len(batch: *const ZodmcBatch) -> usize {
    batch.as_ref().map_or(0, |b| b.0.points.len())
}

/// Point dimension; 0 for a null handle.
///
/// # Safety
/// `batch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zodmc_batch_dim(batch: *const ZodmcBatch) -> usize {
    batch.as_ref().map_or(0, |b| b.0.dim)
}

/// Total potential evaluations the run made; 0 for a null handle.
///
/// # Safety
/// `batch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zodmc_batch_queries(batch: *const ZodmcBatch) -> u64 {
    batch.as_ref().map_or(0, |b| b.0.ledger_snapshot.zeroth_order_count)
}

/// Whether the run stopped early at its query cap; false for a null handle.
///
/// # Safety
/// `batch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zodmc_batch_truncated(batch: *const ZodmcBatch) -> bool {
    batch.as_ref().is_some_and(|b| b.0.truncated)
}

/// Copies the points row-major into `out`, which holds `out_len` doubles.
///
/// # Safety
/// `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn zodmc_batch_points(batch: *const ZodmcBatch, out: *mut f64, out_len: usize) -> ZodmcStatus {
    guard(|| {
        let b = batch.as_ref().ok_or_else(|| null("batch"))?;
        let need = b.0.points.len() * b.0.dim;
        if out_len < need {
            return Err((
                ZodmcStatus::InvalidArgument,
                format!("buffer holds {out_len} doubles, need {need}"),
            ));
        }
        if need == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (row, p) in dst.chunks_mut(b.0.dim).zip(&b.0.points) {
            row.copy_from_slice(p);
        }
        Ok(())
    })
}

/// Writes the points as CSV with header `x0,...`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn zodmc_batch_write_csv(batch: *const ZodmcBatch, path: *const c_char) -> ZodmcStatus {
    guard(|| {
        let b = batch.as_ref().ok_or_else(|| null("batch"))?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (ZodmcStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        b.0.write_csv(Path::new(path)).map_err(lib)
    })
}

/// # Safety
/// `batch` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zodmc_batch_free(batch: *mut ZodmcBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}
