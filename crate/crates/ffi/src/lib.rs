//! C ABI over the noisy-cg solvers.
//!
//! Every function returns an [`NcgStatus`]; on failure the message is kept per
//! thread and can be read with [`ncg_last_error_message`]. Handles are opaque
//! and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use noisy_cg::linops::{make_problem, make_spectrum, DenseMatrix, LinearOperator, QuadraticProblem, SpectrumSpec};
use noisy_cg::noise::{NoiseKind, NoiseModel, VectorNoise};
use noisy_cg::solvers::{cg_solve, nesterov_solve, SolverTrace, StopRule, TerminalStatus};
use noisy_cg::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    DenseCapExceeded = 4,
    NotSymmetric = 5,
    NonFinite = 6,
    OutOfRange = 7,
    Panic = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcgNoiseKind {
    Exact = 0,
    AdversarialB = 1,
    StochasticB = 2,
    Matrix = 3,
    CombinedAdversarial = 4,
    CombinedStochastic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcgStopKind {
    MaxIter = 0,
    /// Stops when the search direction norm drops below `eps`.
    GradNorm = 1,
    /// Uses the noise model's own deltas.
    Nemirovsky = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcgTerminal {
    MaxIter = 0,
    ToleranceReached = 1,
    NemirovskyStop = 2,
    BreakdownDetected = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcgRecord {
    pub k: usize,
    pub f_true: f64,
    pub f_gap: f64,
    pub f_scaled: f64,
    pub residual_norm: f64,
    pub arg_error: f64,
    pub step_alpha: f64,
    pub noisy_residual_norm: f64,
}

pub struct NcgProblem(QuadraticProblem);
pub struct NcgNoise(NoiseModel);
pub struct NcgTrace(SolverTrace);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> NcgStatus {
    match e {
        Error::DimensionMismatch { .. } => NcgStatus::DimensionMismatch,
        Error::DenseCapExceeded { .. } => NcgStatus::DenseCapExceeded,
        Error::NotSymmetric { .. } => NcgStatus::NotSymmetric,
        Error::NonFinite { .. } => NcgStatus::NonFinite,
        Error::Context { source, .. } => status_of(source),
        Error::InvalidArgument(_) | Error::Config { .. } | Error::ConfigNotFound(_) => NcgStatus::InvalidArgument,
        Error::TraceTooShort { .. } | Error::Io(_) => NcgStatus::Internal,
    }
}

enum Fail {
    Status(NcgStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null() -> Fail {
    Fail::Status(NcgStatus::NullPointer, "null pointer argument".into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NcgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            NcgStatus::Ok
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside noisy-cg".into());
            NcgStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

/// Copies the calling thread's last error message into `buf` (NUL terminated,
/// truncated to `len`). Returns the full message length without the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ncg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Fills `out[0..n]` with a geometric spectrum from `lambda_max` down to
/// `lambda_max / condition`.
///
/// # Safety
/// `out` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ncg_make_spectrum(n: usize, lambda_max: f64, condition: f64, out: *mut f64) -> NcgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let eig = make_spectrum(&SpectrumSpec::geometric_with_condition(n, lambda_max, condition))?;
        ptr::copy_nonoverlapping(eig.as_ptr(), out, n);
        Ok(())
    })
}

/// Diagonal problem `A = diag(eig)` with minimizer `x_star` and `x0 = 0`.
///
/// # Safety
/// `eig` and `x_star` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ncg_problem_new_diagonal(
    eig: *const f64,
    x_star: *const f64,
    n: usize,
    out: *mut *mut NcgProblem,
) -> NcgStatus {
    guard(|| {
        let a = LinearOperator::diagonal(slice(eig, n)?.to_vec())?;
        let p = QuadraticProblem::from_solution(a, slice(x_star, n)?.to_vec(), vec![0.0; n])?;
        put(out, NcgProblem(p))
    })
}

/// Dense symmetric problem from a row-major `n × n` matrix.
///
/// # Safety
/// `a` must point to `n * n` doubles, `x_star` to `n`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ncg_problem_new_dense(
    a: *const f64,
    x_star: *const f64,
    n: usize,
    out: *mut *mut NcgProblem,
) -> NcgStatus {
    guard(|| {
        let len = n
            .checked_mul(n)
            .ok_or_else(|| Fail::Status(NcgStatus::InvalidArgument, "n * n overflows".into()))?;
        let m = DenseMatrix::from_row_major(n, slice(a, len)?.to_vec())?;
        let op = LinearOperator::dense_symmetric(m)?;
        let p = QuadraticProblem::from_solution(op, slice(x_star, n)?.to_vec(), vec![0.0; n])?;
        put(out, NcgProblem(p))
    })
}

/// Diagonal problem whose minimizer is `r` times a seeded random unit vector.
///
/// # Safety
/// `eig` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ncg_problem_new_random(
    eig: *const f64,
    n: usize,
    r: f64,
    seed: u64,
    out: *mut *mut NcgProblem,
) -> NcgStatus {
    guard(|| {
        let a = LinearOperator::diagonal(slice(eig, n)?.to_vec())?;
        put(out, NcgProblem(make_problem(a, r, seed)?))
    })
}

/// # Safety
/// `p` must be null or a handle from `ncg_problem_new_*` not freed before.
#[no_mangle]
pub unsafe extern "C" fn ncg_problem_free(p: *mut NcgProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live problem handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ncg_problem_dim(p: *const NcgProblem, out: *mut usize) -> NcgStatus {
    guard(|| {
        let p = handle(p)?;
        *out.as_mut().ok_or_else(null)? = p.0.dim();
        Ok(())
    })
}

/// # Safety
/// `p` must be a live problem handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ncg_problem_f_star(p: *const NcgProblem, out: *mut f64) -> NcgStatus {
    guard(|| {
        let p = handle(p)?;
        *out.as_mut().ok_or_else(null)? = p.0.f_star();
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ncg_noise_new(
    kind: NcgNoiseKind,
    delta_a: f64,
    delta_b: f64,
    seed: u64,
    out: *mut *mut NcgNoise,
) -> NcgStatus {
    guard(|| {
        let kind = match kind {
            NcgNoiseKind::Exact => NoiseKind::Exact,
            NcgNoiseKind::AdversarialB => NoiseKind::AdversarialB { delta_b },
            NcgNoiseKind::StochasticB => NoiseKind::StochasticB { delta_b },
            NcgNoiseKind::Matrix => NoiseKind::Matrix { delta_a },
            NcgNoiseKind::CombinedAdversarial => NoiseKind::Combined {
                delta_a,
                delta_b,
                vector: VectorNoise::Adversarial,
            },
            NcgNoiseKind::CombinedStochastic => NoiseKind::Combined {
                delta_a,
                delta_b,
                vector: VectorNoise::Stochastic,
            },
        };
        put(out, NcgNoise(NoiseModel::new(kind, seed)?))
    })
}

/// # Safety
/// `m` must be null or a handle from `ncg_noise_new` not freed before.
#[no_mangle]
pub unsafe extern "C" fn ncg_noise_free(m: *mut NcgNoise) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Runs CG for at most `max_iter` iterations. `eps` is only read for
/// `NCG_STOP_KIND_GRAD_NORM`.
///
/// # Safety
/// `p` and `m` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ncg_cg_solve(
    p: *const NcgProblem,
    m: *const NcgNoise,
    stop: NcgStopKind,
    eps: f64,
    max_iter: usize,
    out: *mut *mut NcgTrace,
) -> NcgStatus {
    guard(|| {
        let (p, m) = (handle(p)?, handle(m)?);
        let rule = match stop {
            NcgStopKind::MaxIter => StopRule::MaxIter(max_iter),
            NcgStopKind::GradNorm => StopRule::GradNorm(eps),
            NcgStopKind::Nemirovsky => StopRule::Nemirovsky {
                delta_a: m.0.kind().delta_a(),
                delta_b: m.0.kind().delta_b(),
            },
        };
        put(out, NcgTrace(cg_solve(&p.0, &m.0, &rule, max_iter)?))
    })
}

/// # Safety
/// `p` and `m` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ncg_nesterov_solve(
    p: *const NcgProblem,
    m: *const NcgNoise,
    max_iter: usize,
    out: *mut *mut NcgTrace,
) -> NcgStatus {
    guard(|| {
        let (p, m) = (handle(p)?, handle(m)?);
        put(out, NcgTrace(nesterov_solve(&p.0, &m.0, max_iter)?))
    })
}

/// Number of records, including the starting point.
///
/// # Safety
/// `t` must be a live trace handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ncg_trace_len(t: *const NcgTrace, out: *mut usize) -> NcgStatus {
    guard(|| {
        let t = handle(t)?;
        *out.as_mut().ok_or_else(null)? = t.0.records.len();
        Ok(())
    })
}

/// # Safety
/// `t` must be a live trace handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ncg_trace_status(t: *const NcgTrace, out: *mut NcgTerminal) -> NcgStatus {
    guard(|| {
        let t = handle(t)?;
        *out.as_mut().ok_or_else(null)? = match t.0.status {
            TerminalStatus::MaxIter => NcgTerminal::MaxIter,
            TerminalStatus::ToleranceReached => NcgTerminal::ToleranceReached,
            TerminalStatus::NemirovskyStop => NcgTerminal::NemirovskyStop,
            TerminalStatus::BreakdownDetected => NcgTerminal::BreakdownDetected,
        };
        Ok(())
    })
}

/// # Safety
/// `t` must be a live trace handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ncg_trace_record(t: *const NcgTrace, index: usize, out: *mut NcgRecord) -> NcgStatus {
    guard(|| {
        let t = handle(t)?;
        let r = t.0.records.get(index).ok_or_else(|| {
            Fail::Status(
                NcgStatus::OutOfRange,
                format!("record {index} out of range (len {})", t.0.records.len()),
            )
        })?;
        *out.as_mut().ok_or_else(null)? = NcgRecord {
            k: r.k,
            f_true: r.f_true,
            f_gap: r.f_gap,
            f_scaled: r.f_scaled,
            residual_norm: r.residual_norm,
            arg_error: r.arg_error,
            step_alpha: r.step_alpha,
            noisy_residual_norm: r.noisy_residual_norm,
        };
        Ok(())
    })
}

/// Copies the final iterate into `out[0..len]`; `len` must equal the problem dimension.
///
/// # Safety
/// `t` must be a live trace handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ncg_trace_final_x(t: *const NcgTrace, out: *mut f64, len: usize) -> NcgStatus {
    guard(|| {
        let t = handle(t)?;
        if len != t.0.final_x.len() {
            return Err(Error::DimensionMismatch {
                expected: t.0.final_x.len(),
                got: len,
            }
            .into());
        }
        if out.is_null() {
            return Err(null());
        }
        ptr::copy_nonoverlapping(t.0.final_x.as_ptr(), out, len);
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle from a solve call not freed before.
#[no_mangle]
pub unsafe extern "C" fn ncg_trace_free(t: *mut NcgTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
