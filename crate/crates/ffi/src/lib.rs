//! C ABI over `passk-lab`.
//!
//! Policies and verifiers are opaque heap handles created by the
//! `passk_*_new`/constructor functions and released with the matching
//! `_free`. Every fallible call returns a [`PasskStatus`] and writes its
//! result through an out-pointer; on failure `passk_last_error_message`
//! describes the error for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use passk_lab::estimators;
use passk_lab::objectives;
use passk_lab::{Error, ParamVector, Policy, PolicyShape, Trajectory, TrajectorySet, Verifier};

/// Status codes. 1 to 4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PasskStatus {
    Ok = 0,
    Io = 1,
    InvalidArgument = 2,
    Capacity = 3,
    Validation = 4,
    NullPointer = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque policy handle.
pub struct PasskPolicy(Policy);

/// Opaque verifier handle.
pub struct PasskVerifier(Verifier);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn from_error(e: Error) -> PasskStatus {
    let status = match e.exit_code() {
        1 => PasskStatus::Io,
        3 => PasskStatus::Capacity,
        4 => PasskStatus::Validation,
        _ => PasskStatus::InvalidArgument,
    };
    set_error(e.to_string());
    status
}

enum Fail {
    Lib(Error),
    Null(&'static str),
    Buffer { needed: usize, given: usize },
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PasskStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PasskStatus::Ok,
        Ok(Err(Fail::Lib(e))) => from_error(e),
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("{name} is null"));
            PasskStatus::NullPointer
        }
        Ok(Err(Fail::Buffer { needed, given })) => {
            set_error(format!(
                "output buffer holds {given} values, {needed} needed"
            ));
            PasskStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic".into());
            PasskStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(name))
}

unsafe fn write<T>(out: *mut T, value: T, name: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_vec(out: *mut f64, len: usize, values: &[f64]) -> Result<(), Fail> {
    if len < values.len() {
        return Err(Fail::Buffer {
            needed: values.len(),
            given: len,
        });
    }
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn new_policy(
    shape: PolicyShape,
    logits: *const f64,
    len: usize,
    out: *mut *mut PasskPolicy,
) -> PasskStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let params = ParamVector::new(slice(logits, len, "logits")?.to_vec())?;
        let policy = Policy::new(shape, params)?;
        out.write(Box::into_raw(Box::new(PasskPolicy(policy))));
        Ok(())
    })
}

/// Categorical policy over `len` answers with the given logits.
///
/// # Safety
/// `logits` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn passk_policy_categorical(
    logits: *const f64,
    len: usize,
    out: *mut *mut PasskPolicy,
) -> PasskStatus {
    new_policy(PolicyShape::Categorical { answers: len }, logits, len, out)
}

/// Autoregressive policy; `len` must equal `vocab * (vocab^horizon - 1) / (vocab - 1)`
/// (one logit row per prefix, shallow prefixes first, lexicographic within a depth).
///
/// # Safety
/// `logits` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn passk_policy_autoregressive(
    vocab: usize,
    horizon: usize,
    logits: *const f64,
    len: usize,
    out: *mut *mut PasskPolicy,
) -> PasskStatus {
    new_policy(
        PolicyShape::Autoregressive { vocab, horizon },
        logits,
        len,
        out,
    )
}

/// Releases a policy. Null is ignored.
///
/// # Safety
/// `policy` must come from a constructor above and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn passk_policy_free(policy: *mut PasskPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// # Safety
/// `policy` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn passk_policy_param_count(
    policy: *const PasskPolicy,
    out: *mut usize,
) -> PasskStatus {
    guard(|| write(out, handle(policy, "policy")?.0.params().len(), "out"))
}

/// Probability of the trajectory `tokens[0..len]`.
///
/// # Safety
/// `policy` must be a live handle, `tokens` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn passk_policy_prob(
    policy: *const PasskPolicy,
    tokens: *const usize,
    len: usize,
    out: *mut f64,
) -> PasskStatus {
    guard(|| {
        let y = Trajectory::new(slice(tokens, len, "tokens")?.to_vec());
        write(out, handle(policy, "policy")?.0.prob(&y)?, "out")
    })
}

/// Gradient of `log prob(tokens)` with respect to all logits, written to
/// `out[0..param_count]`.
///
/// # Safety
/// `policy` must be a live handle, `tokens` must point to `len` values and
/// `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn passk_policy_log_prob_grad(
    policy: *const PasskPolicy,
    tokens: *const usize,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> PasskStatus {
    guard(|| {
        let y = Trajectory::new(slice(tokens, len, "tokens")?.to_vec());
        let g = handle(policy, "policy")?.0.log_prob_grad(&y)?;
        write_vec(out, out_len, g.as_slice())
    })
}

/// Verifier accepting `count` trajectories of `horizon` tokens each, stored
/// back to back in `tokens`.
///
/// # Safety
/// `tokens` must point to `count * horizon` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn passk_verifier_new(
    tokens: *const usize,
    count: usize,
    horizon: usize,
    out: *mut *mut PasskVerifier,
) -> PasskStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let total = count
            .checked_mul(horizon)
            .ok_or_else(|| Error::OutOfRange("count * horizon overflows".into()))?;
        if count > 0 && horizon == 0 {
            return Err(Error::OutOfRange("horizon must be at least 1".into()).into());
        }
        let flat = slice(tokens, total, "tokens")?;
        let set: TrajectorySet = flat
            .chunks(horizon.max(1))
            .map(|c| Trajectory::new(c.to_vec()))
            .collect();
        out.write(Box::into_raw(Box::new(PasskVerifier(Verifier::new(set)))));
        Ok(())
    })
}

/// Releases a verifier. Null is ignored.
///
/// # Safety
/// `verifier` must come from `passk_verifier_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn passk_verifier_free(verifier: *mut PasskVerifier) {
    if !verifier.is_null() {
        drop(Box::from_raw(verifier));
    }
}

/// Exact `J1`, the probability that one sample is accepted.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn passk_j1_exact(
    policy: *const PasskPolicy,
    verifier: *const PasskVerifier,
    out: *mut f64,
) -> PasskStatus {
    guard(|| {
        let v = objectives::j1_exact(
            &handle(policy, "policy")?.0,
            &handle(verifier, "verifier")?.0,
        )?;
        write(out, v, "out")
    })
}

/// Exact `grad J_k`, written to `out[0..param_count]`.
///
/// # Safety
/// Both handles must be live; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn passk_grad_jk_exact(
    policy: *const PasskPolicy,
    verifier: *const PasskVerifier,
    k: usize,
    out: *mut f64,
    out_len: usize,
) -> PasskStatus {
    guard(|| {
        let g = objectives::grad_jk_exact(
            &handle(policy, "policy")?.0,
            &handle(verifier, "verifier")?.0,
            k,
        )?;
        write_vec(out, out_len, g.as_slice())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn passk_jk_from_j1(j1: f64, k: usize, out: *mut f64) -> PasskStatus {
    guard(|| write(out, objectives::jk_from_j1(j1, k)?, "out"))
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn passk_alpha(j1: f64, k: usize, out: *mut f64) -> PasskStatus {
    guard(|| write(out, objectives::alpha(j1, k)?, "out"))
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn passk_gap(p: f64, k: usize, out: *mut f64) -> PasskStatus {
    guard(|| write(out, objectives::gap(p, k)?, "out"))
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn passk_zero_signal_prob(j1: f64, m: usize, out: *mut f64) -> PasskStatus {
    guard(|| write(out, estimators::zero_signal_prob(j1, m)?, "out"))
}

/// Unbiased pass@k from `c` correct answers among `n` samples.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn passk_eval(n: usize, c: usize, k: usize, out: *mut f64) -> PasskStatus {
    guard(|| write(out, estimators::passk_eval(n, c, k)?, "out"))
}

/// Message for the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn passk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn passk_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => panic!("version contains NUL"),
        };
    VERSION.as_ptr()
}
