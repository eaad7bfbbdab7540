//! C ABI for greenunit.
//!
//! Conventions:
//!
//! - Every fallible function returns a [`GuStatus`]; results come back
//!   through out-pointers that are written only on success.
//! - On failure the message is kept per thread and can be copied out with
//!   [`gu_last_error_message`].
//! - Handles ([`GuFactors`], [`GuStore`]) are opaque and released with their
//!   `_free` function. Strings returned by the library are released with
//!   [`gu_string_free`].
//! - Panics never cross the boundary; they surface as `GU_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use greenunit::config::Config;
use greenunit::emissions::{self, UnitDeltas};
use greenunit::model::{validate_factors, EmissionFactors};
use greenunit::report::{self, Format, ReportSpec};
use greenunit::store::Store;
use greenunit::{stats, Error};

/// Status codes shared by every function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Domain = 3,
    InsufficientData = 4,
    NotFound = 5,
    Io = 6,
    Parse = 7,
    ProviderUnavailable = 8,
    Browser = 9,
    Condition = 10,
    InvalidUtf8 = 11,
    Panic = 12,
}

/// Emission factors. Create with `gu_factors_default`, release with `gu_factors_free`.
pub struct GuFactors {
    inner: EmissionFactors,
}

/// A results store rooted at a directory.
pub struct GuStore {
    inner: Store,
}

/// Plain copy of every emission factor.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GuFactorValues {
    pub grid_intensity: f64,
    pub joule_to_kwh: f64,
    pub transfer_intensity_base: f64,
    pub base_year: i32,
    pub halving_period_years: f64,
    pub assessment_year: i32,
    pub device_embodied_total: f64,
    pub device_lifetime_seconds: f64,
    pub resource_share: f64,
    pub embodied_to_use_ratio: f64,
}

impl From<&EmissionFactors> for GuFactorValues {
    fn from(f: &EmissionFactors) -> Self {
        Self {
            grid_intensity: f.grid_intensity,
            joule_to_kwh: f.joule_to_kwh,
            transfer_intensity_base: f.transfer_intensity_base,
            base_year: f.base_year,
            halving_period_years: f.halving_period_years,
            assessment_year: f.assessment_year,
            device_embodied_total: f.device_embodied_total,
            device_lifetime_seconds: f.device_lifetime_seconds,
            resource_share: f.resource_share,
            embodied_to_use_ratio: f.embodied_to_use_ratio,
        }
    }
}

impl From<&GuFactorValues> for EmissionFactors {
    fn from(v: &GuFactorValues) -> Self {
        Self {
            grid_intensity: v.grid_intensity,
            joule_to_kwh: v.joule_to_kwh,
            transfer_intensity_base: v.transfer_intensity_base,
            base_year: v.base_year,
            halving_period_years: v.halving_period_years,
            assessment_year: v.assessment_year,
            device_embodied_total: v.device_embodied_total,
            device_lifetime_seconds: v.device_lifetime_seconds,
            resource_share: v.resource_share,
            embodied_to_use_ratio: v.embodied_to_use_ratio,
        }
    }
}

/// Baseline-minus-variant differences for one functional unit.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GuUnitDeltas {
    pub energy_j: f64,
    pub data_mb: f64,
    pub duration_s: f64,
}

/// Emission components in gCO2e.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GuEmissionEntry {
    pub use_user_g: f64,
    pub use_network_g: f64,
    pub embodied_user_g: f64,
    pub embodied_network_g: f64,
    pub total_g: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GuProjection {
    pub population: f64,
    pub sessions_per_year: f64,
    pub per_session_saving_g: f64,
    pub annual_saving_t: f64,
    pub flight_equivalents: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GuTestVerdict {
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
    pub degenerate: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> GuStatus {
    match e {
        Error::InsufficientData(_) => GuStatus::InsufficientData,
        Error::Domain(_) => GuStatus::Domain,
        Error::InvalidInput(_) => GuStatus::InvalidInput,
        Error::NotFound(_) => GuStatus::NotFound,
        Error::ProviderUnavailable { .. } => GuStatus::ProviderUnavailable,
        Error::Browser(_) => GuStatus::Browser,
        Error::Condition(_) => GuStatus::Condition,
        Error::Io { .. } => GuStatus::Io,
        Error::Parse { .. } => GuStatus::Parse,
    }
}

struct Fail(GuStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording failures and trapping panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GuStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GuStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    // SAFETY: callers pass pointers obtained from this library or valid
    // caller-owned memory; null is rejected here.
    unsafe { p.as_ref() }.ok_or_else(|| Fail(GuStatus::NullPointer, format!("{name} is null")))
}

fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: as for `non_null`, for a writable out-parameter.
    unsafe { p.as_mut() }.ok_or_else(|| Fail(GuStatus::NullPointer, format!("{name} is null")))
}

fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(GuStatus::NullPointer, format!("{name} is null")));
    }
    // SAFETY: non-null, and the caller guarantees NUL termination.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(GuStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gu_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf`.
///
/// Returns the message length including the terminating NUL, or 0 when the
/// last call succeeded. At most `len` bytes are written and the copy is
/// always NUL-terminated when `len > 0`.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gu_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            // SAFETY: `buf` has room for `len >= n` bytes per the contract.
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n - 1) = 0;
            }
        }
        bytes.len()
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gu_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: produced by `CString::into_raw` in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// New handle holding the default factors.
#[no_mangle]
pub extern "C" fn gu_factors_default() -> *mut GuFactors {
    Box::into_raw(Box::new(GuFactors {
        inner: EmissionFactors::default(),
    }))
}

/// Factors from the `[factors]` table of a config file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gu_factors_from_config(path: *const c_char, out: *mut *mut GuFactors) -> GuStatus {
    guard(|| {
        let path = text(path, "path")?;
        let out = out_ptr(out, "out")?;
        let cfg = Config::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(GuFactors { inner: cfg.factors }));
        Ok(())
    })
}

/// # Safety
/// `f` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn gu_factors_free(f: *mut GuFactors) {
    if !f.is_null() {
        // SAFETY: produced by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(f) });
    }
}

/// # Safety
/// `f` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gu_factors_get(f: *const GuFactors, out: *mut GuFactorValues) -> GuStatus {
    guard(|| {
        *out_ptr(out, "out")? = GuFactorValues::from(&non_null(f, "factors")?.inner);
        Ok(())
    })
}

/// Replaces every factor after validation; the handle is unchanged on error.
///
/// # Safety
/// `f` must be a live handle and `values` readable.
#[no_mangle]
pub unsafe extern "C" fn gu_factors_set(f: *mut GuFactors, values: *const GuFactorValues) -> GuStatus {
    guard(|| {
        let candidate = EmissionFactors::from(non_null(values, "values")?);
        validate_factors(&candidate).into_result()?;
        out_ptr(f, "factors")?.inner = candidate;
        Ok(())
    })
}

/// Grid carbon intensity per joule, gCO2e/J.
///
/// # Safety
/// `f` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gu_c_elec(f: *const GuFactors, out: *mut f64) -> GuStatus {
    guard(|| {
        *out_ptr(out, "out")? = emissions::c_elec(&non_null(f, "factors")?.inner);
        Ok(())
    })
}

/// Network transfer intensity at the assessment year, µgCO2e/MB.
///
/// # Safety
/// `f` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gu_transfer_intensity(f: *const GuFactors, out: *mut f64) -> GuStatus {
    guard(|| {
        *out_ptr(out, "out")? = emissions::transfer_intensity(&non_null(f, "factors")?.inner)?;
        Ok(())
    })
}

/// Emission components for one set of deltas.
///
/// # Safety
/// `f` must be a live handle, `deltas` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gu_emission_breakdown(
    f: *const GuFactors,
    deltas: *const GuUnitDeltas,
    out: *mut GuEmissionEntry,
) -> GuStatus {
    guard(|| {
        let d = non_null(deltas, "deltas")?;
        let e = emissions::emission_breakdown(
            &UnitDeltas {
                energy_j: d.energy_j,
                data_mb: d.data_mb,
                duration_s: d.duration_s,
            },
            &non_null(f, "factors")?.inner,
        )?;
        *out_ptr(out, "out")? = GuEmissionEntry {
            use_user_g: e.use_user_g,
            use_network_g: e.use_network_g,
            embodied_user_g: e.embodied_user_g,
            embodied_network_g: e.embodied_network_g,
            total_g: e.total_g,
        };
        Ok(())
    })
}

/// Annual saving of a per-session delta across a population.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gu_scale_projection(
    per_session_g: f64,
    population: f64,
    sessions_per_year: f64,
    flight_rt_tonnes: f64,
    out: *mut GuProjection,
) -> GuStatus {
    guard(|| {
        let p = report::scale_projection(per_session_g, population, sessions_per_year, flight_rt_tonnes)?;
        *out_ptr(out, "out")? = GuProjection {
            population: p.population,
            sessions_per_year: p.sessions_per_year,
            per_session_saving_g: p.per_session_saving_g,
            annual_saving_t: p.annual_saving_t,
            flight_equivalents: p.flight_equivalents,
        };
        Ok(())
    })
}

fn slice<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(GuStatus::NullPointer, format!("{name} is null")));
    }
    // SAFETY: non-null and the caller guarantees `n` readable values.
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

/// Two-sided Welch t-test of `a` against `b`.
///
/// # Safety
/// `a` and `b` must point to `na` and `nb` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gu_welch_t_test(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    alpha: f64,
    out: *mut GuTestVerdict,
) -> GuStatus {
    guard(|| {
        let v = stats::welch_t_test(slice(a, na, "a")?, slice(b, nb, "b")?, alpha)?;
        *out_ptr(out, "out")? = GuTestVerdict {
            statistic: v.statistic,
            p_value: v.p_value,
            alpha: v.alpha,
            significant: v.significant,
            degenerate: v.degenerate,
        };
        Ok(())
    })
}

/// Opens a results store. The directory need not exist yet.
///
/// # Safety
/// `root` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gu_store_open(root: *const c_char, out: *mut *mut GuStore) -> GuStatus {
    guard(|| {
        let root = text(root, "root")?;
        *out_ptr(out, "out")? = Box::into_raw(Box::new(GuStore {
            inner: Store::new(root),
        }));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn gu_store_free(s: *mut GuStore) {
    if !s.is_null() {
        // SAFETY: produced by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(s) });
    }
}

/// Renders the comparison and emission report of two stored series.
///
/// `baseline` and `variant` are `service[:condition]` references where the
/// condition is a preset name or label. `format` is one of `plain`, `csv`,
/// `json` or `markdown`. On success `*out` receives a string to release with
/// [`gu_string_free`].
///
/// # Safety
/// Handles must be live, strings NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gu_store_compare(
    store: *const GuStore,
    factors: *const GuFactors,
    baseline: *const c_char,
    variant: *const c_char,
    format: *const c_char,
    out: *mut *mut c_char,
) -> GuStatus {
    guard(|| {
        let store = &non_null(store, "store")?.inner;
        let factors = non_null(factors, "factors")?.inner;
        let presets = Config::default();
        let mut spec = ReportSpec::new(
            presets.series_ref(text(baseline, "baseline")?)?,
            presets.series_ref(text(variant, "variant")?)?,
        );
        spec.factors = factors;
        spec.validate()?;
        let format: Format = text(format, "format")?.parse()?;
        let doc = report::render(&report::build_report(&spec, store)?, format)?;
        let c = CString::new(doc).map_err(|_| Fail(GuStatus::Parse, "report contains a NUL byte".into()))?;
        *out_ptr(out, "out")? = c.into_raw();
        Ok(())
    })
}
