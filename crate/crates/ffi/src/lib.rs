//! C interface to `hc_eqtl`.
//!
//! Matrices cross the boundary as row-major `double` buffers and live behind
//! the opaque [`HcMatrix`] handle. Every fallible call returns an
//! [`HcStatus`]; on failure a message is kept per thread and can be copied out
//! with [`hc_last_error_message`]. Panics are caught and reported as
//! [`HcStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hc_eqtl::evaluation::{self, Classification};
use hc_eqtl::hc::{self, HcGrid, StandardizeOptions};
use hc_eqtl::lors::{self, LorsOptions, LorsSolution};
use hc_eqtl::marginal::{self, MarginalOptions, MarginalScreen};
use hc_eqtl::svt;
use hc_eqtl::Error;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    DegenerateDesign = 5,
    NotConverged = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcGridKind {
    Restricted = 0,
    Unrestricted = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcClass {
    Cis = 0,
    SemiCis = 1,
    Trans = 2,
    Unknown = 3,
}

/// Dense matrix of doubles.
pub struct HcMatrix(DMatrix<f64>);

/// Result of a joint sparse plus low-rank fit.
pub struct HcLorsFit(LorsSolution);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HcLorsSummary {
    pub iterations: usize,
    pub rank_l: usize,
    pub nnz_b: usize,
    pub converged: bool,
    pub objective: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(HcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NonFinite => HcStatus::NonFinite,
            Error::Shape(_) | Error::DimensionMismatch { .. } => HcStatus::ShapeMismatch,
            Error::DegenerateDesign(_) => HcStatus::DegenerateDesign,
            Error::SvdFailed => HcStatus::NotConverged,
            _ => HcStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: HcStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> HcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            HcStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(HcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(HcStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(HcStatus::NullPointer, format!("{what} is null")));
    }
    if len < need {
        return Err(fail(HcStatus::BufferTooSmall, format!("{what} holds {len}, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(HcStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

fn grid(kind: HcGridKind) -> HcGrid {
    match kind {
        HcGridKind::Restricted => HcGrid::Restricted,
        HcGridKind::Unrestricted => HcGrid::Unrestricted,
    }
}

/// Length in bytes of the last error message on this thread, including the
/// terminating NUL, or 0 when the last call succeeded.
#[no_mangle]
pub extern "C" fn hc_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes_with_nul().len()))
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to
/// fit) and returns the number of bytes written excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Builds a `rows × cols` matrix from a row-major buffer of `rows · cols`
/// values.
///
/// # Safety
/// `data` must point to `rows · cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hc_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut HcMatrix,
) -> HcStatus {
    guard(|| {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(HcStatus::InvalidArgument, "rows * cols overflows"))?;
        let values = input(data, len, "data")?;
        let m = DMatrix::from_row_slice(rows, cols, values);
        put(out, boxed(HcMatrix(m)), "out")
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hc_matrix_free(m: *mut HcMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hc_matrix_rows(m: *const HcMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.nrows())
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hc_matrix_cols(m: *const HcMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.ncols())
}

/// Copies the matrix into `buf` in row-major order.
///
/// # Safety
/// `m` must be a live handle and `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hc_matrix_copy(m: *const HcMatrix, buf: *mut f64, len: usize) -> HcStatus {
    guard(|| {
        let m = &handle(m, "matrix")?.0;
        let dst = output(buf, len, m.len(), "buf")?;
        for (d, v) in dst.iter_mut().zip(m.transpose().iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Singular-value soft threshold: the matrix with every singular value `d`
/// replaced by `max(d − lambda, 0)`.
///
/// # Safety
/// `w` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_svt(w: *const HcMatrix, lambda: f64, out: *mut *mut HcMatrix) -> HcStatus {
    guard(|| {
        let w = &handle(w, "w")?.0;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(fail(HcStatus::InvalidArgument, format!("lambda must be finite and non-negative, got {lambda}")));
        }
        let s = svt::soft_threshold_svd(w, lambda)?;
        put(out, boxed(HcMatrix(s)), "out")
    })
}

/// # Safety
/// `w` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_nuclear_norm(w: *const HcMatrix, out: *mut f64) -> HcStatus {
    guard(|| {
        let v = svt::nuclear_norm(&handle(w, "w")?.0)?;
        put(out, v, "out")
    })
}

/// Default screening penalty: the threshold leaving at most `rank_cap`
/// singular values of the centred expression matrix above it.
///
/// # Safety
/// `y` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_screen_lambda(y: *const HcMatrix, rank_cap: usize, out: *mut f64) -> HcStatus {
    guard(|| {
        let v = marginal::screen_lambda(&handle(y, "y")?.0, rank_cap)?;
        put(out, v, "out")
    })
}

/// Per-SNP effects with a low-rank confounder term, for expression `y`
/// (`n × q`) and genotypes `x` (`n × p`). Writes a `p × q` matrix.
/// Constant genotype columns give zero rows.
///
/// # Safety
/// `y` and `x` must be live handles and `beta_out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_marginal_screen(
    y: *const HcMatrix,
    x: *const HcMatrix,
    lambda: f64,
    beta_out: *mut *mut HcMatrix,
) -> HcStatus {
    guard(|| {
        let (y, x) = (&handle(y, "y")?.0, &handle(x, "x")?.0);
        if x.nrows() != y.nrows() {
            return Err(fail(
                HcStatus::ShapeMismatch,
                format!("x has {} rows, y has {}", x.nrows(), y.nrows()),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite.into());
        }
        let screen = MarginalScreen::new(y, MarginalOptions::with_lambda(lambda))?;
        let mut beta = DMatrix::zeros(x.ncols(), y.ncols());
        for (i, col) in x.column_iter().enumerate() {
            if col.iter().all(|v| *v == col[0]) {
                continue;
            }
            let fit = screen.fit(&col.into_owned())?;
            beta.row_mut(i).copy_from(&fit.beta.transpose());
        }
        put(beta_out, boxed(HcMatrix(beta)), "beta_out")
    })
}

/// Standardised effects for `beta` (`p × q`) given `y` (`n × q`) and `x`
/// (`n × p`), with genotype columns centred.
///
/// # Safety
/// All handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_standardize(
    beta: *const HcMatrix,
    y: *const HcMatrix,
    x: *const HcMatrix,
    out: *mut *mut HcMatrix,
) -> HcStatus {
    guard(|| {
        let z = hc::standardize(
            &handle(beta, "beta")?.0,
            &handle(y, "y")?.0,
            &handle(x, "x")?.0,
            StandardizeOptions::default(),
        )?;
        put(out, boxed(HcMatrix(z.values)), "out")
    })
}

/// Higher-Criticism statistic of one vector of `q` standardised effects.
///
/// # Safety
/// `z` must point to `q` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn hc_statistic(z: *const f64, q: usize, kind: HcGridKind, out: *mut f64) -> HcStatus {
    guard(|| {
        if q == 0 {
            return Err(fail(HcStatus::InvalidArgument, "empty z vector"));
        }
        let z = input(z, q, "z")?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite.into());
        }
        put(out, hc::hc_statistic(z, grid(kind)), "out")
    })
}

/// Statistic for every row of `z` written to `scores`, and the row order by
/// decreasing score (ties to the lower index) written to `order`.
///
/// # Safety
/// `z` must be a live handle; `scores` and `order` must each hold `len`
/// writable elements, with `len` at least the row count of `z`.
#[no_mangle]
pub unsafe extern "C" fn hc_rank_rows(
    z: *const HcMatrix,
    kind: HcGridKind,
    scores: *mut f64,
    order: *mut usize,
    len: usize,
) -> HcStatus {
    guard(|| {
        let z = &handle(z, "z")?.0;
        let p = z.nrows();
        if z.ncols() == 0 {
            return Err(fail(HcStatus::InvalidArgument, "z has no columns"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite.into());
        }
        let s = output(scores, len, p, "scores")?;
        let o = output(order, len, p, "order")?;
        let g = grid(kind);
        for (i, slot) in s.iter_mut().enumerate() {
            let row: Vec<f64> = z.row(i).iter().copied().collect();
            *slot = hc::hc_statistic(&row, g);
        }
        let mut idx: Vec<usize> = (0..p).collect();
        idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        o.copy_from_slice(&idx);
        Ok(())
    })
}

/// Smallest sparsity penalty giving an all-zero coefficient matrix at the
/// start point.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_rho_null(y: *const HcMatrix, x: *const HcMatrix, out: *mut f64) -> HcStatus {
    guard(|| {
        let (y, x) = (&handle(y, "y")?.0, &handle(x, "x")?.0);
        if x.nrows() != y.nrows() {
            return Err(fail(HcStatus::ShapeMismatch, "x and y differ in rows"));
        }
        put(out, lors::rho_null(y, x), "out")
    })
}

/// Smallest nuclear-norm penalty giving a zero low-rank term at the start
/// point.
///
/// # Safety
/// `y` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_lambda_null(y: *const HcMatrix, out: *mut f64) -> HcStatus {
    guard(|| put(out, lors::lambda_null(&handle(y, "y")?.0)?, "out"))
}

/// Joint sparse plus low-rank regression of `y` (`n × q`) on `x` (`n × r`).
/// `tol <= 0` and `max_iter == 0` select the library defaults.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_lors_fit(
    y: *const HcMatrix,
    x: *const HcMatrix,
    rho: f64,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    out: *mut *mut HcLorsFit,
) -> HcStatus {
    guard(|| {
        let (y, x) = (&handle(y, "y")?.0, &handle(x, "x")?.0);
        let mut opts = LorsOptions::default();
        if tol > 0.0 {
            opts.tol = tol;
        }
        if max_iter > 0 {
            opts.max_iter = max_iter;
        }
        let sol = lors::lors_solve(y, x, rho, lambda, opts, None)?;
        put(out, boxed(HcLorsFit(sol)), "out")
    })
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hc_lors_fit_free(fit: *mut HcLorsFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `fit` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_lors_fit_summary(fit: *const HcLorsFit, out: *mut HcLorsSummary) -> HcStatus {
    guard(|| {
        let s = &handle(fit, "fit")?.0;
        let summary = HcLorsSummary {
            iterations: s.iterations,
            rank_l: s.rank_l,
            nnz_b: s.nnz_b(),
            converged: s.converged,
            objective: s.objective(),
        };
        put(out, summary, "out")
    })
}

/// Copy of the `r × q` coefficient matrix.
///
/// # Safety
/// `fit` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_lors_fit_coefficients(fit: *const HcLorsFit, out: *mut *mut HcMatrix) -> HcStatus {
    guard(|| {
        let b = handle(fit, "fit")?.0.b.clone();
        put(out, boxed(HcMatrix(b)), "out")
    })
}

/// Copy of the `n × q` low-rank term.
///
/// # Safety
/// `fit` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_lors_fit_low_rank(fit: *const HcLorsFit, out: *mut *mut HcMatrix) -> HcStatus {
    guard(|| {
        let l = handle(fit, "fit")?.0.low_rank.clone();
        put(out, boxed(HcMatrix(l)), "out")
    })
}

/// Per-gene intercepts, `q` values.
///
/// # Safety
/// `fit` must be live and `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hc_lors_fit_intercepts(fit: *const HcLorsFit, buf: *mut f64, len: usize) -> HcStatus {
    guard(|| {
        let mu: &DVector<f64> = &handle(fit, "fit")?.0.mu;
        output(buf, len, mu.len(), "buf")?.copy_from_slice(mu.as_slice());
        Ok(())
    })
}

/// Class of a same-chromosome SNP-probe pair `distance_bp` apart.
#[no_mangle]
pub extern "C" fn hc_classify_distance(distance_bp: u64) -> HcClass {
    match evaluation::classify_distance(distance_bp) {
        Classification::Cis => HcClass::Cis,
        Classification::SemiCis => HcClass::SemiCis,
        Classification::Trans => HcClass::Trans,
        Classification::Unknown => HcClass::Unknown,
    }
}

/// Minimum number of distinct linked probes for a hotspot SNP.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hc_hotspot_threshold(q_total: usize, fraction: f64, out: *mut usize) -> HcStatus {
    guard(|| put(out, evaluation::hotspot_threshold(q_total, fraction)?, "out"))
}
