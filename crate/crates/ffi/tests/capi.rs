use std::ffi::c_char;
use std::ptr;

use hc_eqtl_ffi::*;

fn matrix(rows: usize, cols: usize, data: &[f64]) -> *mut HcMatrix {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { hc_matrix_new(rows, cols, data.as_ptr(), &mut m) }, HcStatus::Ok);
    m
}

fn contents(m: *const HcMatrix) -> Vec<f64> {
    let len = unsafe { hc_matrix_rows(m) * hc_matrix_cols(m) };
    let mut buf = vec![0.0; len];
    assert_eq!(unsafe { hc_matrix_copy(m, buf.as_mut_ptr(), len) }, HcStatus::Ok);
    buf
}

fn last_error() -> String {
    let len = hc_last_error_length();
    let mut buf = vec![0 as c_char; len.max(1)];
    let n = unsafe { hc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    buf[..n].iter().map(|c| *c as u8 as char).collect()
}

/// Deterministic pseudo-random values in (-1, 1).
fn noise(seed: u64, len: usize) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..len)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

#[test]
fn matrices_round_trip_in_row_major_order() {
    let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let m = matrix(2, 3, &data);
    assert_eq!(unsafe { (hc_matrix_rows(m), hc_matrix_cols(m)) }, (2, 3));
    assert_eq!(contents(m), data);
    let mut small = [0.0; 4];
    assert_eq!(unsafe { hc_matrix_copy(m, small.as_mut_ptr(), 4) }, HcStatus::BufferTooSmall);
    assert!(last_error().contains("need 6"));
    unsafe { hc_matrix_free(m) };
    unsafe { hc_matrix_free(ptr::null_mut()) };
}

#[test]
fn null_pointers_are_reported_not_dereferenced() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { hc_matrix_new(2, 2, ptr::null(), &mut out) }, HcStatus::NullPointer);
    assert!(out.is_null());
    assert!(last_error().contains("data"));
    assert_eq!(unsafe { hc_svt(ptr::null(), 1.0, &mut out) }, HcStatus::NullPointer);
    let m = matrix(1, 1, &[1.0]);
    assert_eq!(unsafe { hc_svt(m, 1.0, ptr::null_mut()) }, HcStatus::NullPointer);
    assert_eq!(unsafe { hc_matrix_rows(ptr::null()) }, 0);
    unsafe { hc_matrix_free(m) };
}

#[test]
fn success_clears_the_last_error() {
    let m = matrix(1, 1, &[1.0]);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { hc_svt(m, -1.0, &mut out) }, HcStatus::InvalidArgument);
    assert!(hc_last_error_length() > 0);
    assert_eq!(unsafe { hc_svt(m, 0.5, &mut out) }, HcStatus::Ok);
    assert_eq!(hc_last_error_length(), 0);
    unsafe {
        hc_matrix_free(out);
        hc_matrix_free(m);
    }
}

#[test]
fn truncated_error_messages_stay_terminated() {
    let mut out = ptr::null_mut();
    assert_ne!(unsafe { hc_svt(ptr::null(), 1.0, &mut out) }, HcStatus::Ok);
    let mut buf = [1 as c_char; 4];
    assert_eq!(unsafe { hc_last_error_message(buf.as_mut_ptr(), 4) }, 3);
    assert_eq!(buf[3], 0);
}

#[test]
fn svt_shrinks_a_diagonal_matrix() {
    let m = matrix(2, 2, &[3.0, 0.0, 0.0, 0.5]);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { hc_svt(m, 1.0, &mut s) }, HcStatus::Ok);
    let got = contents(s);
    for (g, w) in got.iter().zip([2.0, 0.0, 0.0, 0.0]) {
        assert!((g - w).abs() < 1e-12, "{got:?}");
    }
    let mut nn = 0.0;
    assert_eq!(unsafe { hc_nuclear_norm(m, &mut nn) }, HcStatus::Ok);
    assert!((nn - 3.5).abs() < 1e-12);
    unsafe {
        hc_matrix_free(s);
        hc_matrix_free(m);
    }
}

#[test]
fn non_finite_input_is_rejected() {
    let m = matrix(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
    let mut out = 0.0;
    assert_eq!(unsafe { hc_nuclear_norm(m, &mut out) }, HcStatus::NonFinite);
    let z = [1.0, f64::INFINITY];
    assert_eq!(unsafe { hc_statistic(z.as_ptr(), 2, HcGridKind::Restricted, &mut out) }, HcStatus::NonFinite);
    unsafe { hc_matrix_free(m) };
}

#[test]
fn screen_standardize_and_rank_pick_the_planted_snp() {
    let (n, p, q) = (40, 5, 30);
    let x: Vec<f64> = noise(1, n * p).iter().map(|v| ((v + 1.0) * 1.5).floor()).collect();
    let e = noise(2, n * q);
    // Genes 0..q load on SNP 2.
    let y: Vec<f64> = (0..n * q).map(|k| 3.0 * x[(k / q) * p + 2] + 0.3 * e[k]).collect();
    let (xm, ym) = (matrix(n, p, &x), matrix(n, q, &y));
    let mut lambda = 0.0;
    assert_eq!(unsafe { hc_screen_lambda(ym, 5, &mut lambda) }, HcStatus::Ok);
    assert!(lambda > 0.0);
    let mut beta = ptr::null_mut();
    assert_eq!(unsafe { hc_marginal_screen(ym, xm, lambda, &mut beta) }, HcStatus::Ok);
    assert_eq!(unsafe { (hc_matrix_rows(beta), hc_matrix_cols(beta)) }, (p, q));
    let mut z = ptr::null_mut();
    assert_eq!(unsafe { hc_standardize(beta, ym, xm, &mut z) }, HcStatus::Ok);
    let (mut scores, mut order) = (vec![0.0; p], vec![0usize; p]);
    let st = unsafe { hc_rank_rows(z, HcGridKind::Restricted, scores.as_mut_ptr(), order.as_mut_ptr(), p) };
    assert_eq!(st, HcStatus::Ok);
    assert_eq!(order[0], 2, "{scores:?}");
    assert!(order.windows(2).all(|w| scores[w[0]] >= scores[w[1]]));

    // Each row score equals the single-vector statistic.
    let zv = contents(z);
    let mut one = 0.0;
    assert_eq!(unsafe { hc_statistic(zv[2 * q..3 * q].as_ptr(), q, HcGridKind::Restricted, &mut one) }, HcStatus::Ok);
    assert_eq!(one, scores[2]);

    let wrong = matrix(n - 1, p, &x[..(n - 1) * p]);
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { hc_marginal_screen(ym, wrong, lambda, &mut bad) }, HcStatus::ShapeMismatch);
    unsafe {
        for m in [xm, ym, beta, z, wrong] {
            hc_matrix_free(m);
        }
    }
}

#[test]
fn joint_fit_exposes_its_blocks() {
    let (n, r, q) = (30, 4, 6);
    let x = noise(3, n * r);
    let e = noise(4, n * q);
    let y: Vec<f64> = (0..n * q).map(|k| 2.0 * x[(k / q) * r + (k % q) % r] + 0.1 * e[k] + 5.0).collect();
    let (xm, ym) = (matrix(n, r, &x), matrix(n, q, &y));
    let (mut rho0, mut lam0) = (0.0, 0.0);
    assert_eq!(unsafe { hc_rho_null(ym, xm, &mut rho0) }, HcStatus::Ok);
    assert_eq!(unsafe { hc_lambda_null(ym, &mut lam0) }, HcStatus::Ok);

    // At the null penalties nothing is selected.
    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { hc_lors_fit(ym, xm, rho0, lam0, 0.0, 0, &mut fit) }, HcStatus::Ok);
    let mut s = HcLorsSummary::default();
    assert_eq!(unsafe { hc_lors_fit_summary(fit, &mut s) }, HcStatus::Ok);
    assert_eq!((s.nnz_b, s.rank_l), (0, 0));
    unsafe { hc_lors_fit_free(fit) };

    assert_eq!(unsafe { hc_lors_fit(ym, xm, 0.1 * rho0, 0.5 * lam0, 1e-10, 2000, &mut fit) }, HcStatus::Ok);
    assert_eq!(unsafe { hc_lors_fit_summary(fit, &mut s) }, HcStatus::Ok);
    assert!(s.converged && s.nnz_b > 0 && s.objective.is_finite());
    let (mut b, mut l) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { hc_lors_fit_coefficients(fit, &mut b) }, HcStatus::Ok);
    assert_eq!(unsafe { hc_lors_fit_low_rank(fit, &mut l) }, HcStatus::Ok);
    assert_eq!(unsafe { (hc_matrix_rows(b), hc_matrix_cols(b)) }, (r, q));
    assert_eq!(unsafe { (hc_matrix_rows(l), hc_matrix_cols(l)) }, (n, q));
    let bv = contents(b);
    assert_eq!(bv.iter().filter(|v| **v != 0.0).count(), s.nnz_b);
    // Planted effects dominate their gene's column.
    for j in 0..q {
        let k = j % r;
        assert!((0..r).all(|i| i == k || bv[k * q + j].abs() > bv[i * q + j].abs()));
    }
    let mut mu = vec![0.0; q];
    assert_eq!(unsafe { hc_lors_fit_intercepts(fit, mu.as_mut_ptr(), q) }, HcStatus::Ok);
    assert!(mu.iter().all(|m| (m - 5.0).abs() < 1.0), "{mu:?}");

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { hc_lors_fit(ym, xm, -1.0, 1.0, 0.0, 0, &mut bad) }, HcStatus::InvalidArgument);
    assert!(bad.is_null());
    unsafe {
        hc_lors_fit_free(fit);
        for m in [xm, ym, b, l] {
            hc_matrix_free(m);
        }
    }
}

#[test]
fn classification_and_hotspot_thresholds() {
    assert_eq!(hc_classify_distance(0), HcClass::Cis);
    assert_eq!(hc_classify_distance(249_999), HcClass::Cis);
    assert_eq!(hc_classify_distance(250_000), HcClass::SemiCis);
    assert_eq!(hc_classify_distance(5_000_000), HcClass::SemiCis);
    assert_eq!(hc_classify_distance(5_000_001), HcClass::Trans);
    let mut t = 0usize;
    assert_eq!(unsafe { hc_hotspot_threshold(2010, 0.0021, &mut t) }, HcStatus::Ok);
    assert_eq!(t, 5);
    assert_eq!(unsafe { hc_hotspot_threshold(100, 1.5, &mut t) }, HcStatus::InvalidArgument);
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/hc_eqtl.h")).unwrap();
    for f in [
        "hc_matrix_new", "hc_matrix_free", "hc_matrix_copy", "hc_svt", "hc_nuclear_norm", "hc_screen_lambda",
        "hc_marginal_screen", "hc_standardize", "hc_statistic", "hc_rank_rows", "hc_rho_null", "hc_lambda_null",
        "hc_lors_fit", "hc_lors_fit_free", "hc_lors_fit_summary", "hc_classify_distance", "hc_hotspot_threshold",
        "hc_last_error_message",
    ] {
        assert!(header.contains(&format!(" {f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct HcMatrix HcMatrix;"));
}

#[test]
fn header_compiles_as_c99() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"hc_eqtl.h\"\nint main(void) { HcMatrix *m = 0; double d[1] = {1.0};\n\
         return hc_matrix_new(1, 1, d, &m) == HcStatus_Ok ? 0 : 1; }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
