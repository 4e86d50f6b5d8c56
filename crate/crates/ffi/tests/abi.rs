use std::ffi::CStr;
use std::process::Command;
use std::ptr;

use noisy_cg_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        ncg_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn diagonal_problem_solves_exactly() {
    let eig = [4.0, 2.0, 1.0];
    let x_star = [1.0, -2.0, 0.5];
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(ncg_problem_new_diagonal(eig.as_ptr(), x_star.as_ptr(), 3, &mut p), NcgStatus::Ok);
        let mut n = 0usize;
        assert_eq!(ncg_problem_dim(p, &mut n), NcgStatus::Ok);
        assert_eq!(n, 3);
        let mut fstar = 0.0;
        ncg_problem_f_star(p, &mut fstar);
        // f* = -1/2 sum eig_i x_i^2
        assert!((fstar + 0.5 * (4.0 + 8.0 + 0.25)).abs() < 1e-12);

        let mut m = ptr::null_mut();
        assert_eq!(ncg_noise_new(NcgNoiseKind::Exact, 0.0, 0.0, 1, &mut m), NcgStatus::Ok);
        let mut t = ptr::null_mut();
        assert_eq!(ncg_cg_solve(p, m, NcgStopKind::GradNorm, 1e-12, 10, &mut t), NcgStatus::Ok);
        let mut st = NcgTerminal::MaxIter;
        ncg_trace_status(t, &mut st);
        assert_eq!(st, NcgTerminal::ToleranceReached);
        let mut x = [0.0; 3];
        assert_eq!(ncg_trace_final_x(t, x.as_mut_ptr(), 3), NcgStatus::Ok);
        for (a, b) in x.iter().zip(&x_star) {
            assert!((a - b).abs() < 1e-10);
        }
        let mut len = 0;
        ncg_trace_len(t, &mut len);
        let mut rec = std::mem::zeroed::<NcgRecord>();
        assert_eq!(ncg_trace_record(t, len - 1, &mut rec), NcgStatus::Ok);
        assert!(rec.f_gap.abs() < 1e-12);
        assert_eq!(ncg_trace_record(t, len, &mut rec), NcgStatus::OutOfRange);
        assert!(last_error().contains("out of range"));
        ncg_trace_free(t);
        ncg_noise_free(m);
        ncg_problem_free(p);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut p = ptr::null_mut();
        let eig = [1.0, -1.0];
        let x = [1.0, 1.0];
        assert_eq!(
            ncg_problem_new_diagonal(eig.as_ptr(), x.as_ptr(), 2, &mut p),
            NcgStatus::InvalidArgument
        );
        assert!(p.is_null());
        assert!(!last_error().is_empty());

        let a = [1.0, 2.0, 0.0, 1.0];
        assert_eq!(ncg_problem_new_dense(a.as_ptr(), x.as_ptr(), 2, &mut p), NcgStatus::NotSymmetric);
        assert_eq!(ncg_problem_new_diagonal(ptr::null(), x.as_ptr(), 2, &mut p), NcgStatus::NullPointer);

        let mut m = ptr::null_mut();
        assert_eq!(ncg_noise_new(NcgNoiseKind::Matrix, -1.0, 0.0, 1, &mut m), NcgStatus::InvalidArgument);
        let mut n = 0;
        assert_eq!(ncg_problem_dim(ptr::null(), &mut n), NcgStatus::NullPointer);
        // freeing null is a no-op
        ncg_problem_free(ptr::null_mut());
        ncg_trace_free(ptr::null_mut());
        ncg_noise_free(ptr::null_mut());
    }
}

#[test]
fn message_is_truncated_and_length_reported() {
    unsafe {
        let mut n = 0;
        ncg_problem_dim(ptr::null(), &mut n);
        let full = ncg_last_error_message(ptr::null_mut(), 0);
        let mut buf = [0 as std::ffi::c_char; 5];
        assert_eq!(ncg_last_error_message(buf.as_mut_ptr(), 5), full);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes().len(), 4);
    }
}

#[test]
fn random_problem_and_nesterov() {
    let n = 50;
    let mut eig = vec![0.0; n];
    unsafe {
        assert_eq!(ncg_make_spectrum(n, 1.0, 100.0, eig.as_mut_ptr()), NcgStatus::Ok);
        assert_eq!(eig[0], 1.0);
        assert!((eig[n - 1] - 0.01).abs() < 1e-12);
        let mut p = ptr::null_mut();
        assert_eq!(ncg_problem_new_random(eig.as_ptr(), n, 3.0, 7, &mut p), NcgStatus::Ok);
        let mut m = ptr::null_mut();
        ncg_noise_new(NcgNoiseKind::CombinedStochastic, 0.01, 0.01, 7, &mut m);
        let mut t = ptr::null_mut();
        assert_eq!(ncg_nesterov_solve(p, m, 200, &mut t), NcgStatus::Ok);
        let mut len = 0;
        ncg_trace_len(t, &mut len);
        assert_eq!(len, 201);
        ncg_trace_free(t);
        let mut t = ptr::null_mut();
        assert_eq!(ncg_cg_solve(p, m, NcgStopKind::Nemirovsky, 0.0, 500, &mut t), NcgStatus::Ok);
        let mut st = NcgTerminal::MaxIter;
        ncg_trace_status(t, &mut st);
        assert_eq!(st, NcgTerminal::NemirovskyStop);
        ncg_trace_free(t);
        ncg_noise_free(m);
        ncg_problem_free(p);
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/noisy_cg.h");
    let text = std::fs::read_to_string(header).expect("generated header");
    for name in ["ncg_cg_solve", "ncg_trace_free", "NCG_STATUS_OK", "typedef struct NcgProblem NcgProblem"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ NcgProblem *p = 0; size_t n; return ncg_problem_dim(p, &n) == NCG_STATUS_NULL_POINTER ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    match Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg(&src).status() {
        Ok(s) => assert!(s.success(), "header does not compile as C"),
        Err(_) => eprintln!("no C compiler found, skipped compile check"),
    }
}
