use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use costvs_ffi::*;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = costvs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Handles {
    data: *mut CostvsDataset,
    prior: *mut CostvsPrior,
}

impl Handles {
    fn twins(mode: CostvsPriorMode) -> Self {
        let mut data = ptr::null_mut();
        let mut prior = ptr::null_mut();
        unsafe {
            let d = cstr(&fixtures().join("twins.csv"));
            let c = cstr(&fixtures().join("twins_costs.csv"));
            assert_eq!(
                costvs_dataset_load(d.as_ptr(), c.as_ptr(), &mut data),
                CostvsStatus::Ok
            );
            assert_eq!(costvs_prior_new(data, mode, &mut prior), CostvsStatus::Ok);
        }
        Handles { data, prior }
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            costvs_prior_free(self.prior);
            costvs_dataset_free(self.data);
        }
    }
}

#[test]
fn load_and_score_match_the_library() {
    let h = Handles::twins(CostvsPriorMode::CostBenefit);
    unsafe {
        assert_eq!(
            (costvs_dataset_n(h.data), costvs_dataset_p(h.data)),
            (400, 6)
        );
        let idx = [1u32, 2, 3];
        let mut s = std::mem::zeroed::<CostvsScore>();
        assert_eq!(
            costvs_score(
                h.data,
                h.prior,
                idx.as_ptr(),
                idx.len(),
                CostvsMethod::Laplace,
                &mut s
            ),
            CostvsStatus::Ok
        );

        let data = costvs::load_dataset(
            fixtures().join("twins.csv"),
            fixtures().join("twins_costs.csv"),
        )
        .unwrap();
        let spec =
            costvs::CostPriorSpec::for_dataset(&data, costvs::PriorMode::CostBenefit).unwrap();
        let m = costvs::ModelIndicator::from_indices(6, &[1, 2, 3]).unwrap();
        let want = costvs::evidence::score(&m, &data, &spec, costvs::Method::Laplace).unwrap();
        let want = want.scored().unwrap();
        assert!(!s.excluded);
        assert_eq!(s.score, want.score);
        assert_eq!(s.log_marginal, want.log_marginal.unwrap());
        assert_eq!(s.dimension, 4);

        let mut lp = 0.0;
        assert_eq!(
            costvs_log_model_prior(h.prior, idx.as_ptr(), idx.len(), &mut lp),
            CostvsStatus::Ok
        );
        assert_eq!(lp, want.log_model_prior);

        assert_eq!(
            costvs_score(h.data, h.prior, ptr::null(), 0, CostvsMethod::Bic, &mut s),
            CostvsStatus::Ok
        );
        assert!(s.phi.is_nan() && s.dimension == 1);
    }
}

#[test]
fn enumeration_table_is_normalized() {
    let h = Handles::twins(CostvsPriorMode::CostBenefit);
    unsafe {
        let mut table = ptr::null_mut();
        assert_eq!(
            costvs_enumerate(h.data, h.prior, CostvsMethod::Laplace, &mut table),
            CostvsStatus::Ok
        );
        let len = costvs_table_len(table);
        assert_eq!(len, 64);
        let mut total = 0.0;
        let mut last = f64::INFINITY;
        for i in 0..len {
            let mut row = std::mem::zeroed::<CostvsTableRow>();
            assert_eq!(costvs_table_row(table, i, &mut row), CostvsStatus::Ok);
            assert!(row.probability <= last);
            last = row.probability;
            total += row.probability;
        }
        assert!((total - 1.0).abs() < 1e-12);
        let mut row = std::mem::zeroed::<CostvsTableRow>();
        assert_eq!(
            costvs_table_row(table, len, &mut row),
            CostvsStatus::InvalidArgument
        );

        let mut needed = 0;
        let mut small = [0.0; 2];
        assert_eq!(
            costvs_table_marginals(table, small.as_mut_ptr(), 2, &mut needed),
            CostvsStatus::BufferTooSmall
        );
        assert_eq!(needed, 6);
        let mut marg = [0.0; 6];
        assert_eq!(
            costvs_table_marginals(table, marg.as_mut_ptr(), 6, &mut needed),
            CostvsStatus::Ok
        );
        // The cheap twin wins, the expensive one is priced out.
        assert!(marg[2] > 0.9 && marg[3] < 0.1, "{marg:?}");
        costvs_table_free(table);
    }
}

#[test]
fn sampler_tracks_enumeration() {
    let h = Handles::twins(CostvsPriorMode::CostBenefit);
    unsafe {
        let mut table = ptr::null_mut();
        assert_eq!(
            costvs_enumerate(h.data, h.prior, CostvsMethod::Laplace, &mut table),
            CostvsStatus::Ok
        );
        let mut exact = [0.0; 6];
        costvs_table_marginals(table, exact.as_mut_ptr(), 6, ptr::null_mut());
        costvs_table_free(table);

        let opts = CostvsSamplerOptions {
            sampler: CostvsSampler::Mc3Laplace,
            iterations: 22_000,
            burn_in: 2_000,
            seed: 3,
            start_full: true,
        };
        let mut est = [0.0; 6];
        let mut len = 0;
        assert_eq!(
            costvs_sample_marginals(h.data, h.prior, &opts, est.as_mut_ptr(), 6, &mut len),
            CostvsStatus::Ok
        );
        assert_eq!(len, 6);
        for (a, b) in est.iter().zip(exact) {
            assert!((a - b).abs() < 0.03, "{est:?} vs {exact:?}");
        }
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut data = ptr::null_mut();
        let missing = CString::new("/nonexistent/data.csv").unwrap();
        assert_eq!(
            costvs_dataset_load(missing.as_ptr(), missing.as_ptr(), &mut data),
            CostvsStatus::DataError
        );
        assert!(last_error().contains("/nonexistent/data.csv"));
        assert!(data.is_null());

        assert_eq!(
            costvs_dataset_load(ptr::null(), missing.as_ptr(), &mut data),
            CostvsStatus::NullPointer
        );
        assert!(last_error().contains("data_path"));

        let h = Handles::twins(CostvsPriorMode::BenefitOnly);
        let bad = [9u32];
        let mut s = std::mem::zeroed::<CostvsScore>();
        assert_eq!(
            costvs_score(
                h.data,
                h.prior,
                bad.as_ptr(),
                1,
                CostvsMethod::Laplace,
                &mut s
            ),
            CostvsStatus::InvalidArgument
        );
        assert!(last_error().contains('9'));

        let opts = CostvsSamplerOptions {
            sampler: CostvsSampler::Mc3Bic,
            iterations: 10,
            burn_in: 20,
            seed: 0,
            start_full: false,
        };
        let mut buf = [0.0; 6];
        assert_eq!(
            costvs_sample_marginals(h.data, h.prior, &opts, buf.as_mut_ptr(), 6, ptr::null_mut()),
            CostvsStatus::InvalidArgument
        );

        // A prior built for another dataset is refused.
        let (y, x, c) = ([0.0, 1.0, 1.0, 0.0], [0.1, 0.5, 0.9, 0.2], [1.0]);
        let mut small = ptr::null_mut();
        assert_eq!(
            costvs_dataset_new(4, 1, y.as_ptr(), x.as_ptr(), c.as_ptr(), &mut small),
            CostvsStatus::Ok
        );
        assert_eq!(
            costvs_score(small, h.prior, ptr::null(), 0, CostvsMethod::Bic, &mut s),
            CostvsStatus::InvalidArgument
        );
        costvs_dataset_free(small);

        // Rank-deficient models are reported, not failed.
        let (y, x) = (
            [0.0, 1.0, 1.0, 0.0, 1.0, 0.0],
            [1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0, 5.0, 6.0, 6.0],
        );
        let mut dup = ptr::null_mut();
        let mut prior = ptr::null_mut();
        assert_eq!(
            costvs_dataset_new(6, 2, y.as_ptr(), x.as_ptr(), [1.0, 1.0].as_ptr(), &mut dup),
            CostvsStatus::Ok
        );
        assert_eq!(
            costvs_prior_new(dup, CostvsPriorMode::CostBenefit, &mut prior),
            CostvsStatus::Ok
        );
        let both = [1u32, 2];
        assert_eq!(
            costvs_score(dup, prior, both.as_ptr(), 2, CostvsMethod::Laplace, &mut s),
            CostvsStatus::Ok
        );
        assert!(s.excluded && s.score.is_nan());
        costvs_prior_free(prior);
        costvs_dataset_free(dup);

        costvs_dataset_free(ptr::null_mut());
        assert_eq!(costvs_dataset_n(ptr::null()), 0);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(costvs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles and runs a small C program against the generated header and the
/// static library. Skipped when no C compiler is on the path.
#[test]
fn header_links_from_c() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libcostvs_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "costvs.h"

int main(int argc, char **argv) {
    CostvsDataset *data = NULL;
    CostvsPrior *prior = NULL;
    if (costvs_dataset_load(argv[1], argv[2], &data) != COSTVS_STATUS_OK) {
        fprintf(stderr, "%s\n", costvs_last_error());
        return 1;
    }
    if (costvs_prior_new(data, COSTVS_PRIOR_MODE_COST_BENEFIT, &prior) != COSTVS_STATUS_OK) return 2;
    uint32_t idx[] = {1, 2, 3};
    CostvsScore s;
    if (costvs_score(data, prior, idx, 3, COSTVS_METHOD_BIC, &s) != COSTVS_STATUS_OK) return 3;
    printf("%.17g %u\n", s.score, s.dimension);
    costvs_prior_free(prior);
    costvs_dataset_free(data);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe)
        .arg(fixtures().join("twins.csv"))
        .arg(fixtures().join("twins_costs.csv"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut parts = text.split_whitespace();
    let score: f64 = parts.next().unwrap().parse().unwrap();
    assert_eq!(parts.next(), Some("4"));

    let data = costvs::load_dataset(
        fixtures().join("twins.csv"),
        fixtures().join("twins_costs.csv"),
    )
    .unwrap();
    let spec = costvs::CostPriorSpec::for_dataset(&data, costvs::PriorMode::CostBenefit).unwrap();
    let m = costvs::ModelIndicator::from_indices(6, &[1, 2, 3]).unwrap();
    let want = costvs::evidence::score(&m, &data, &spec, costvs::Method::Bic).unwrap();
    assert_eq!(score, want.scored().unwrap().score);
}
