//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 6 exercise the core library directly. Criteria 7 to 9 come
//! from one end-to-end run of `configs/default.json`; criterion 10 reruns a
//! reduced configuration twice on one thread and compares every artifact.
//!
//! Outcomes are reported, not asserted, so the rest of the workspace suite
//! still runs; set `TASKDN_ACCEPTANCE_STRICT=1` to exit non-zero on any FAIL.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use taskdn::evaluate::{Evaluation, Method};
use taskdn::Config;
use taskdn_core::channels::{build_channels, channelize, DEFAULT_BAND_EDGES, ROI_SIZE};
use taskdn_core::denoiser::gradcheck::{condition_rectifiers, finite_difference_check};
use taskdn_core::denoiser::{init_network, AbsentCentroidPolicy, ArchConfig, LossConfig, Params};
use taskdn_core::evalmetrics::auc_mann_whitney;
use taskdn_core::observer::{loo_scores, FeatureSet, Label, Ridge};
use taskdn_core::phantom::Wall;
use taskdn_core::simulate::{binomial_thin, osem_reconstruct_from, Geometry, Projector, ReconConfig};
use taskdn_core::{par, Image2D, Image3D, RngStream, Sinogram, SinogramKind};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gradient_correctness() -> Outcome {
    let arch = ArchConfig { n_slices: 3, widths: [3, 4], kernel: 3, residual: true };
    let cfg = LossConfig {
        lambda: 2.0,
        slice_half_width: 1,
        channels: build_channels(16, &[1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0]).unwrap(),
        absent_policy: AbsentCentroidPolicy::CanonicalRandom,
    };
    let mut worst = 0.0f64;
    let mut flips = 0;
    for seed in 0..5u64 {
        let mut g = RngStream::new(seed, 0xac1).generator();
        let batch: Vec<(Image3D, Image3D, Option<[usize; 3]>)> = (0..3)
            .map(|_| {
                let mut vol = || Image3D::from_vec(16, 16, 3, (0..768).map(|_| g.random_range(0.0..2.0)).collect()).unwrap();
                let (x, t) = (vol(), vol());
                (x, t, Some([g.random_range(2..14), g.random_range(2..14), g.random_range(0..3)]))
            })
            .collect();
        let mut p: Params<f64> = init_network(&arch, RngStream::new(seed, 0xac2)).unwrap();
        for b in p.biases.iter_mut().flatten() {
            *b = g.random_range(-0.1..0.1);
        }
        let inputs: Vec<Image3D> = batch.iter().map(|b| b.0.clone()).collect();
        condition_rectifiers(&mut p, &inputs, 0.05, 0.3, RngStream::new(seed, 0xac3)).unwrap();
        let r = finite_difference_check(&p, &batch, &cfg, 1e-3).unwrap();
        worst = worst.max(r.max_rel_error);
        flips += r.pattern_changes;
    }
    outcome(worst < 1e-5 && flips == 0, format!("max relative error {worst:.2e} over 5 batches, {flips} rectifier flips"))
}

/// LOO AUC for 12-D equal-covariance Gaussians with `snr2 = dmu' S^-1 dmu`.
fn gaussian_loo_auc(snr2: f64, n: usize, seed: u64) -> f64 {
    let d = 12;
    let mut g = RngStream::new(seed, 0xc40).generator();
    // S = A A' with A lower triangular and a positive diagonal
    let a: Vec<f64> = (0..d * d)
        .map(|k| {
            let (i, j) = (k / d, k % d);
            if j > i { 0.0 } else if i == j { 1.0 + g.random_range(0.0..1.0) } else { 0.3 * g.random_range(-1.0..1.0) }
        })
        .collect();
    // with x = mu + A z, the whitened mean difference is A^-1 dmu; pick it directly
    let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut g)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let wdmu: Vec<f64> = dir.iter().map(|v| v / norm * snr2.sqrt()).collect();
    let dmu: Vec<f64> = (0..d).map(|i| (0..d).map(|j| a[i * d + j] * wdmu[j]).sum()).collect();
    let mut draw = |shift: bool| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut g)).collect();
                (0..d).map(|i| (0..d).map(|j| a[i * d + j] * z[j]).sum::<f64>() + if shift { dmu[i] } else { 0.0 }).collect()
            })
            .collect()
    };
    let present = FeatureSet::new(Label::DefectPresent, draw(true)).unwrap();
    let absent = FeatureSet::new(Label::DefectAbsent, draw(false)).unwrap();
    let s = loo_scores(&present, &absent, Ridge::default()).unwrap();
    auc_mann_whitney(&s.present, &s.absent).unwrap()
}

fn cho_analytic() -> Outcome {
    let phi = |x: f64| Normal::standard().cdf(x);
    // dmu' S^-1 dmu = 2 gives detectability sqrt(2) and AUC = Phi(1)
    let auc = gaussian_loo_auc(2.0, 2000, 1);
    let ok = (0.821..=0.861).contains(&auc);
    // the same pipeline at dmu' S^-1 dmu = 4 against its own closed form Phi(sqrt 2)
    let auc4 = gaussian_loo_auc(4.0, 2000, 2);
    let ok4 = (auc4 - phi(2f64.sqrt())).abs() <= 0.02;
    outcome(
        ok && ok4,
        format!(
            "LOO AUC {auc:.4} in [0.821, 0.861] (Phi(1) = {:.4}); at squared SNR 4: {auc4:.4} vs Phi(sqrt 2) = {:.4}",
            phi(1.0),
            phi(2f64.sqrt())
        ),
    )
}

fn channel_orthogonality() -> Outcome {
    let ch = build_channels(ROI_SIZE, &DEFAULT_BAND_EDGES).unwrap();
    let gram = ch.gram();
    let off = gram.iter().enumerate().flat_map(|(i, r)| r.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, v)| v.abs())).fold(0.0, f64::max);
    let dc = channelize(&ch, &Image2D::filled(ROI_SIZE, ROI_SIZE, 1.0)).unwrap().0.iter().map(|v| v.abs()).fold(0.0, f64::max);
    outcome(
        ch.n_channels() == 4 && off <= 1e-10 && dc <= 1e-10,
        format!("{} channels, max off-diagonal {off:.1e}, max DC response {dc:.1e}", ch.n_channels()),
    )
}

fn thinning_statistics() -> Outcome {
    let k = 1600.0;
    let counts = Sinogram::from_vec(100, 100, SinogramKind::Counts, vec![k; 10_000]).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, p) in [0.125, 0.0625].into_iter().enumerate() {
        let t = binomial_thin(&counts, p, RngStream::new(4, i as u64)).unwrap();
        let mean = t.sum() / 10_000.0;
        let sigma = (k * p * (1.0 - p) / 10_000.0).sqrt();
        let z = (mean - p * k) / sigma;
        let max = t.as_slice().iter().copied().fold(0.0, f64::max);
        ok &= z.abs() <= 4.0 && max <= k;
        parts.push(format!("p={p}: mean {mean:.3} ({z:+.2} sigma), max {max}"));
    }
    outcome(ok, parts.join("; "))
}

fn mlem_fixed_point() -> Outcome {
    let geom = Geometry { n_angles: 36, n_bins: 48, bin_width: 1.0 };
    let proj = Projector::new(&geom, 32, 32).unwrap();
    let mut g = RngStream::new(5, 5).generator();
    let truth = Image2D::from_fn(32, 32, |_, _| g.random_range(0.5..5.0));
    let sino = proj.forward(&truth).unwrap();
    let cfg = ReconConfig { n_iterations: 1, n_subsets: 1, init_value: None };
    let r = osem_reconstruct_from(&sino, &proj, &cfg, truth.clone()).unwrap();
    let rel = r.image.as_slice().iter().zip(truth.as_slice()).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
    outcome(rel <= 1e-9, format!("max relative deviation after one MLEM iteration {rel:.2e}"))
}

fn auc_oracle() -> Outcome {
    let mut g = RngStream::new(6, 6).generator();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (np, na) = (g.random_range(3..=50), g.random_range(3..=50));
        let levels = g.random_range(2..12);
        let mut draw = |n: usize| (0..n).map(|_| g.random_range(0..levels) as f64).collect::<Vec<_>>();
        let (p, a) = (draw(np), draw(na));
        let mut twice = 0u64;
        for x in &p {
            for y in &a {
                twice += if x > y { 2 } else if x == y { 1 } else { 0 };
            }
        }
        if auc_mann_whitney(&p, &a).unwrap() != twice as f64 / (2 * np * na) as f64 {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over 1000 tied score sets"))
}

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn fresh_dir(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

struct EndToEnd {
    evals: BTreeMap<u64, Evaluation>,
    minutes: f64,
}

fn end_to_end() -> Result<EndToEnd, String> {
    let cfg = Config::load(&repo_path("configs/default.json")).map_err(|e| e.to_string())?;
    let out = fresh_dir("acceptance-default");
    let t0 = Instant::now();
    taskdn::run_all(&cfg, &out).map_err(|e| e.to_string())?;
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    let mut evals = BTreeMap::new();
    for &d in &cfg.study.dose_levels {
        evals.insert(d.to_bits(), taskdn::evaluate::load_evaluation(&out, d).map_err(|e| e.to_string())?);
    }
    Ok(EndToEnd { evals, minutes })
}

fn auc(e: &Evaluation, m: Method, w: Wall) -> f64 {
    e.auc_of(m, w).map_or(f64::NAN, |r| r.auc)
}

fn detection_gain(run: &EndToEnd) -> Outcome {
    let Some(e) = run.evals.get(&0.0625f64.to_bits()) else { return outcome(false, "no evaluation at dose 0.0625") };
    let mut ok = run.minutes * par::current_num_threads() as f64 <= 45.0;
    let mut parts = vec![format!("pipeline {:.1} min on {} thread(s), lambda {}", run.minutes, par::current_num_threads(), e.selected_lambda)];
    for w in Wall::ALL {
        let (nd, ld, ts) = (auc(e, Method::NormalDose, w), auc(e, Method::LowDose, w), auc(e, Method::TaskSpecific, w));
        let paired = e.paired.iter().find(|r| r.wall == w && r.a == Method::LowDose && r.b == Method::TaskSpecific);
        let low = paired.map_or(f64::NAN, |r| r.one_sided_low);
        ok &= ts - ld >= 0.03 && low > 0.0 && nd >= ts - 0.02;
        parts.push(format!("{w}: ND {nd:.3}, LD {ld:.3}, TS {ts:.3}, gain {:+.3} (90% lower bound {low:+.3})", ts - ld));
    }
    outcome(ok, parts.join("; "))
}

fn fidelity_gain(run: &EndToEnd) -> Outcome {
    let mut ok = !run.evals.is_empty();
    let mut parts = Vec::new();
    for e in run.evals.values() {
        let f = |m: Method| e.fidelity.iter().find(|r| r.method == m).map_or((f64::NAN, f64::NAN), |r| (r.rmse, r.ssim));
        let (ld, ts) = (f(Method::LowDose), f(Method::TaskSpecific));
        ok &= ts.0 < ld.0 && ts.1 > ld.1;
        parts.push(format!("p={}: RMSE {:.3} -> {:.3}, SSIM {:.4} -> {:.4}", e.dose_level, ld.0, ts.0, ld.1, ts.1));
    }
    outcome(ok, parts.join("; "))
}

fn contrast_trend(run: &EndToEnd) -> Outcome {
    let mut ok = !run.evals.is_empty();
    let mut parts = Vec::new();
    for e in run.evals.values() {
        let c = |m: Method| e.contrast.iter().find(|r| r.method == m).map_or(f64::NAN, |r| r.mean_contrast);
        let (ta, ts) = (c(Method::TaskAgnostic), c(Method::TaskSpecific));
        ok &= ts > ta;
        parts.push(format!("p={}: task-agnostic {ta:.4}, task-specific {ts:.4}", e.dose_level));
    }
    outcome(ok, parts.join("; "))
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let mut cfg: Config = serde_json::from_str(&std::fs::read_to_string(repo_path("configs/smoke.json")).unwrap()).unwrap();
    let dirs = [fresh_dir("acceptance-rerun-a"), fresh_dir("acceptance-rerun-b")];
    for d in &dirs {
        cfg.out_dir = d.display().to_string();
        if let Err(e) = par::sequential(|| taskdn::run_all(&cfg, d)) {
            return outcome(false, format!("run failed: {e}"));
        }
    }
    let (a, b) = (tree(&dirs[0]), tree(&dirs[1]));
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).chain(b.keys().filter(|k| !a.contains_key(*k))).collect();
    let kinds = ["manifest.json", ".tdnw", "summary.md"];
    let covered = kinds.iter().all(|k| a.keys().any(|p| p.ends_with(k)));
    outcome(
        differing.is_empty() && covered,
        format!("{} files compared, {} differ{}", a.len(), differing.len(), differing.first().map_or(String::new(), |p| format!(" (first: {p})"))),
    )
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |n: u32, o: Outcome| {
        println!("criterion {n:>2}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, gradient_correctness());
    report(2, cho_analytic());
    report(3, channel_orthogonality());
    report(4, thinning_statistics());
    report(5, mlem_fixed_point());
    report(6, auc_oracle());
    match end_to_end() {
        Ok(run) => {
            report(7, detection_gain(&run));
            report(8, fidelity_gain(&run));
            report(9, contrast_trend(&run));
        }
        Err(e) => {
            for n in 7..=9 {
                report(n, outcome(false, format!("end-to-end run failed: {e}")));
            }
        }
    }
    report(10, determinism());
    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
    } else {
        println!("acceptance: {} of {} criteria pass; failing {failed:?}", results.len() - failed.len(), results.len());
        if std::env::var_os("TASKDN_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
