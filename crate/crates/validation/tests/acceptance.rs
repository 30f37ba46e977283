//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass a criterion number to run just
//! that one, e.g. `cargo test -p choroid-validation --test acceptance -- 6`.
//!
//! CLI runs re-execute this binary with `CHOROID_CLI_CHILD` set, which
//! makes it behave exactly like the `choroid` executable.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Instant;

use choroid_core::grid::Grid;
use choroid_core::ingest::{destandardize, standardize, PreprocessConfig};
use choroid_core::measure::MeasureConfig;
use choroid_core::nnexec::kernels::conv2d;
use choroid_core::nnexec::{Conv2dParams, Tensor};
use choroid_core::phantom::{analytic_measurements, generate, PhantomSpec};
use choroid_core::pipeline::{measure_mask, process_scan};
use choroid_core::segment::{binarize, largest_component, ChoroidMask, MapSource, ProbabilityMap, SegmenterBackend};
use choroid_core::stats::{self, agreement, auc_scores, bland_altman, linfit_ci, mae, pearson, spearman, t_quantile};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use choroid_validation::{fixture, path_str as s, snapshot};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn conv_equivalence() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    let (mut worst_elem, mut worst_norm) = (0.0f64, 0.0f64);
    let mut seen = std::collections::BTreeSet::new();
    let cases = 250;
    for _ in 0..cases {
        let kernel = [1, 3, 5][rng.random_range(0..3)];
        let stride = rng.random_range(1..=2);
        let depthwise = rng.random_bool(0.5);
        let (in_ch, out_ch, groups) = if depthwise {
            let c = rng.random_range(2..=8);
            (c, c, c)
        } else {
            (rng.random_range(1..=8), rng.random_range(1..=8), 1)
        };
        let p = Conv2dParams { in_ch, out_ch, kernel, stride, padding: rng.random_range(0..=kernel / 2), groups };
        seen.insert((kernel, stride, depthwise));
        let (h, w) = (rng.random_range(kernel..kernel + 20), rng.random_range(kernel..kernel + 20));
        let input = Tensor::from_vec(in_ch, h, w, (0..in_ch * h * w).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let weights: Vec<f32> = (0..p.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<f32> = (0..out_ch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = conv2d(&input, &weights, Some(&bias), &p).unwrap();
        let want = common::naive_conv(&input, &weights, Some(&bias), &p);
        if got.data.len() != want.len() {
            return outcome(false, format!("shape mismatch for {p:?}"));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (&a, &b) in got.data.iter().zip(&want) {
            let e = (a as f64 - b).abs();
            worst_elem = worst_elem.max(e / b.abs().max(1.0));
            num += e * e;
            den += b * b;
        }
        worst_norm = worst_norm.max((num / den.max(f64::MIN_POSITIVE)).sqrt());
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_elem <= 1e-5 && worst_norm <= 1e-5 && seen.len() == 12 && secs < 60.0;
    outcome(
        pass,
        format!(
            "{cases} configs covering {}/12 kernel/stride/group combos, max elementwise rel err {worst_elem:.2e}, max normwise rel err {worst_norm:.2e}, {secs:.1} s < 60 s",
            seen.len()
        ),
    )
}

fn phantom_fidelity() -> Outcome {
    let t0 = Instant::now();
    let cfg = MeasureConfig::default();
    let pre = PreprocessConfig::default();
    let (mut th, mut n_th, mut area) = (0.0, 0usize, 0.0);
    for i in 0..100u64 {
        let spec = PhantomSpec::randomized(0xACC2_0000 + i);
        let p = generate(&spec).unwrap();
        let backend = SegmenterBackend::PhantomOracle(MapSource::Map(p.pmap.clone()));
        let r = process_scan(&p.scan, "p", &backend, &pre, 0.5, &cfg).unwrap();
        let truth = analytic_measurements(&spec, &cfg).unwrap();
        for (a, b) in r.measurements.thickness.loci.iter().zip(&truth.thickness) {
            th += (a.thickness_um - b.thickness_um).abs();
            n_th += 1;
        }
        area += (r.measurements.area_mm2 - truth.area_vertical_mm2).abs();
    }
    let (th, area) = (th / n_th as f64, area / 100.0);
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        th < 5.0 && area < 0.01 && secs < 120.0,
        format!("100 phantoms, thickness MAE {th:.3} um < 5, area MAE {area:.5} mm2 < 0.01, {secs:.1} s < 120 s"),
    )
}

fn oblique_geometry() -> Outcome {
    let cfg = MeasureConfig::default();
    let d = 300.0;
    let mut parts = Vec::new();
    let mut pass = true;
    for deg in [5.0f64, 10.0, 20.0] {
        let th = deg.to_radians();
        let mut spec = PhantomSpec::flat(d * th.cos(), 3000.0, 7);
        spec.meta.height_px = 1600;
        spec.upper_poly = [3000.0, th.tan(), 0.0];
        let p = generate(&spec).unwrap();
        let (_, m) = measure_mask(&p.mask, &p.scan.meta, &cfg).unwrap();
        let want = d * th.cos();
        let err = m.thickness.loci.iter().map(|l| (l.thickness_um - want).abs()).fold(0.0, f64::max);
        pass &= err <= 0.5 && m.thickness.loci.len() == 3;
        parts.push(format!("{deg} deg max err {err:.3} um"));
    }
    outcome(pass, format!("{}; tolerance 0.5 um", parts.join(", ")))
}

fn statistics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC4);
    let mut auc_err = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(2..80);
        let levels = if case % 2 == 0 { 5 } else { 1_000_000 };
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| (rng.random_range(0..levels) + l as u32 * levels / 3) as f64 / levels as f64)
            .collect();
        auc_err = auc_err.max((auc_scores(&scores, &labels).unwrap() - common::roc_sweep_auc(&scores, &labels)).abs());
    }
    let mut corr_err = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(3..60);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 4.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-2.0..2.0)).collect();
        if x.iter().all(|&v| v == x[0]) {
            continue;
        }
        for e in [
            pearson(&x, &y).unwrap() - common::pearson_def(&x, &y),
            spearman(&x, &y).unwrap() - common::spearman_def(&x, &y),
            mae(&x, &y).unwrap() - common::mae_def(&x, &y),
        ] {
            corr_err = corr_err.max(e.abs());
        }
    }
    let t = t_quantile(0.975, 25.0).unwrap();
    let noise = Normal::new(0.0, 15.0).unwrap();
    let (mut slope_hits, mut icept_hits) = (0, 0);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..30).map(|_| rng.random_range(150.0..450.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.9 * v + 25.0 + noise.sample(&mut rng)).collect();
        let fit = linfit_ci(&x, &y, 0.95).unwrap();
        slope_hits += (fit.slope_ci.0 <= 0.9 && 0.9 <= fit.slope_ci.1) as usize;
        icept_hits += (fit.intercept_ci.0 <= 25.0 && 25.0 <= fit.intercept_ci.1) as usize;
    }
    let pass = auc_err <= 1e-9
        && corr_err <= 1e-12
        && (t - 2.0595).abs() <= 1e-4
        && slope_hits >= 930
        && icept_hits >= 930;
    outcome(
        pass,
        format!(
            "AUC max err {auc_err:.1e}, pearson/spearman/MAE max err {corr_err:.1e}, t(0.975, 25) = {t:.5}, CI coverage slope {:.1}% intercept {:.1}%",
            slope_hits as f64 / 10.0,
            icept_hits as f64 / 10.0
        ),
    )
}

fn bland_altman_structure() -> Outcome {
    // 51 differences spread over [-5, 5] plus three gross outliers: exactly
    // three points fall outside the limits.
    let reference: Vec<f64> = (0..54).map(|i| 200.0 + 4.0 * i as f64).collect();
    let mut diffs: Vec<f64> = (0..51).map(|i| -5.0 + 10.0 * i as f64 / 50.0).collect();
    diffs.insert(10, 60.0);
    diffs.insert(30, -55.0);
    diffs.insert(50, 70.0);
    let method: Vec<f64> = reference.iter().zip(&diffs).map(|(r, d)| r + d).collect();
    let ba = bland_altman(&method, &reference).unwrap();
    let hand = diffs.iter().filter(|d| d.abs() > 50.0).count();
    let same = agreement(&reference, &reference).unwrap().bland_altman;
    let pass = ba.n == 54 && ba.outside_loa_count == hand && hand == 3 && same.loa_low == 0.0 && same.loa_high == 0.0;
    outcome(
        pass,
        format!(
            "54 pairs, LoA [{:.2}, {:.2}], outside {} (hand count {hand}); identical series LoA [{}, {}]",
            ba.loa_low, ba.loa_high, ba.outside_loa_count, same.loa_low, same.loa_high
        ),
    )
}

fn bin(args: &[&str]) -> Result<(), String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let out = Command::new(exe)
        .env(CHILD_ENV, "1")
        .args(args)
        .stdin(Stdio::null())
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("choroid {} exited with {}: {}", args.join(" "), out.status, String::from_utf8_lossy(&out.stderr)))
    }
}

fn timed_segment(corpus: &Path, out: &Path, workers: usize) -> Result<(f64, f64), String> {
    let (spec, weights) = (fixture("small_unet.json"), fixture("small_unet.weights.bin"));
    let w = workers.to_string();
    let t0 = Instant::now();
    bin(&[
        "segment", s(corpus), "--backend", "cnn", "--spec", s(&spec), "--weights", s(&weights),
        "--measure", "--workers", &w, "--out", s(out),
    ])?;
    let wall = t0.elapsed().as_secs_f64();
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("timing/summary.json")).unwrap()).unwrap();
    Ok((wall, summary["mean_s"].as_f64().unwrap()))
}

fn throughput() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let corpus = d.path().join("volume");
    if let Err(e) = bin(&["phantom", "--out", s(&corpus), "--n", "61", "--seed", "6"]) {
        return outcome(false, e);
    }
    let run = || -> Result<Outcome, String> {
        let (one, four) = (d.path().join("w1"), d.path().join("w4"));
        let (wall1, mean1) = timed_segment(&corpus, &one, 1)?;
        let (wall4, _) = timed_segment(&corpus, &four, 4)?;
        let images = std::fs::read_dir(&one).unwrap().filter(|e| {
            e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".pred.pmap")
        }).count();
        let identical = snapshot(&one) == snapshot(&four);
        let speedup = wall1 / wall4;
        let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let pass = images == 61 && wall1 <= 76.0 && mean1 <= 1.25 && speedup >= 2.0 && identical;
        Ok(outcome(
            pass,
            format!(
                "61 images at 768x768: 1 worker {wall1:.1} s total (<= 76), {mean1:.3} s/img (<= 1.25); 4 workers {wall4:.1} s, speedup {speedup:.2}x (>= 2) on {cores} available core(s); outputs identical: {identical}"
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, e))
}

fn determinism() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let (spec, weights) = (fixture("small_unet.json"), fixture("small_unet.weights.bin"));
    let suite = |root: &Path| -> Result<(), String> {
        let p = |x: &str| root.join(x);
        bin(&["phantom", "--out", s(&p("corpus")), "--n", "4", "--seed", "17"])?;
        bin(&["segment", s(&p("corpus")), "--backend", "oracle", "--measure", "--out", s(&p("oracle"))])?;
        bin(&[
            "segment", s(&p("corpus")), "--backend", "cnn", "--spec", s(&spec), "--weights", s(&weights),
            "--measure", "--workers", "2", "--out", s(&p("cnn")),
        ])?;
        bin(&["measure", s(&p("cnn")), "--suffix", ".pred.pmap", "--meta-dir", s(&p("corpus")), "--out", s(&p("remeasure"))])?;
        let truth = format!("{}/{{stem}}.truth.pmap", s(&p("corpus")));
        bin(&[
            "compare", s(&p("cnn/measurements.csv")), s(&p("oracle/measurements.csv")), "--out", s(&p("compare")),
            "--maps-a", "{stem}.pred.pmap", "--maps-b", &truth,
        ])?;
        bin(&["augment", s(&p("corpus")), "--out", s(&p("augment")), "--seed", "5"])
    };
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    if let Err(e) = suite(&a).and_then(|_| suite(&b)) {
        return outcome(false, e);
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    let differing: std::collections::BTreeSet<String> = sa
        .keys()
        .chain(sb.keys())
        .filter(|k| sa.get(*k) != sb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let kinds: std::collections::BTreeSet<String> = sa
        .keys()
        .filter_map(|k| k.extension().map(|e| e.to_string_lossy().into_owned()))
        .collect();
    let all_kinds = ["csv", "json", "svg", "pmap", "png", "jsonl"].iter().all(|k| kinds.contains(*k));
    outcome(
        differing.is_empty() && all_kinds,
        format!(
            "6 subcommand runs x2 with stdin closed, {} files compared ({}), differing: {:?}",
            sa.len(),
            kinds.into_iter().collect::<Vec<_>>().join("/"),
            differing
        ),
    )
}

fn grid_f32() -> impl Strategy<Value = Grid<f32>> {
    (1..=32usize, 1..=16usize).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f32..=1.0, w * h).prop_map(move |d| Grid::from_vec(w, h, d).unwrap())
    })
}

fn mask(w: usize, h: usize, p: f64) -> impl Strategy<Value = ChoroidMask> {
    prop::collection::vec(prop::bool::weighted(p), w * h).prop_map(move |d| ChoroidMask::new(Grid::from_vec(w, h, d).unwrap()))
}

fn check<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let config = Config { cases: 1000, failure_persistence: None, ..Config::default() };
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let mut runner = TestRunner::new_with_rng(config, rng);
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn invariants() -> Outcome {
    let pre = PreprocessConfig::default();
    let results = [
        check("flip involution", grid_f32(), |g| {
            prop_assert_eq!(choroid_core::augment::horizontal_flip(&choroid_core::augment::horizontal_flip(&g)), g);
            Ok(())
        }),
        check("standardize invertibility", grid_f32(), |g| {
            let back = destandardize(&standardize(&g, &pre), &pre);
            for (&x, &y) in g.as_slice().iter().zip(back.as_slice()) {
                prop_assert!((x - y).abs() <= f32::EPSILON * x.abs().max(pre.standardize_shift));
            }
            Ok(())
        }),
        check(
            "dice symmetry/bounds",
            (1..=16usize, 1..=16usize).prop_flat_map(|(w, h)| (mask(w, h, 0.5), mask(w, h, 0.5))),
            |(a, b)| {
                let d = stats::dice(&a, &b).unwrap();
                prop_assert_eq!(d, stats::dice(&b, &a).unwrap());
                prop_assert!((0.0..=1.0).contains(&d));
                prop_assert_eq!(stats::dice(&a, &a).unwrap(), 1.0);
                Ok(())
            },
        ),
        check(
            "AUC monotone invariance",
            (2..60usize)
                .prop_flat_map(|n| (prop::collection::vec((0u32..12).prop_map(|v| v as f64 / 11.0), n), prop::collection::vec(any::<bool>(), n)))
                .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b)),
            |(s, l)| {
                let base = auc_scores(&s, &l).unwrap();
                let t: Vec<f64> = s.iter().map(|v| 1.0 / (1.0 + (-(5.0 * v - 2.0)).exp())).collect();
                prop_assert_eq!(auc_scores(&t, &l).unwrap(), base);
                let c: Vec<f64> = s.iter().map(|v| v * v * v + 2.0 * v - 7.0).collect();
                prop_assert_eq!(auc_scores(&c, &l).unwrap(), base);
                Ok(())
            },
        ),
        check("binarize monotonicity", (grid_f32(), 0.0f32..=1.0, 0.0f32..=1.0), |(g, t1, t2)| {
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let p = ProbabilityMap::new(g).unwrap();
            let (a, b) = (binarize(&p, lo).unwrap(), binarize(&p, hi).unwrap());
            for (&x, &y) in a.grid().as_slice().iter().zip(b.grid().as_slice()) {
                prop_assert!(x || !y);
            }
            Ok(())
        }),
        check(
            "largest-component idempotence",
            (1..=24usize, 1..=24usize).prop_flat_map(|(w, h)| mask(w, h, 0.35)),
            |m| {
                let once = largest_component(&m);
                prop_assert_eq!(&largest_component(&once), &once);
                Ok(())
            },
        ),
    ];
    let failures: Vec<String> = results.into_iter().filter_map(Result::err).collect();
    outcome(failures.is_empty(), if failures.is_empty() {
        "6 properties x 1000 cases".to_string()
    } else {
        failures.join("; ")
    })
}

const CHILD_ENV: &str = "CHOROID_CLI_CHILD";

fn main() -> std::process::ExitCode {
    if std::env::var_os(CHILD_ENV).is_some() {
        return choroid_cli::main_with_args(std::env::args_os());
    }
    let criteria: [(u8, &str, fn() -> Outcome); 8] = [
        (1, "convolution executor equivalence", conv_equivalence),
        (2, "end-to-end phantom fidelity", phantom_fidelity),
        (3, "oblique-band geometry", oblique_geometry),
        (4, "statistics oracle suite", statistics_oracles),
        (5, "Bland-Altman structure", bland_altman_structure),
        (6, "throughput budget", throughput),
        (7, "determinism and automation", determinism),
        (8, "invariant suite", invariants),
    ];
    if std::env::args().any(|a| a == "--list") {
        for (n, _, _) in criteria {
            println!("criterion_{n}: test");
        }
        return std::process::ExitCode::SUCCESS;
    }
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |n: u8, name: &str| filters.is_empty() || filters.iter().any(|f| *f == n.to_string() || name.contains(f.as_str()));
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !selected(n, name) {
            continue;
        }
        let o = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !o.pass as usize;
        println!("{} criterion {n} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        return std::process::ExitCode::FAILURE;
    }
    std::process::ExitCode::SUCCESS
}
