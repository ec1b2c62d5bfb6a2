//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if a required criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset. The end-to-end
//! experiment (6) runs at reduced scale on procedural data unless
//! `CURVPROBE_ACCEPT_FULL=1` is set; `CURVPROBE_CIFAR_DIR` points it at the
//! real CIFAR-10 binaries.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use curvprobe::attacks::{fgsm, ifgsm};
use curvprobe::boundary::{travel_point, travel_to_boundary, TravelParams};
use curvprobe::calibration::calibrate;
use curvprobe::model::forward_one;
use curvprobe::projection::{grid_features, grid_lines, line_residual, pca_top2, planar_residual, project2d, Basis, GridConfig};
use curvprobe::reference::AffineClassifier;
use curvprobe::rng::seeded;
use curvprobe::stats::{median, pearson};
use curvprobe::tensor::{gradcheck, Graph, Tensor, Var};
use curvprobe::trajectory::run_trajectory;
use curvprobe::zoo::{ArchConfig, CnnConfig, ModelConfig, Normalization, VitConfig, ZooModel};
use curvprobe::Classifier;
use mimalloc::MiMalloc;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

const BIN: &str = env!("CARGO_BIN_EXE_curvprobe");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn main() -> ExitCode {
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: u8| only.is_empty() || only.contains(&n);
    let criteria: [(u8, &str, fn() -> Result<Outcome>); 5] = [
        (1, "gradient correctness", c1_gradients),
        (2, "calibration oracle", c2_calibration),
        (3, "boundary-travel oracle", c3_boundary),
        (4, "linear zero-curvature", c4_linear),
        (5, "I-FGSM contract", c5_ifgsm),
    ];
    let mut results: BTreeMap<u8, bool> = BTreeMap::new();
    for (n, name, f) in criteria {
        if selected(n) {
            results.insert(n, report(n, name, f));
        }
    }
    if selected(6) {
        // The experiment's escape hatch leans on the invariants of 1-5.
        let invariants = (1..=5).all(|n| results.get(&n).copied().unwrap_or(true));
        results.insert(6, report(6, "end-to-end desk experiment", || c6_experiment(invariants)));
    }
    for (n, name, f) in [(7u8, "reproducibility from manifests", c7_reproducibility as fn() -> Result<Outcome>), (8, "projection oracle", c8_projection)] {
        if selected(n) {
            results.insert(n, report(n, name, f));
        }
    }
    let failed: Vec<u8> = results.iter().filter(|(_, ok)| !**ok).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!(" (failed: {failed:?})") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report(n: u8, name: &str, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let secs = t.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(Ok(o)) => (o.pass, o.detail),
        Ok(Err(e)) => (false, format!("error: {e:#}")),
        Err(_) => (false, "panicked".to_string()),
    };
    println!("[{}] criterion {n} {name}: {detail} ({secs:.1}s)", if pass { "PASS" } else { "FAIL" });
    pass
}

// ---------------------------------------------------------------- 1

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // Away from zero so relu kinks stay outside the difference stencil.
    let data = (0..n)
        .map(|_| {
            let v: f32 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts an output against fixed random weights into a scalar.
fn contract<'g>(g: &'g Graph, y: Var<'g>, seed: u64) -> curvprobe::tensor::Result<Var<'g>> {
    let mut rng = seeded(seed);
    let w = g.constant(rand_tensor(&mut rng, &y.shape()));
    y.mul(w)?.sum()
}

type MicroModel = (
    &'static [&'static str],
    Vec<Tensor>,
    Box<dyn for<'g> Fn(&'g Graph, &[Var<'g>]) -> curvprobe::tensor::Result<Var<'g>>>,
);

/// Micro-model `kind` with shapes and values drawn from `seed`; returns the
/// primitives it exercises, its inputs and the scalar function.
fn micro_model(kind: usize, seed: u64) -> MicroModel {
    let mut rng = seeded(seed);
    let mut r = |lo: usize, hi: usize| rng.random_range(lo..=hi);
    // Normalized axes get at least 3 entries; with 2 the output is constant.
    let (b, d, h, k) = (r(2, 4), r(3, 6), r(3, 6), r(2, 4));
    let (c, s) = (r(1, 3), r(3, 5));
    let mut rng = seeded(seed ^ 0xfeed);
    let mut t = |shape: &[usize]| rand_tensor(&mut rng, shape);
    let labels: Vec<usize> = (0..b).map(|i| (i + seed as usize) % k).collect();
    match kind {
        0 => (
            &["matmul", "add_bcast", "gelu", "cross_entropy"],
            vec![t(&[b, d]), t(&[d, h]), t(&[h]), t(&[h, k])],
            Box::new(move |_, v| v[0].matmul(v[1])?.add_bcast(v[2])?.gelu()?.matmul(v[3])?.cross_entropy(&labels)),
        ),
        1 => (
            &["relu", "matmul", "mul", "sum"],
            vec![t(&[b, d]), t(&[d, h])],
            // relu acts on the drawn inputs, which stay 0.1 clear of the kink.
            Box::new(move |g, v| contract(g, v[0].relu()?.matmul(v[1])?, seed)),
        ),
        2 => (
            &["unfold", "matmul", "reshape", "permute", "mean_last", "cross_entropy"],
            vec![t(&[b, c, s, s]), t(&[c * 9, k])],
            Box::new(move |_, v| {
                let y = v[0].unfold(3, 1, 1)?.matmul(v[1])?;
                y.reshape(&[b, s * s, k])?.permute(&[0, 2, 1])?.mean_last()?.cross_entropy(&labels)
            }),
        ),
        3 => (
            &["unfold", "matmul", "layer_norm", "transpose", "scale", "softmax"],
            vec![t(&[1, c, 8, 8]), t(&[c * 16, h]), t(&[h, h]), t(&[h, h]), t(&[h, h])],
            Box::new(move |g, v| {
                let e = v[0].unfold(4, 4, 0)?.matmul(v[1])?.layer_norm(1e-5)?;
                let (q, kk, vv) = (e.matmul(v[2])?, e.matmul(v[3])?, e.matmul(v[4])?);
                let att = q.matmul(kk.transpose()?)?.scale(1.0 / (h as f32).sqrt())?.softmax()?;
                contract(g, att.matmul(vv)?, seed)
            }),
        ),
        4 => (
            &["matmul", "batch_norm(train)", "gelu", "mean"],
            vec![t(&[b + 1, d]), t(&[d, h]), t(&[h]), t(&[h])],
            Box::new(move |g, v| {
                let (y, _) = v[0].matmul(v[1])?.batch_norm(v[2], v[3], 1e-5, None)?;
                contract(g, y.gelu()?, seed)?.mean()
            }),
        ),
        5 => {
            let mean: Vec<f32> = (0..c).map(|i| 0.1 * i as f32 - 0.1).collect();
            let var: Vec<f32> = (0..c).map(|i| 0.5 + 0.25 * i as f32).collect();
            (
                &["batch_norm(eval)", "mean_last"],
                vec![t(&[b, c, s]), t(&[c]), t(&[c])],
                Box::new(move |g, v| {
                    let (y, _) = v[0].batch_norm(v[1], v[2], 1e-5, Some((&mean, &var)))?;
                    contract(g, y.mean_last()?, seed)
                }),
            )
        }
        6 => (
            &["add", "sub", "mul", "mul_bcast", "transpose", "reshape"],
            vec![t(&[d, h]), t(&[d, h]), t(&[h])],
            Box::new(move |g, v| {
                let y = v[0].add(v[1])?.mul(v[0])?.sub(v[1])?.mul_bcast(v[2])?.transpose()?;
                contract(g, y.reshape(&[d * h])?, seed)
            }),
        ),
        _ => (
            &["layer_norm", "softmax", "scale", "matmul", "cross_entropy"],
            vec![t(&[b, d]), t(&[d, k])],
            Box::new(move |_, v| v[0].layer_norm(1e-5)?.scale(2.0)?.softmax()?.matmul(v[1])?.cross_entropy(&labels)),
        ),
    }
}

fn c1_gradients() -> Result<Outcome> {
    const KINDS: usize = 8;
    const PER_KIND: u64 = 8;
    // f32 evaluation noise scales like 1e-7 / H and truncation like H^2.
    const H: f32 = 3e-3;
    let mut covered = std::collections::BTreeSet::new();
    let (mut worst, mut models, mut bad) = (0.0f64, 0, Vec::new());
    for kind in 0..KINDS {
        for s in 0..PER_KIND {
            let seed = 1000 * kind as u64 + s;
            let (prims, inputs, f) = micro_model(kind, seed);
            covered.extend(prims.iter().copied());
            let reports = gradcheck::check(&inputs, H, |g, v| f(g, v))?;
            let err = reports.iter().map(|r| r.rel_error).fold(0.0, f64::max);
            if !(err < 1e-3) {
                bad.push(format!("kind {kind} seed {seed}: {err:.2e}"));
            }
            worst = worst.max(err);
            models += 1;
        }
    }
    outcome(
        bad.is_empty() && models >= 50,
        format!(
            "{models} micro-models over {} primitives, max relative error {worst:.2e} (< 1e-3){}",
            covered.len(),
            if bad.is_empty() { String::new() } else { format!("; failing: {}", bad.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Direct per-bin recount over all predictions.
fn brute_force_ece(preds: &[(f64, bool)], k: usize) -> (f64, f64) {
    let n = preds.len() as f64;
    let (mut ece, mut sece) = (0.0, 0.0);
    for i in 0..k {
        let (lo, hi) = (i as f64 / k as f64, (i + 1) as f64 / k as f64);
        let members: Vec<&(f64, bool)> = preds.iter().filter(|p| p.0 > lo && p.0 <= hi).collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let acc = members.iter().filter(|p| p.1).count() as f64 / m;
        let conf = members.iter().map(|p| p.0).sum::<f64>() / m;
        ece += m / n * (acc - conf).abs();
        sece += m / n * (acc - conf);
    }
    (ece, sece)
}

fn c2_calibration() -> Result<Outcome> {
    let mut rng = seeded(2);
    let (mut max_diff, mut sign_ok) = (0.0f64, true);
    for _ in 0..1000 {
        let n = rng.random_range(1..300);
        let k = rng.random_range(1..21);
        let preds: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                // Some confidences sit exactly on bin edges.
                let c = if rng.random_bool(0.1) {
                    rng.random_range(1..=k) as f64 / k as f64
                } else {
                    rng.random_range(1e-9..=1.0)
                };
                (c, rng.random_bool(c))
            })
            .collect();
        let r = calibrate(&preds, k)?;
        let (ece, sece) = brute_force_ece(&preds, k);
        max_diff = max_diff.max((r.ece - ece).abs()).max((r.sece - sece).abs());
        sign_ok &= r.sece.abs() <= r.ece + 1e-15;
    }
    // Bin (0.4, 0.5] is 0.1 overconfident and bin (0.8, 0.9] 0.1 underconfident.
    let example: Vec<(f64, bool)> = (0..10).map(|i| (0.5, i < 4)).chain((0..10).map(|_| (0.9, true))).collect();
    let r = calibrate(&example, 10)?;
    let example_ok = (r.ece - 0.1).abs() < 1e-12 && r.sece.abs() < 1e-12;
    outcome(
        max_diff <= 1e-12 && sign_ok && example_ok,
        format!(
            "1000 random sets agree with a brute-force recount (max |diff| {max_diff:.1e}), |sECE| <= ECE on all: {sign_ok}; two-bin example ECE {:.3} sECE {:.1e}",
            r.ece, r.sece
        ),
    )
}

// ---------------------------------------------------------------- 3

fn c3_boundary() -> Result<Outcome> {
    const S: [usize; 3] = [1, 4, 4];
    const D: usize = 16;
    let params = TravelParams::default();
    let mut rng = seeded(3);
    let (mut worst, mut sound, mut runs) = (0.0f64, true, 0);
    for _ in 0..100 {
        let w: Vec<f64> = (0..D).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x: Vec<f32> = (0..D).map(|_| rng.random_range(0.4f32..0.6)).collect();
        // Random +-1 direction that lowers the class-1 score.
        let mut d: Vec<f32> = (0..D).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let mut slope: f64 = w.iter().zip(&d).map(|(a, b)| a * *b as f64).sum();
        if slope > 0.0 {
            d.iter_mut().for_each(|v| *v = -*v);
            slope = -slope;
        }
        if slope > -0.1 {
            d = w.iter().map(|v| if *v > 0.0 { -1.0 } else { 1.0 }).collect();
            slope = -w.iter().map(|v| v.abs()).sum::<f64>();
        }
        let t: f64 = rng.random_range(0.002..0.2);
        let base: f64 = w.iter().zip(&x).map(|(a, b)| a * *b as f64).sum();
        let offset = -slope * t - base;
        let m = AffineClassifier::halfspace(S, &w, offset)?;
        let score = |p: &[f32]| offset + w.iter().zip(p).map(|(a, b)| a * *b as f64).sum::<f64>();
        let r = travel_to_boundary(&m, &x, 1, &d, &params)?;
        runs += 1;
        let Some(e) = r.eps_star else {
            sound = false;
            continue;
        };
        worst = worst.max((e - t).abs() / t);
        // Soundness: eps_star flips, lo does not, and every probe agrees with
        // the exact oracle wherever the f32 logit is not within rounding of 0.
        let agrees = |eps: f64, flipped: bool| {
            let sc = score(&travel_point(&x, &d, eps));
            sc.abs() < 1e-5 || flipped == (sc <= 0.0)
        };
        sound &= agrees(e, true) && (r.lo == 0.0 || agrees(r.lo, false)) && r.lo <= e;
        sound &= r.trace.iter().all(|&(eps, f)| agrees(eps, f));
    }
    let tol = 2.0 * params.eps_tol;
    outcome(
        worst <= tol && sound,
        format!("{runs} linear classifiers: max relative error of eps_star {worst:.2e} (<= {tol}), bracket sound on all: {sound}"),
    )
}

// ---------------------------------------------------------------- 4

fn c4_linear() -> Result<Outcome> {
    const S: [usize; 3] = [3, 8, 8];
    const D: usize = 192;
    const N: usize = 50;
    // Dyadic start points, +-1 directions and a power-of-two step keep every
    // trajectory point exact in f32, so only the f64 feature map remains.
    let step = 2f64.powi(-9);
    let (mut max_theta, mut max_spread, mut models) = (0.0f64, 0.0f64, 0);
    let mut max_theta_default = 0.0f64;
    for seed in 0..100u64 {
        let m = AffineClassifier::random(S, 10, 3, seed)?;
        let mut rng = seeded(seed + 4000);
        let x: Vec<f32> = (0..D).map(|_| rng.random_range(64..192) as f32 / 256.0).collect();
        let d: Vec<f32> = (0..D).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let rec = run_trajectory(&m, &x, &d, N, step * N as f64)?;
        max_theta = max_theta.max(rec.theta.iter().map(|t| t.unwrap_or(f64::INFINITY)).fold(0.0, f64::max));
        let (lo, hi) = rec.omega.iter().fold((f64::INFINITY, 0.0f64), |(a, b), w| (a.min(*w), b.max(*w)));
        max_spread = max_spread.max((hi - lo) / hi);
        models += 1;

        // The default step on an arbitrary start, for reference only.
        let xr: Vec<f32> = (0..D).map(|_| rng.random_range(0.2f32..0.8)).collect();
        let rec = run_trajectory(&m, &xr, &d, N, 0.002 * N as f64)?;
        max_theta_default = max_theta_default.max(rec.theta.iter().flatten().copied().fold(0.0, f64::max));
    }
    outcome(
        max_theta < 1e-5 && max_spread < 1e-5,
        format!(
            "{models} affine models: max theta {max_theta:.2e} rad, max relative omega spread {max_spread:.2e} (both < 1e-5); \
             at the default step 0.002 from arbitrary starts max theta is {max_theta_default:.2e} (f32 input rounding, informational)"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn tiny_models() -> Result<Vec<ZooModel>> {
    let norm = Normalization {
        mean: vec![0.5, 0.4, 0.3],
        std: vec![0.25, 0.2, 0.3],
    };
    let cnn = ModelConfig {
        arch: ArchConfig::Cnn(CnnConfig {
            widths: vec![4, 8],
            blocks: vec![1, 1],
        }),
        input: [3, 8, 8],
        num_classes: 3,
        normalization: norm.clone(),
    };
    let vit = ModelConfig {
        arch: ArchConfig::Vit(VitConfig {
            patch: 4,
            embed_dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
        }),
        input: [3, 8, 8],
        num_classes: 3,
        normalization: norm,
    };
    Ok(vec![ZooModel::new(cnn, 5)?, ZooModel::new(vit, 6)?])
}

fn c5_ifgsm() -> Result<Outcome> {
    const D: usize = 192;
    let zoo = tiny_models()?;
    let affine: Vec<AffineClassifier> = (0..4).map(|s| AffineClassifier::random([3, 8, 8], 6, 3, s)).collect::<Result<_, _>>()?;
    let models: Vec<&dyn Classifier> = zoo.iter().map(|m| m as &dyn Classifier).chain(affine.iter().map(|m| m as &dyn Classifier)).collect();
    let mut rng = seeded(5);
    let (mut identical, mut pairs) = (true, 0);
    let (mut within, mut attacked, mut worst_excess) = (true, 0, f64::NEG_INFINITY);
    let (mut clean_correct, mut zero_correct) = (0, 0);
    for i in 0..1000 {
        let m = models[i % models.len()];
        let x: Vec<f32> = (0..D).map(|_| rng.random_range(0.0f32..=1.0)).collect();
        let (p, _) = forward_one(m, &x)?;
        let y = p.label;
        // Half the samples carry a wrong label so eps = 0 accuracy is not trivially 1.
        let label = if i % 2 == 0 { y } else { (y + 1) % 3 };
        if i % 10 == 0 {
            let eps = rng.random_range(0.0..0.3);
            identical &= fgsm(m, &x, label, eps)? == ifgsm(m, &x, label, eps, 1)?;
            pairs += 1;
        }
        let eps = rng.random_range(0.0..0.3);
        let iters = rng.random_range(1..12);
        let r = ifgsm(m, &x, label, eps, iters)?;
        // The budget holds in f64 before the single rounding to f32 storage.
        let excess = r.linf - eps;
        worst_excess = worst_excess.max(excess);
        within &= excess <= f32::EPSILON as f64 / 2.0 && r.x_adv.iter().all(|v| (0.0..=1.0).contains(v));
        attacked += 1;
        let zero = ifgsm(m, &x, label, 0.0, iters)?;
        clean_correct += (y == label) as usize;
        zero_correct += (zero.label_after == label) as usize;
    }
    outcome(
        identical && within && clean_correct == zero_correct,
        format!(
            "T=1 equals FGSM bitwise on {pairs}/{pairs} pairs: {identical}; l-inf budget held on {attacked} attacked samples: {within} \
             (max overshoot {worst_excess:.1e}, below half an f32 ulp); eps=0 accuracy {zero_correct}/{attacked} equals clean {clean_correct}/{attacked}"
        ),
    )
}

// ---------------------------------------------------------------- CLI helpers

fn cli(args: &[&str], env: &[(&str, &str)]) -> Result<Output> {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("CURVPROBE_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().with_context(|| format!("running curvprobe {}", args.join(" ")))
}

fn cli_ok(args: &[&str]) -> Result<String> {
    let out = cli(args, &[])?;
    if !out.status.success() {
        bail!("curvprobe {} failed ({}): {}", args.join(" "), out.status, String::from_utf8_lossy(&out.stderr));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers()?.clone();
    r.records()
        .map(|rec| Ok(headers.iter().map(String::from).zip(rec?.iter().map(String::from)).collect()))
        .collect()
}

fn column(rows: &[BTreeMap<String, String>], name: &str) -> Vec<Option<f64>> {
    rows.iter().map(|r| r.get(name).and_then(|v| v.parse().ok())).collect()
}

// ---------------------------------------------------------------- 6

struct Scale {
    label: &'static str,
    train: usize,
    eval: usize,
    epochs: usize,
    lr: f64,
}

fn c6_experiment(invariants_hold: bool) -> Result<Outcome> {
    let full = std::env::var("CURVPROBE_ACCEPT_FULL").is_ok_and(|v| v == "1");
    let scale = if full {
        Scale {
            label: "full",
            train: 5000,
            eval: 1000,
            epochs: 60,
            lr: 5e-4,
        }
    } else {
        Scale {
            label: "reduced",
            train: 1000,
            eval: 120,
            epochs: 8,
            lr: 2e-3,
        }
    };
    let tmp = tempfile::tempdir()?;
    let root = tmp.path();
    let (data, source) = match std::env::var("CURVPROBE_CIFAR_DIR") {
        Ok(dir) => (PathBuf::from(dir), "CIFAR-10"),
        Err(_) => {
            let d = root.join("data");
            cli_ok(&["synth", "--train", &scale.train.to_string(), "--test", "1000", "--out", s(&d)])?;
            (d, "procedural stand-in data")
        }
    };

    let mut theta = BTreeMap::new();
    let mut notes = Vec::new();
    let mut over_budget = false;
    for arch in ["cnn", "vit"] {
        let run = root.join(arch);
        let t = Instant::now();
        cli_ok(&[
            "train", "--arch", arch, "--data", s(&data), "--samples", &scale.train.to_string(), "--epochs",
            &scale.epochs.to_string(), "--lr", &scale.lr.to_string(), "--ckpt-every", &scale.epochs.max(1).to_string(),
            "--track-n", "100", "--out", s(&run),
        ])?;
        let minutes = t.elapsed().as_secs_f64() / 60.0;
        over_budget |= full && minutes > 30.0;
        let ckpt = run.join("checkpoints").join(format!("epoch_{:04}.cprb", scale.epochs));
        let cal = root.join(format!("{arch}_cal"));
        cli_ok(&["calibrate", "--model", s(&ckpt), "--data", s(&data), "--out", s(&cal)])?;
        let acc = column(&read_csv(&cal.join("summary.csv"))?, "accuracy")[0].unwrap_or(f64::NAN);
        let traj = root.join(format!("{arch}_traj"));
        cli_ok(&[
            "trajectory", "--model", s(&ckpt), "--data", s(&data), "--samples", &scale.eval.to_string(), "--modes", "fgsm",
            "--out", s(&traj),
        ])?;
        let rows = read_csv(&traj.join("trajectory.csv"))?;
        let pairs: Vec<(f64, f64)> = column(&rows, "theta1")
            .into_iter()
            .zip(column(&rows, "total_turn"))
            .filter_map(|(a, b)| Some((a?, b?)))
            .collect();
        notes.push(format!("{arch}: test accuracy {acc:.3}, {} trajectories, train {minutes:.1} min", pairs.len()));
        theta.insert(arch, pairs);
    }

    let med = |arch: &str| median(&theta[arch].iter().map(|p| p.0).collect::<Vec<_>>());
    let (cnn_med, vit_med) = (med("cnn"), med("vit"));
    let a = matches!((cnn_med, vit_med), (Some(c), Some(v)) if v > c);
    let (t1, turn): (Vec<f64>, Vec<f64>) = theta["vit"].iter().copied().unzip();
    let r = pearson(&t1, &turn);
    let b = r.is_some_and(|r| r > 0.5);

    let atk = root.join("vit_attack");
    let ckpt = root.join("vit").join("checkpoints").join(format!("epoch_{:04}.cprb", scale.epochs));
    cli_ok(&[
        "attack", "--model", s(&ckpt), "--data", s(&data), "--samples", &scale.eval.to_string(), "--kind", "rand_jump_fgsm",
        "--out", s(&atk),
    ])?;
    let dom = &read_csv(&atk.join("jump_dominance.csv"))?[0];
    let curved = dom["curved"].clone();
    let c = dom["jump_not_larger"] == "true";
    let c_text = match dom["jump_not_larger"].as_str() {
        "" => format!("no vit sample reached theta(1) >= pi/4 ({:.3} rad): untestable", FRAC_PI_4),
        _ => format!(
            "{curved} curved vit samples, median eps rand_jump {} vs fgsm {}: {}",
            dom["median_eps_rand_jump"],
            dom["median_eps_fgsm"],
            verdict(c)
        ),
    };

    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    let detail = format!(
        "{} scale on {source} ({} train, {} epochs, lr {}); (a) median theta(1) vit {} vs cnn {}: {}; (b) vit Pearson(theta(1), total turn) {}: {}; \
         (c) {c_text}; {}; {}",
        scale.label,
        scale.train,
        scale.epochs,
        scale.lr,
        fmt(vit_med),
        fmt(cnn_med),
        verdict(a),
        fmt(r),
        verdict(b),
        notes.join("; "),
        if a { "expected outcome (a) reproduced".to_string() } else { format!("(a) not reproduced; passing via the escape hatch since criteria 1-5 hold: {invariants_hold}") }
    );
    outcome((a || invariants_hold) && !over_budget, detail)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "does not hold"
    }
}

// ---------------------------------------------------------------- 7

fn files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            out.extend(files(&p, ext)?);
        } else if p.extension().is_some_and(|e| e == ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn sorted_lines(p: &Path) -> Result<Vec<String>> {
    let mut l: Vec<String> = fs::read_to_string(p)?.lines().map(String::from).collect();
    l.sort();
    Ok(l)
}

fn c7_reproducibility() -> Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path();
    let p = |n: &str| root.join(n);
    let data = p("data");
    cli_ok(&["synth", "--train", "60", "--test", "40", "--classes", "3", "--out", s(&data)])?;
    let ckpt = p("train").join("checkpoints").join("epoch_0002.cprb");
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["synth", "--train", "60", "--test", "40", "--classes", "3", "--out"].into_iter().map(String::from).collect()),
        (
            "train",
            ["train", "--arch", "cnn", "--data", s(&data), "--epochs", "2", "--batch", "16", "--lr", "0.003", "--ckpt-every", "1", "--track-n", "12", "--out"]
                .map(String::from)
                .to_vec(),
        ),
        ("calibrate", ["calibrate", "--model", s(&ckpt), "--data", s(&data), "--out"].map(String::from).to_vec()),
        ("boundary", ["boundary", "--model", s(&ckpt), "--data", s(&data), "--samples", "16", "--mode", "rand", "--out"].map(String::from).to_vec()),
        (
            "trajectory",
            ["trajectory", "--model", s(&ckpt), "--data", s(&data), "--samples", "8", "--modes", "fgsm,rand,rand_jump_fgsm", "--seeds", "0,1", "--n-steps", "8", "--out"]
                .map(String::from)
                .to_vec(),
        ),
        ("attack", ["attack", "--model", s(&ckpt), "--data", s(&data), "--samples", "16", "--kind", "rand_jump_fgsm", "--out"].map(String::from).to_vec()),
        ("gridviz", ["gridviz", "--model", s(&ckpt), "--data", s(&data), "--image", "3", "--n", "2", "--out"].map(String::from).to_vec()),
    ];
    let (mut exact, mut sorted, mut compared) = (true, true, 0);
    let mut mismatches = Vec::new();
    for (name, mut args) in runs {
        let first = p(name);
        args.push(s(&first).to_string());
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        // The seed arrives through the environment and must be recorded in the manifest.
        let out = cli(&refs, &[("CURVPROBE_SEED", "7")])?;
        ensure!(out.status.success(), "{name} failed: {}", String::from_utf8_lossy(&out.stderr));
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(first.join("manifest.json"))?)?;
        ensure!(manifest["seed"] == 7, "{name}: manifest seed {} instead of 7", manifest["seed"]);

        let single = p(&format!("{name}_rerun"));
        let par = p(&format!("{name}_jobs3"));
        cli_ok(&["rerun", "--manifest", s(&first.join("manifest.json")), "--out", s(&single)])?;
        cli_ok(&["--jobs", "3", "rerun", "--manifest", s(&first.join("manifest.json")), "--out", s(&par)])?;
        let originals = files(&first, "csv")?;
        ensure!(!originals.is_empty() || name == "synth", "{name} wrote no CSV");
        for ext in ["csv", "cprb", "bin"] {
            for f in files(&first, ext)? {
                let rel = f.strip_prefix(&first)?;
                let same = fs::read(&f)? == fs::read(single.join(rel))?;
                if !same {
                    mismatches.push(format!("{name}/{}", rel.display()));
                }
                exact &= same;
                if ext == "csv" {
                    sorted &= sorted_lines(&f)? == sorted_lines(&par.join(rel))?;
                }
                compared += 1;
            }
        }
    }

    // Exit-code contract.
    let missing = cli(&["train", "--arch", "cnn", "--out", s(&p("x"))], &[])?;
    let usage_ok = missing.status.code() == Some(2) && String::from_utf8_lossy(&missing.stderr).contains("--data");
    let bad = cli(&["train", "--arch", "cnn", "--data", s(&data), "--batch", "0", "--out", s(&p("y"))], &[])?;
    let invalid_ok = bad.status.code() == Some(2);
    let absent = cli(&["calibrate", "--model", s(&p("missing.cprb")), "--data", s(&data), "--out", s(&p("z"))], &[])?;
    let runtime_ok = absent.status.code() == Some(1);
    let codes = usage_ok && invalid_ok && runtime_ok;

    outcome(
        exact && sorted && codes,
        format!(
            "7 subcommands re-run from their manifests: {compared} artifacts byte-identical on one thread: {exact}{}; CSV rows identical with --jobs 3: {sorted}; \
             exit codes 2/2/1 for missing flag, invalid value, missing checkpoint: {codes}",
            if mismatches.is_empty() { String::new() } else { format!(" (differ: {})", mismatches.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 8

fn c8_projection() -> Result<Outcome> {
    const S: [usize; 3] = [3, 8, 8];
    const D: usize = 192;
    let (mut planar_worst, mut perp_worst, mut spacing_worst, mut grids) = (0.0f64, 0.0f64, 0.0f64, 0);
    let mut progression_worst = 0.0f64;
    for seed in 0..20u64 {
        let m = AffineClassifier::random(S, 12, 3, seed)?;
        let mut rng = seeded(seed + 8000);
        let x: Vec<f32> = (0..D).map(|_| rng.random_range(0.3f32..0.7)).collect();
        let (p, _) = forward_one(&m, &x)?;
        let n = 1 + (seed % 4) as usize;
        let cfg = GridConfig {
            alpha: 0.05,
            n,
            basis: Basis::PcaTop2,
            seed,
            eps_r: None,
        };
        let g = grid_features(&m, &x, p.label, &cfg)?;
        let (b1, b2) = pca_top2(&g.z).context("affine grid has rank < 2")?;
        planar_worst = planar_worst.max(planar_residual(&g.z, &b1, &b2));
        for basis in [Basis::PcaTop2, Basis::RandomOrthonormal] {
            let proj = project2d(&g, basis, seed)?;
            for line in grid_lines(&proj, n) {
                let (perp, spacing) = line_residual(&line);
                perp_worst = perp_worst.max(perp);
                spacing_worst = spacing_worst.max(spacing);
                progression_worst = progression_worst.max(progression_residual(&line));
            }
        }
        grids += 1;
    }

    // Synthetic planar clouds embedded in 32 dimensions.
    let mut rng = seeded(8);
    for _ in 0..20 {
        let f = 32;
        let e1: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e2: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..f).map(|_| rng.random_range(-5.0..5.0)).collect();
        let z: Vec<Vec<f64>> = (0..49)
            .map(|k| {
                let (u, v) = ((k / 7) as f64 - 3.0, (k % 7) as f64 - 3.0);
                (0..f).map(|i| c[i] + u * e1[i] + v * e2[i]).collect()
            })
            .collect();
        let (b1, b2) = pca_top2(&z).context("planar cloud has rank < 2")?;
        planar_worst = planar_worst.max(planar_residual(&z, &b1, &b2));
    }
    outcome(
        planar_worst < 1e-6 && perp_worst < 1e-5 && progression_worst < 1e-5,
        format!(
            "{grids} affine grids plus 20 planar clouds: max planar residual {planar_worst:.1e} (< 1e-6); grid lines: \
             perpendicular residual {perp_worst:.1e} and equispaced-progression residual {progression_worst:.1e} (< 1e-5), \
             largest single-segment spacing deviation {spacing_worst:.1e} (f32 grid rounding, informational)"
        ),
    )
}

/// RMS distance of a polyline from its least-squares fit `a + k b`,
/// relative to the span: zero exactly for collinear equispaced points.
fn progression_residual(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let km = (n - 1.0) / 2.0;
    let skk: f64 = (0..points.len()).map(|k| (k as f64 - km).powi(2)).sum();
    let mean = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let slope = points.iter().enumerate().fold((0.0, 0.0), |a, (k, p)| {
        let w = (k as f64 - km) / skk;
        (a.0 + w * (p.0 - mean.0), a.1 + w * (p.1 - mean.1))
    });
    let sq: f64 = points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let t = k as f64 - km;
            (p.0 - mean.0 - t * slope.0).powi(2) + (p.1 - mean.1 - t * slope.1).powi(2)
        })
        .sum();
    let span = (n - 1.0) * slope.0.hypot(slope.1);
    if span == 0.0 {
        0.0
    } else {
        (sq / n).sqrt() / span
    }
}
