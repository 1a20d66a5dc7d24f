//! Acceptance suite. Runs every criterion in sequence (timing criteria must
//! not share the machine with other tests) and prints one PASS/FAIL line per
//! criterion. Pass criterion numbers as arguments to run a subset:
//!
//! ```text
//! cargo test --release --test acceptance -- 1 2 5
//! ```

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use framepool::ct;
use framepool::filterbank::{build_bank, verify_uep, BankName};
use framepool::framelet::{decompose, reconstruct};
use framepool::metrics::psnr;
use framepool::mri;
use framepool::nn::ops::{self, BnRunning, Mode};
use framepool::nn::{build_unet, Network, NetworkSpec, Tensor};
use framepool::phantom;
use framepool::pipeline::{evaluate_pairs, generate, train_on, ExperimentConfig, Problem};
use framepool::Image;

/// Floor for the full-view FBP round trip of the standard phantom at side
/// 256 with 180 views; measured 31.36 dB when first verified.
const FBP_FLOOR_DB: f64 = 31.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_image(side: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(side, |_, _| rng.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------- 1 to 3

fn uep() -> Outcome {
    let mut worst = 0.0f64;
    let mut all = true;
    let mut parts = Vec::new();
    for name in BankName::ALL {
        let r = verify_uep(&build_bank(name).unwrap(), 128).unwrap();
        let e = r.max_identity_error.max(r.max_shift_error);
        worst = worst.max(e);
        all &= e < 1e-10;
        parts.push(format!("{name} {e:.1e}"));
    }
    outcome(all, format!("max error {worst:.2e} ({})", parts.join(", ")))
}

const SIDES: [usize; 3] = [16, 64, 256];

fn perfect_reconstruction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for name in BankName::ALL {
        let bank = build_bank(name).unwrap();
        for level in [1, 2] {
            for side in SIDES {
                for _ in 0..20 {
                    let x = random_image(side, &mut rng);
                    let back = reconstruct(&decompose(&x, &bank, level).unwrap(), &bank).unwrap();
                    worst = worst.max(back.max_abs_diff(&x) / x.max_abs());
                }
            }
        }
    }
    outcome(worst < 1e-10, format!("max relative sup error {worst:.2e} over 360 images"))
}

fn parseval() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for name in BankName::ALL {
        let bank = build_bank(name).unwrap();
        for level in [1, 2] {
            for side in SIDES {
                for _ in 0..20 {
                    let x = random_image(side, &mut rng);
                    let e = decompose(&x, &bank, level).unwrap().energy();
                    worst = worst.max((e - x.norm_sq()).abs() / x.norm_sq());
                }
            }
        }
    }
    outcome(worst < 1e-8, format!("max relative energy error {worst:.2e}"))
}

// ---------------------------------------------------------------- 4

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(shape, rand_vec(shape.iter().product(), rng)).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / dot(a, a).sqrt().max(dot(b, b).sqrt()).max(1e-300)
}

fn numeric(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let o = p[i];
            p[i] = o + h;
            let up = f(&p);
            p[i] = o - h;
            let down = f(&p);
            p[i] = o;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn tensor_like(t: &Tensor<f64>, v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(t.shape(), v.to_vec()).unwrap()
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-3;
    let mut errs: Vec<(&str, f64, f64)> = Vec::new();

    // conv3x3
    let (cin, cout) = (2, 3);
    let x = rand_tensor([2, cin, 5, 4], &mut rng);
    let w = rand_vec(cout * cin * 9, &mut rng);
    let b = rand_vec(cout, &mut rng);
    let r = rand_tensor([2, cout, 5, 4], &mut rng);
    let g = ops::conv3x3_backward(&x, &w, cout, &r);
    let f = |x: &Tensor<f64>, w: &[f64], b: &[f64]| dot(ops::conv3x3(x, w, b, cout).unwrap().as_slice(), r.as_slice());
    let mut e = rel_err(g.dx.as_slice(), &numeric(x.as_slice(), h, |v| f(&tensor_like(&x, v), &w, &b)));
    e = e.max(rel_err(&g.dw, &numeric(&w, h, |v| f(&x, v, &b))));
    e = e.max(rel_err(&g.db, &numeric(&b, h, |v| f(&x, &w, v))));
    errs.push(("conv3x3", e, 1e-4));

    // conv1x1
    let w1 = rand_vec(cout * cin, &mut rng);
    let g = ops::conv1x1_backward(&x, &w1, cout, &r);
    let f = |x: &Tensor<f64>, w: &[f64], b: &[f64]| dot(ops::conv1x1(x, w, b, cout).unwrap().as_slice(), r.as_slice());
    let mut e = rel_err(g.dx.as_slice(), &numeric(x.as_slice(), h, |v| f(&tensor_like(&x, v), &w1, &b)));
    e = e.max(rel_err(&g.dw, &numeric(&w1, h, |v| f(&x, v, &b))));
    e = e.max(rel_err(&g.db, &numeric(&b, h, |v| f(&x, &w1, v))));
    errs.push(("conv1x1", e, 1e-4));

    // relu, away from the kink
    let xr = Tensor::from_fn([2, 2, 3, 3], |_| {
        let m: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let rr = rand_tensor(xr.shape(), &mut rng);
    let a = ops::relu_backward(&ops::relu(&xr), &rr);
    let n = numeric(xr.as_slice(), h, |v| dot(ops::relu(&tensor_like(&xr, v)).as_slice(), rr.as_slice()));
    errs.push(("relu", rel_err(a.as_slice(), &n), 1e-4));

    // maxpool2
    let xp = rand_tensor([2, 2, 4, 6], &mut rng);
    let rp = rand_tensor([2, 2, 2, 3], &mut rng);
    let (_, arg) = ops::maxpool2(&xp).unwrap();
    let a = ops::maxpool2_backward(xp.shape(), &arg, &rp);
    let n = numeric(xp.as_slice(), h, |v| {
        dot(ops::maxpool2(&tensor_like(&xp, v)).unwrap().0.as_slice(), rp.as_slice())
    });
    errs.push(("maxpool2", rel_err(a.as_slice(), &n), 1e-4));

    // avg_unpool2
    let xu = rand_tensor([2, 2, 3, 2], &mut rng);
    let ru = rand_tensor([2, 2, 6, 4], &mut rng);
    let a = ops::avg_unpool2_backward(&ru).unwrap();
    let n = numeric(xu.as_slice(), h, |v| dot(ops::avg_unpool2(&tensor_like(&xu, v)).as_slice(), ru.as_slice()));
    errs.push(("avg_unpool2", rel_err(a.as_slice(), &n), 1e-4));

    // concat
    let ca = rand_tensor([2, 2, 3, 3], &mut rng);
    let cb = rand_tensor([2, 3, 3, 3], &mut rng);
    let rc = rand_tensor([2, 5, 3, 3], &mut rng);
    let (ga, gb) = ops::concat_backward(&rc, 2);
    let na = numeric(ca.as_slice(), h, |v| dot(ops::concat(&tensor_like(&ca, v), &cb).unwrap().as_slice(), rc.as_slice()));
    let nb = numeric(cb.as_slice(), h, |v| dot(ops::concat(&ca, &tensor_like(&cb, v)).unwrap().as_slice(), rc.as_slice()));
    errs.push(("concat", rel_err(ga.as_slice(), &na).max(rel_err(gb.as_slice(), &nb)), 1e-4));

    // batchnorm on a 2-image batch
    let xb = rand_tensor([2, 3, 3, 3], &mut rng);
    let gamma = rand_vec(3, &mut rng);
    let beta = rand_vec(3, &mut rng);
    let rb = rand_tensor(xb.shape(), &mut rng);
    let bn = |x: &Tensor<f64>, g: &[f64], b: &[f64]| {
        let mut run = BnRunning::new(3);
        ops::batchnorm(x, g, b, &mut run, Mode::Train, 0.9).unwrap()
    };
    let (_, cache) = bn(&xb, &gamma, &beta);
    let g = ops::batchnorm_backward(&cache, &gamma, &rb);
    let mut e = rel_err(g.dx.as_slice(), &numeric(xb.as_slice(), h, |v| dot(bn(&tensor_like(&xb, v), &gamma, &beta).0.as_slice(), rb.as_slice())));
    e = e.max(rel_err(&g.dgamma, &numeric(&gamma, h, |v| dot(bn(&xb, v, &beta).0.as_slice(), rb.as_slice()))));
    e = e.max(rel_err(&g.dbeta, &numeric(&beta, h, |v| dot(bn(&xb, &gamma, v).0.as_slice(), rb.as_slice()))));
    errs.push(("batchnorm", e, 1e-3));

    // loss
    let p = rand_tensor([2, 1, 3, 3], &mut rng);
    let l = rand_tensor([2, 1, 3, 3], &mut rng);
    let (_, gl) = ops::loss_l2(&p, &l).unwrap();
    let n = numeric(p.as_slice(), h, |v| ops::loss_l2(&tensor_like(&p, v), &l).unwrap().0);
    errs.push(("loss_l2", rel_err(gl.as_slice(), &n), 1e-4));

    errs.push(("network", network_gradient_error(&mut rng), 1e-3));

    let pass = errs.iter().all(|(_, e, tol)| e < tol);
    let detail = errs
        .iter()
        .map(|(n, e, _)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

/// Full variant-2 network: side 8, depth 4, batch 2, haar level-2 channels,
/// default initialization.
fn network_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    let spec = NetworkSpec::for_level(4, 2, 32, 4, 3);
    let mut net: Network<f64> = build_unet(spec, 1).unwrap();
    let x = rand_tensor([2, 16, 8, 8], rng);
    let label = rand_tensor([2, 16, 8, 8], rng);
    let loss = |net: &Network<f64>, x: &Tensor<f64>| {
        let mut probe = net.clone();
        let (y, _) = probe.forward_train(x).unwrap();
        ops::loss_l2(&y, &label).unwrap().0
    };
    let (pred, cache) = net.clone().forward_train(&x).unwrap();
    let (_, dpred) = ops::loss_l2(&pred, &label).unwrap();
    let (grads, dx) = net.backward(&cache, &dpred);
    let h = 1e-5;
    let mut analytic = Vec::new();
    let mut num = Vec::new();
    for pi in 0..net.params().len() {
        for k in 0..net.params()[pi].data.len() {
            let o = net.params()[pi].data[k];
            net.params_mut()[pi].data[k] = o + h;
            let up = loss(&net, &x);
            net.params_mut()[pi].data[k] = o - h;
            let down = loss(&net, &x);
            net.params_mut()[pi].data[k] = o;
            analytic.push(grads[pi][k]);
            num.push((up - down) / (2.0 * h));
        }
    }
    analytic.extend_from_slice(dx.as_slice());
    num.extend(numeric(x.as_slice(), h, |v| loss(&net, &tensor_like(&x, v))));
    rel_err(&analytic, &num)
}

// ---------------------------------------------------------------- 5

fn pearson(a: &Image, b: &Image) -> f64 {
    let n = a.len() as f64;
    let ma = a.as_slice().iter().sum::<f64>() / n;
    let mb = b.as_slice().iter().sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma) * (x - ma);
        bb += (y - mb) * (y - mb);
    }
    ab / (aa * bb).sqrt()
}

fn mri_aliasing() -> Outcome {
    let d = 256;
    let m = mri::make_mask(d, 4, 0).unwrap();
    let a = |x: &Image| mri::synthesize_mri_pair(x, &m).unwrap().0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut idem, mut adj) = (0.0f64, 0.0f64);
    for _ in 0..3 {
        let x = random_image(d, &mut rng);
        let z = random_image(d, &mut rng);
        let ax = a(&x);
        idem = idem.max(a(&ax).max_abs_diff(&ax) / ax.max_abs());
        let l = ax.dot(&z);
        let r = x.dot(&a(&z));
        adj = adj.max((l - r).abs() / (x.norm() * z.norm()));
    }
    let y = phantom::shepp_logan(d);
    let x = a(&y);
    let c4 = pearson(&x, &y.roll((d / 4) as isize, 0));
    let c8 = pearson(&x, &y.roll((d / 8) as isize, 0));
    let pass = idem < 1e-10 && adj < 1e-10 && c4 > c8;
    outcome(
        pass,
        format!("A²-A {idem:.1e}, adjoint gap {adj:.1e}, corr(d/4) {c4:.3} vs corr(d/8) {c8:.3}"),
    )
}

// ---------------------------------------------------------------- 6

fn ct_degradation() -> Outcome {
    let y = phantom::shepp_logan(256);
    let angles = ct::uniform_angles(180);
    let values: Vec<f64> = [1, 2, 3, 6]
        .iter()
        .map(|&f| {
            let (x, yc) = ct::synthesize_ct_pair(&y, &angles, f).unwrap();
            psnr(&x, &yc, yc.max()).unwrap()
        })
        .collect();
    let monotone = values.windows(2).all(|w| w[0] > w[1]);
    let pass = monotone && values[0] > FBP_FLOOR_DB;
    outcome(
        pass,
        format!(
            "PSNR over factors 1,2,3,6: {:.2}, {:.2}, {:.2}, {:.2} dB (floor {FBP_FLOOR_DB})",
            values[0], values[1], values[2], values[3]
        ),
    )
}

// ---------------------------------------------------------------- 7 to 9

fn mean_epoch(cfg: &ExperimentConfig, ds: &framepool::pipeline::Dataset) -> f64 {
    train_on::<f32>(cfg, ds).unwrap().1.mean_epoch_seconds()
}

fn speedup_trend() -> Outcome {
    let base = ExperimentConfig {
        problem: Problem::Mri,
        bank: BankName::Haar,
        image_side: 128,
        n_train: 100,
        n_test: 1,
        base_depth: 16,
        n_levels: 3,
        lr: 1e-3,
        epochs: 5,
        batch_size: 4,
        ..Default::default()
    };
    let ds = generate(&base).unwrap();
    let t: Vec<f64> = (0..3)
        .map(|level| mean_epoch(&ExperimentConfig { level, ..base.clone() }, &ds))
        .collect();
    let (r1, r2) = (t[1] / t[0], t[2] / t[1]);
    outcome(
        r1 <= 0.7 && r2 <= 0.7,
        format!(
            "epoch seconds U0 {:.3}, U1 {:.3}, U2 {:.3}; U1/U0 {r1:.3}, U2/U1 {r2:.3}",
            t[0], t[1], t[2]
        ),
    )
}

fn depth_crossover() -> Outcome {
    let base = ExperimentConfig {
        problem: Problem::Mri,
        bank: BankName::Pl,
        image_side: 128,
        n_train: 20,
        n_test: 1,
        n_levels: 3,
        lr: 1e-3,
        epochs: 4,
        batch_size: 4,
        ..Default::default()
    };
    let ds = generate(&base).unwrap();
    let mut speedups = Vec::new();
    let mut parts = Vec::new();
    for depth in [16, 64] {
        let t0 = mean_epoch(&ExperimentConfig { base_depth: depth, level: 0, ..base.clone() }, &ds);
        let t2 = mean_epoch(&ExperimentConfig { base_depth: depth, level: 2, ..base.clone() }, &ds);
        speedups.push(t0 / t2);
        parts.push(format!("depth {depth}: U0 {t0:.3} s, U2-pl {t2:.3} s, speedup {:.2}", t0 / t2));
    }
    outcome(speedups[1] > speedups[0], parts.join("; "))
}

fn quality_parity() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for problem in [Problem::Mri, Problem::Ct] {
        let base = ExperimentConfig {
            problem,
            bank: BankName::Haar,
            image_side: 64,
            n_train: 100,
            n_test: 10,
            base_depth: 16,
            n_levels: 3,
            lr: 1e-3,
            epochs: usize::MAX,
            batch_size: 4,
            max_steps: Some(2000),
            ..Default::default()
        };
        let ds = generate(&base).unwrap();
        let baseline = evaluate_pairs::<f32>(&base, None, &ds.test).unwrap().mean_pred().psnr;
        let mut scores = Vec::new();
        for level in [0, 1] {
            let cfg = ExperimentConfig { level, ..base.clone() };
            let (net, _) = train_on::<f32>(&cfg, &ds).unwrap();
            scores.push(evaluate_pairs(&cfg, Some(&net), &ds.test).unwrap().mean_pred().psnr);
        }
        let ok = (scores[0] - scores[1]).abs() <= 2.0
            && scores[0] >= baseline + 1.0
            && scores[1] >= baseline + 1.0;
        pass &= ok;
        parts.push(format!(
            "{problem}: U0 {:.2} dB, U1 {:.2} dB, pass-through {baseline:.2} dB",
            scores[0], scores[1]
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- 10

fn cli(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_framepool"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn determinism() -> Outcome {
    let sets = [
        "--set=problem=ct",
        "--set=level=1",
        "--set=bank=db4",
        "--set=image_side=32",
        "--set=n_train=8",
        "--set=n_test=2",
        "--set=base_depth=4",
        "--set=n_levels=2",
        "--set=lr=1e-3",
        "--set=epochs=3",
        "--set=ct_views=60",
        "--set=precision=f64",
        "--seed=7",
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        for cmd in ["gen-data", "train"] {
            let mut args = vec![cmd];
            args.extend(sets);
            let out = cli(&args, d.path());
            if !out.status.success() {
                return outcome(false, format!("{cmd} failed: {}", String::from_utf8_lossy(&out.stderr)));
            }
        }
    }
    let files = [
        "dataset.txt",
        "train_x.fpt",
        "train_y.fpt",
        "test_x.fpt",
        "test_y.fpt",
        "train_x_w.fpt",
        "train_y_w.fpt",
        "train_sino.fpt",
        "loss_log.csv",
        "checkpoint/params.fpt",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            std::fs::read(dirs[0].path().join(f)).ok() != std::fs::read(dirs[1].path().join(f)).ok()
                || !dirs[0].path().join(f).exists()
        })
        .collect();
    let steps = std::fs::read_to_string(dirs[0].path().join("loss_log.csv"))
        .map(|s| s.lines().count().saturating_sub(1))
        .unwrap_or(0);
    outcome(
        differing.is_empty() && steps > 0,
        if differing.is_empty() {
            format!("{} files byte-identical, {steps} logged steps", files.len())
        } else {
            format!("differing or missing: {}", differing.join(", "))
        },
    )
}

// ----------------------------------------------------------------

type Criterion = (usize, &'static str, u64, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "UEP identities for haar, db4, pl", 1, uep),
        (2, "perfect reconstruction", 30, perfect_reconstruction),
        (3, "Parseval energy identity", 30, parseval),
        (4, "finite-difference gradient checks", 120, gradient_checks),
        (5, "MRI aliasing operator", 10, mri_aliasing),
        (6, "CT degradation monotonicity", 60, ct_degradation),
        (7, "epoch-time speedup U0 > U1 > U2", 15 * 60, speedup_trend),
        (8, "depth-sweep speedup crossover", 30 * 60, depth_crossover),
        (9, "quality parity after 2000 steps", 45 * 60, quality_parity),
        (10, "determinism of gen-data + train", 5 * 60, determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, title, budget, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let pass = out.pass && in_time;
        println!(
            "criterion {n:>2} {}: {title}: {} [{:.2} s of {budget} s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
