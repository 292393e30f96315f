//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Criteria 1, 2 and 7 share one run of the `experiment`
//! subcommand on `configs/acceptance.cfg`.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use umt_core::data::{decode_patches, encode_patches, render_toy_image, ToySpec};
use umt_core::eval::{tdr_at_fdr, Arm, ExperimentReport};
use umt_core::image_ops::{otsu_threshold, GrayImage};
use umt_core::prep::{
    align_and_crop, estimate_orientation, sample_patch_origins, segment, trimmed_mean_orientation,
    AlignedPatch, Label, PatchSpec, ORIENTATION_STRIDE, ORIENTATION_WINDOW, PATCH_SIDE,
};
use umt_core::umt::{adain, adain_var, content_loss_var, instance_norm_var, style_loss_var};
use umt_tensor::gradcheck::{check_gradients, worst};
use umt_tensor::{decode_checkpoint, encode_checkpoint, Graph, NnError, Padding, ParamStore, Tensor, Var};

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

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        outcome(false, format!("aborted: {msg}"))
    })
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, mean: f64, std: f64) -> Tensor<f64> {
    let dist = Normal::new(mean, std).unwrap();
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn channel_moments(t: &Tensor<f64>) -> Vec<(f64, f64)> {
    let s = t.shape();
    let hw = s[2] * s[3];
    t.data()
        .chunks(hw)
        .map(|c| {
            let m = c.iter().sum::<f64>() / hw as f64;
            let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / hw as f64;
            (m, v.sqrt())
        })
        .collect()
}

fn adain_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut stat_err, mut id_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..9));
        let (hx, hy) = (rng.random_range(2..13), rng.random_range(2..13));
        let (mx, sx) = (rng.random_range(-3.0..3.0), rng.random_range(0.1..4.0));
        let x = normal_tensor(&mut rng, vec![n, c, hx, hx], mx, sx);
        let (my, sy) = (rng.random_range(-3.0..3.0), rng.random_range(0.1..4.0));
        let y = normal_tensor(&mut rng, vec![n, c, hy, hy], my, sy);
        let out = adain(&x, &y, 0.0).unwrap();
        for ((mo, so), (my, sy)) in channel_moments(&out).into_iter().zip(channel_moments(&y)) {
            stat_err = stat_err.max((mo - my).abs()).max((so - sy).abs());
        }
        let same = adain(&x, &x, 0.0).unwrap();
        for (a, b) in same.data().iter().zip(x.data()) {
            id_err = id_err.max((a - b).abs());
        }
    }
    outcome(
        stat_err < 1e-5 && id_err < 1e-6,
        format!("1000 pairs: max statistic error {stat_err:.2e}, max identity error {id_err:.2e}"),
    )
}

/// Mean squared distance to a fixed random target: a scalar read-out with a
/// generic gradient.
fn readout(g: &mut Graph<f64>, y: Var, seed: u64) -> umt_tensor::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = uniform_tensor(&mut rng, g.shape(y).to_vec());
    let t = g.constant(target);
    g.mse(y, t)
}

fn nn<T>(r: umt_core::Result<T>) -> umt_tensor::Result<T> {
    r.map_err(|e| NnError::Precondition(e.to_string()))
}

fn gradient_integrity() -> Outcome {
    const STEP: f64 = 1e-4;
    const CONFIGS: u64 = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_by_op: Vec<(&str, f64)> = Vec::new();
    let mut record = |name, probes: Vec<umt_tensor::gradcheck::Probe>| {
        let w = worst(&probes);
        match worst_by_op.iter_mut().find(|(n, _)| *n == name) {
            Some(e) => e.1 = e.1.max(w),
            None => worst_by_op.push((name, w)),
        }
    };
    for cfg in 0..CONFIGS {
        let (n, c, h) = (rng.random_range(1..3), rng.random_range(1..4), 2 * rng.random_range(1..4));
        let cout = rng.random_range(1..4);
        let padding = if cfg % 2 == 0 { Padding::Zero } else { Padding::Reflect };
        let x = uniform_tensor(&mut rng, vec![n, c, h, h]);
        let conv_in = vec![x.clone(), uniform_tensor(&mut rng, vec![cout, c, 3, 3]), uniform_tensor(&mut rng, vec![cout])];
        record("conv2d", check_gradients(&conv_in, STEP, 20, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], padding)?;
            readout(g, y, cfg)
        }).unwrap());
        record("avg_pool2", check_gradients(&[x.clone()], STEP, 20, |g, v| {
            let y = g.avg_pool2(v[0])?;
            readout(g, y, cfg)
        }).unwrap());
        record("upsample_nearest2", check_gradients(&[x.clone()], STEP, 20, |g, v| {
            let y = g.upsample_nearest2(v[0])?;
            readout(g, y, cfg)
        }).unwrap());
        let (k, o) = (rng.random_range(1..6), rng.random_range(1..4));
        let lin = vec![uniform_tensor(&mut rng, vec![n, k]), uniform_tensor(&mut rng, vec![o, k]), uniform_tensor(&mut rng, vec![o])];
        record("linear", check_gradients(&lin, STEP, 20, |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            readout(g, y, cfg)
        }).unwrap());
        let logits = uniform_tensor(&mut rng, vec![n + 1, 2]);
        let labels: Vec<usize> = (0..=n).map(|i| (i + cfg as usize) % 2).collect();
        record("softmax_cross_entropy", check_gradients(&[logits], STEP, 20, |g, v| {
            g.softmax_cross_entropy(v[0], &labels)
        }).unwrap());

        let eps = 1e-5;
        let xs = normal_tensor(&mut rng, vec![n, c, h, h], 0.2, 1.0);
        let ys = normal_tensor(&mut rng, vec![n, c, h + 1, h + 1], -0.3, 1.5);
        let scale = normal_tensor(&mut rng, vec![n, c], 1.0, 0.5);
        let shift = normal_tensor(&mut rng, vec![n, c], 0.0, 0.5);
        record("instance_norm", check_gradients(&[xs.clone(), scale, shift], STEP, 20, |g, v| {
            let y = nn(instance_norm_var(g, v[0], v[1], v[2], eps))?;
            readout(g, y, cfg)
        }).unwrap());
        record("adain", check_gradients(&[xs.clone(), ys.clone()], STEP, 20, |g, v| {
            let y = nn(adain_var(g, v[0], v[1], eps))?;
            readout(g, y, cfg)
        }).unwrap());
        let xs2 = normal_tensor(&mut rng, vec![n, c + 1, h / 2, h / 2], 0.5, 1.0);
        let ys2 = normal_tensor(&mut rng, vec![n, c + 1, h, h], 0.0, 2.0);
        record("style_loss", check_gradients(&[xs.clone(), xs2, ys, ys2], STEP, 20, |g, v| {
            nn(style_loss_var(g, &[v[0], v[1]], &[v[2], v[3]], eps))
        }).unwrap());
        let other = normal_tensor(&mut rng, vec![n, c, h, h], 0.0, 1.0);
        record("content_loss", check_gradients(&[xs, other], STEP, 20, |g, v| {
            nn(content_loss_var(g, v[0], v[1]))
        }).unwrap());
    }
    let pass = worst_by_op.iter().all(|(_, w)| *w < 1e-5);
    let detail = worst_by_op
        .iter()
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("{CONFIGS} configs per op, worst relative error: {detail}"))
}

fn otsu_sweep(img: &GrayImage) -> usize {
    let bins: Vec<usize> = img.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as usize).collect();
    let n = bins.len() as f64;
    let mut best = (0, f64::NEG_INFINITY);
    for t in 0..256 {
        let lo: Vec<f64> = bins.iter().filter(|&&b| b <= t).map(|&b| b as f64).collect();
        let hi: Vec<f64> = bins.iter().filter(|&&b| b > t).map(|&b| b as f64).collect();
        if lo.is_empty() || hi.is_empty() {
            continue;
        }
        let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
        let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
        let var = (lo.len() as f64 / n) * (hi.len() as f64 / n) * (m0 - m1).powi(2);
        if var > best.1 * (1.0 + 1e-12) {
            best = (t, var);
        }
    }
    best.0
}

fn tdr_sweep(bona: &[f64], spoof: &[f64], fdr: f64) -> f64 {
    let mut best: f64 = 0.0;
    for &t in bona.iter().chain(spoof).chain(&[f64::INFINITY, f64::NEG_INFINITY]) {
        let fd = bona.iter().filter(|&&s| s > t).count() as f64 / bona.len() as f64;
        if fd <= fdr {
            best = best.max(spoof.iter().filter(|&&s| s > t).count() as f64 / spoof.len() as f64);
        }
    }
    best
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let p = (k / 2) as isize;
    let mut out = vec![0.0; n * cout * h * wd];
    for s in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y as isize + ky as isize - p, xx as isize + kx as isize - p);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((co * cin + ci) * k + ky) * k + kx]
                                    * x.data()[((s * cin + ci) * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                    out[((s * cout + co) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    out
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut otsu_ok = 0;
    let mut otsu_cases = 0;
    while otsu_cases < 100 {
        let (w, h) = (rng.random_range(4..48), rng.random_range(4..48));
        let levels = rng.random_range(2..20);
        let palette: Vec<f32> = (0..levels).map(|_| rng.random_range(0.0..1.0)).collect();
        let img = GrayImage::from_fn(w, h, |_, _| palette[rng.random_range(0..levels)]);
        let Ok(o) = otsu_threshold(&img) else {
            continue;
        };
        otsu_cases += 1;
        otsu_ok += usize::from(o.threshold as usize == otsu_sweep(&img));
    }

    let mut tdr_ok = 0;
    for case in 0..1000 {
        let levels = rng.random_range(2..20);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect()
        };
        let (nb, ns) = (1 + case % 97, 1 + (case * 7) % 61);
        let (bona, spoof) = (draw(nb), draw(ns));
        let fdr = [0.001, 0.01, 0.05, 0.1, 0.2, 0.5][case % 6];
        let r = tdr_at_fdr(&bona, &spoof, fdr).unwrap();
        tdr_ok += usize::from(r.tdr == tdr_sweep(&bona, &spoof, fdr) && r.achieved_fdr <= fdr);
    }

    let mut conv_err = 0.0f64;
    for _ in 0..20 {
        let x = uniform_tensor(&mut rng, vec![1, 2, 5, 5]);
        let w = uniform_tensor(&mut rng, vec![3, 2, 3, 3]);
        let b = uniform_tensor(&mut rng, vec![3]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, bv, Padding::Zero).unwrap();
        for (a, o) in g.value(y).data().iter().zip(naive_conv(&x, &w, &b)) {
            conv_err = conv_err.max((a - o).abs());
        }
    }
    outcome(
        otsu_ok == 100 && tdr_ok == 1000 && conv_err <= 1e-6,
        format!("otsu {otsu_ok}/100, tdr_at_fdr {tdr_ok}/1000, conv2d max error {conv_err:.1e}"),
    )
}

fn axial_error(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

fn orientation_and_alignment() -> Outcome {
    let mut errors: Vec<f64> = (0..36)
        .map(|i| {
            let theta = i as f64 * PI / 36.0;
            let (nx, ny) = (-theta.sin(), theta.cos());
            let img = GrayImage::from_fn(128, 128, |x, y| {
                let t = (x as f64 - 63.5) * nx + (y as f64 - 63.5) * ny;
                (0.5 + 0.5 * (2.0 * PI * t / 10.0).sin()) as f32
            });
            let field = estimate_orientation(&img, ORIENTATION_WINDOW, ORIENTATION_STRIDE).unwrap();
            axial_error(trimmed_mean_orientation(&field, 0.1).unwrap(), theta).to_degrees()
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    let median = (errors[17] + errors[18]) / 2.0;

    let spec = PatchSpec::default();
    let toy = ToySpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut residuals = Vec::new();
    let mut image = 0u64;
    while residuals.len() < 100 {
        let m = rng.random_range(0..=toy.materials.len());
        let transform = (m > 0).then(|| &toy.materials[m - 1].transform);
        let (img, _) = render_toy_image(&toy, transform, 1000 + image);
        image += 1;
        let mask = segment(&img, &spec).unwrap();
        let one = PatchSpec {
            patches_per_image: 10,
            ..spec.clone()
        };
        for (x, y) in sample_patch_origins(&mask, &one, image).unwrap() {
            let raw = img.crop(x, y, spec.raw_size, spec.raw_size).unwrap();
            let aligned = align_and_crop(&raw, &spec).unwrap();
            let crop = GrayImage::new(PATCH_SIDE, PATCH_SIDE, aligned.pixels).unwrap();
            let field = estimate_orientation(&crop, ORIENTATION_WINDOW, ORIENTATION_STRIDE).unwrap();
            let theta = trimmed_mean_orientation(&field, spec.trim_fraction_per_tail).unwrap_or(f64::NAN);
            residuals.push(axial_error(theta, PI / 2.0).to_degrees());
        }
    }
    residuals.truncate(100);
    let max = residuals.iter().copied().fold(0.0, f64::max);
    let ok = residuals.iter().all(|r| *r < 3.0);
    outcome(
        median <= 2.0 && ok,
        format!("median error over 36 angles {median:.3}°, max residual over 100 toy patches {max:.3}°"),
    )
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run_umt(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_umt"))
        .args(args)
        .env("UMT_LOG", "warn")
        .output()
        .expect("spawn umt");
    assert!(
        out.status.success(),
        "umt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const TINY_CONFIG: &str = r#"
[toy]
image_size = 300
bonafide_train = 3
bonafide_test = 2
spoof_train = 3
spoof_test = 3
[patch]
patches_per_image = 4
[pretrain]
iters = 30
[umt]
iters = 30
[classifier]
epochs = 2
batch_size = 8
lr = 1e-3
[plan]
runs = 2
epoch_window = [1, 2]
fdr_target = 0.05
k_images = 2
synth_count = 12
"#;

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let mut summaries = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        run_umt(&["experiment", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
        summaries.push(std::fs::read(out.join("summary.csv")).unwrap());
    }
    let rows = String::from_utf8_lossy(&summaries[0]).lines().count() - 1;
    outcome(
        summaries[0] == summaries[1] && rows > 0,
        format!("two seeded runs, {rows} summary rows, {} bytes each, identical: {}", summaries[0].len(), summaries[0] == summaries[1]),
    )
}

fn patch_strategy() -> impl Strategy<Value = AlignedPatch> {
    (
        prop::collection::vec(0.0f32..=1.0, PATCH_SIDE * PATCH_SIDE),
        0u8..3,
        0u16..0xFFFF,
        any::<u32>(),
        -1.6f32..1.6,
    )
        .prop_map(|(pixels, code, material, source, rot)| {
            let label = Label::from_code(code).unwrap();
            let material = (label != Label::Bonafide).then_some(material);
            AlignedPatch::new(pixels, label, material, source, rot).unwrap()
        })
}

fn store_strategy() -> impl Strategy<Value = ParamStore<f32>> {
    let param = ("[a-z0-9_.]{0,16}", prop::collection::vec(0usize..6, 0..4)).prop_flat_map(|(name, shape)| {
        let n: usize = shape.iter().product();
        (Just(name), Just(shape), prop::collection::vec(any::<u32>(), n), any::<bool>())
    });
    prop::collection::vec(param, 0..6).prop_map(|params| {
        let mut s = ParamStore::new();
        for (name, shape, bits, trainable) in params {
            let data = bits.into_iter().map(f32::from_bits).collect();
            s.push(name, Tensor::from_vec(shape, data).unwrap(), trainable);
        }
        s
    })
}

fn quiet_runner(cases: u32) -> TestRunner {
    TestRunner::new(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(cases)
    })
}

fn persistence() -> Outcome {
    let mut runner = quiet_runner(64);
    let patches = runner.run(&prop::collection::vec(patch_strategy(), 0..4), |patches| {
        let bytes = encode_patches(&patches).unwrap();
        let back = decode_patches(&bytes).unwrap();
        prop_assert_eq!(back.len(), patches.len());
        for (a, b) in patches.iter().zip(&back) {
            prop_assert_eq!((a.label, a.material, a.source_id), (b.label, b.material, b.source_id));
            prop_assert_eq!(a.rotation_applied.to_bits(), b.rotation_applied.to_bits());
            prop_assert!(a.pixels.iter().zip(&b.pixels).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        prop_assert_eq!(encode_patches(&back).unwrap(), bytes);
        Ok(())
    });
    let mut runner = quiet_runner(256);
    let weights = runner.run(&store_strategy(), |store| {
        let bytes = encode_checkpoint(&store);
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back.len(), store.len());
        for (a, b) in store.iter().zip(back.iter()) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(a.tensor.shape(), b.tensor.shape());
            prop_assert!(a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        prop_assert_eq!(encode_checkpoint(&back), bytes);
        Ok(())
    });
    fn describe<T: std::fmt::Debug>(r: &Result<(), proptest::test_runner::TestError<T>>) -> String {
        match r {
            Ok(()) => "ok".into(),
            Err(e) => format!("{e}"),
        }
    }
    outcome(
        patches.is_ok() && weights.is_ok(),
        format!("UMTP 64 cases: {}, UMTW 256 cases: {}", describe(&patches), describe(&weights)),
    )
}

struct ProtocolResults {
    reports: Vec<(ExperimentReport, ExperimentReport)>,
    generator_totals: Vec<(String, Vec<f64>)>,
    minutes: f64,
}

fn run_protocol() -> ProtocolResults {
    let dir = tempfile::tempdir().unwrap();
    let cfg = workspace_root().join("configs/acceptance.cfg");
    let start = Instant::now();
    let out = dir.path().join("run");
    run_umt(&["experiment", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let materials: Vec<String> =
        serde_json::from_str(&std::fs::read_to_string(out.join("patches/materials.json")).unwrap()).unwrap();
    let load = |name: String| -> ExperimentReport {
        serde_json::from_str(&std::fs::read_to_string(out.join(name)).unwrap()).unwrap()
    };
    let reports = materials
        .iter()
        .map(|m| (load(format!("report-{m}-cross-material.json")), load(format!("report-{m}-known-material.json"))))
        .collect();
    let generator_totals = materials
        .iter()
        .map(|m| {
            let csv = std::fs::read_to_string(out.join(format!("generator-{m}.csv"))).unwrap();
            let totals = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
            (m.clone(), totals)
        })
        .collect();
    ProtocolResults {
        reports,
        generator_totals,
        minutes,
    }
}

/// Per-run window means of one arm, percent.
fn run_means(report: &ExperimentReport, arm: Arm) -> Vec<f64> {
    let a = report.arms.iter().find(|a| a.arm == arm).expect("arm in report");
    (0..a.runs.len()).map(|r| a.run_mean_pct(r, report.epoch_window)).collect()
}

fn directional(results: &ProtocolResults) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut gains = Vec::new();
    for (cross, _) in &results.reports {
        let base = run_means(cross, Arm::Baseline);
        let aug = run_means(cross, Arm::Augmented);
        let wins = aug.iter().zip(&base).filter(|(a, b)| a >= b).count();
        let gain = aug.iter().sum::<f64>() / aug.len() as f64 - base.iter().sum::<f64>() / base.len() as f64;
        pass &= wins >= 4 && base.len() == 5;
        gains.push(gain);
        parts.push(format!("{} wins {wins}/{} ({:+.1} pp)", cross.held_out, base.len(), gain));
    }
    let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
    pass &= gains.len() == 3 && mean_gain > 0.0;
    outcome(
        pass,
        format!("{}; mean gain {mean_gain:+.2} pp; runtime {:.1} min", parts.join(", "), results.minutes),
    )
}

fn known_material(results: &ProtocolResults) -> Outcome {
    let mut pass = results.reports.len() == 3;
    let mut parts = Vec::new();
    for (_, known) in &results.reports {
        let mean = |arm| known.arms.iter().find(|a| a.arm == arm).unwrap().mean_tdr_pct;
        let (b, a) = (mean(Arm::Baseline), mean(Arm::Augmented));
        pass &= (a - b).abs() <= 5.0;
        parts.push(format!("{} baseline {b:.2}% augmented {a:.2}%", known.held_out));
    }
    outcome(pass, parts.join(", "))
}

fn generator_progress(results: &ProtocolResults) -> Outcome {
    let mut pass = results.generator_totals.len() == 3;
    let mut parts = Vec::new();
    for (m, totals) in &results.generator_totals {
        let w = 100;
        let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let ok_len = totals.len() == 2000;
        let (first, last) = (avg(&totals[..w]), avg(&totals[totals.len() - w..]));
        let ratio = last / first;
        pass &= ok_len && ratio < 0.5;
        parts.push(format!("{m} {first:.2} -> {last:.2} (x{ratio:.3})"));
    }
    outcome(pass, format!("100-iteration moving average of L: {}", parts.join(", ")))
}

fn main() {
    let mut lines: Vec<(u32, &str, Outcome)> = Vec::new();
    lines.push((3, "AdaIN exactness", guarded(adain_exactness)));
    lines.push((4, "gradient integrity", guarded(gradient_integrity)));
    lines.push((5, "oracle equivalence", guarded(oracle_equivalence)));
    lines.push((6, "orientation and alignment", guarded(orientation_and_alignment)));
    lines.push((8, "determinism", guarded(determinism)));
    lines.push((9, "persistence", guarded(persistence)));
    match catch_unwind(run_protocol) {
        Ok(results) => {
            lines.push((1, "directional cross-material gain", guarded(|| directional(&results))));
            lines.push((2, "known-material non-degradation", guarded(|| known_material(&results))));
            lines.push((7, "generator training progress", guarded(|| generator_progress(&results))));
        }
        Err(_) => {
            for (id, name) in [(1, "directional cross-material gain"), (2, "known-material non-degradation"), (7, "generator training progress")] {
                lines.push((id, name, outcome(false, "protocol run failed")));
            }
        }
    }
    lines.sort_by_key(|l| l.0);
    let mut failed = 0;
    for (id, name, o) in &lines {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("[{tag}] criterion {id} {name}: {}", o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
