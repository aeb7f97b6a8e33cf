//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so the
//! report is always printed; exits nonzero when a criterion fails unexpectedly.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{counts, crafted, naive_conv, naive_conv_transpose, nested, oracle_total};
use ddunet::cli::run::{stack, LAST_CHECKPOINT};
use ddunet::cli::{load_dataset, train, Checkpoint, RunConfig};
use ddunet::data::{
    apply_plan, load_nifti, phantom_subject, preprocess_subject, save_nifti, AugmentPlan, NiftiDtype, NiftiVolume,
    Subject,
};
use ddunet::engine::{center_crop_starts, finite_diff_check, Rng, Stream, Tape, Tensor};
use ddunet::gradsuite::{self, ScopeReport};
use ddunet::layers::{conv3d_backward, conv3d_forward, conv_transpose3d_forward, softmax_channels, ConvGeometry};
use ddunet::network::{
    build_model, forward, predict, ArchitectureConfig, Attention, Downsample, ForwardOptions, Gating, ModelParams,
};
use ddunet::objectives::{dice_loss, evaluate_volume, focal_loss, region_positive_set, total_loss, LossConfig, Region};
use ddunet::optim::{cawr_lr, onecycle_lr, AdamW, AdamWConfig, ScheduleConfig, ScheduleKind};
use nifti::{NiftiObject, NiftiVolume as _, RandomAccessNiftiVolume, ReaderOptions};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::normal(shape, 0.0, 1.0, &mut Rng::new(seed, Stream::Init)).unwrap()
}

/// A failing check is finite-difference noise when the true gradient is
/// identically zero: the analytic value is at round-off level and the
/// difference quotient is a few ulps of the objective over 2h.
fn is_zero_gradient_noise(r: &ScopeReport) -> bool {
    r.checks.iter().filter(|c| !c.report.passed).all(|c| {
        c.report.error.is_none() && c.report.analytic.abs() < 1e-12 && c.report.numeric.abs() < 1e-9
    })
}

/// Returns the outcome and whether a failure is the known round-off limit.
/// Checks `targets` in each tiny network variant widened to 16 channels, so
/// that every GroupNorm group spans two channels and the biases matter.
fn wide_bias_check(targets: &BTreeSet<&str>) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for instance in 0..4 {
        let config = ArchitectureConfig { stage_channels: vec![16, 16], ..gradsuite::tiny_network_config(instance) };
        let params: ModelParams<f64> =
            build_model(&config, &mut Rng::new(instance, Stream::Init)).map_err(|e| e.to_string())?;
        let x = randn(&[1, 1, 2, 2, 2], 100 + instance);
        for &target in targets {
            let Ok(value) = params.get(target) else { continue };
            let report = finite_diff_check(
                |tape: &mut Tape<f64>, v| {
                    let bound = params
                        .iter()
                        .map(|(k, t)| (k.clone(), if k == target { v } else { tape.constant(t.clone()) }))
                        .collect();
                    let xv = tape.constant(x.clone());
                    let out = forward(tape, &bound, &config, &xv, ForwardOptions::eval())?;
                    tape.sum_all(out.logits)
                },
                value,
                gradsuite::STEP,
                gradsuite::TOLERANCE,
            );
            ensure(report.passed, || format!("{target} fails at width 16 (instance {instance}): {report:?}"))?;
            worst = worst.max(report.max_rel_error);
        }
    }
    Ok(worst)
}

fn gradient_suite() -> (Outcome, bool) {
    let start = Instant::now();
    let reports = match gradsuite::run("all", gradsuite::DEFAULT_INSTANCES) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), false),
    };
    let elapsed = start.elapsed();
    let failed: Vec<&ScopeReport> = reports.iter().filter(|r| !r.passed()).collect();
    let mut summary = format!(
        "{}/{} scopes at tol {:e}, {} instances each, {:.1}s",
        reports.len() - failed.len(),
        reports.len(),
        gradsuite::TOLERANCE,
        gradsuite::DEFAULT_INSTANCES,
        elapsed.as_secs_f64()
    );
    if elapsed > Duration::from_secs(300) {
        return (Err(format!("{summary}; over the 5 minute budget")), false);
    }
    if failed.is_empty() {
        return (Ok(summary), false);
    }
    let mut known = true;
    for r in &failed {
        let targets: BTreeSet<&str> =
            r.checks.iter().filter(|c| !c.report.passed).map(|c| c.target.as_str()).collect();
        let noise = is_zero_gradient_noise(r);
        known &= noise;
        summary.push_str(&format!("; {} fails on {}", r.scope, targets.iter().copied().collect::<Vec<_>>().join(" ")));
        if noise {
            summary.push_str(
                " (conv biases ahead of one-channel-per-group GroupNorm have an exactly zero gradient, \
                 and the central difference cannot resolve zero below the 1e-8 relative floor in f64)",
            );
            match wide_bias_check(&targets) {
                Ok(err) => summary.push_str(&format!("; the same biases pass at width 16, max rel err {err:.1e}")),
                Err(e) => {
                    known = false;
                    summary.push_str(&format!("; {e}"));
                }
            }
        }
    }
    (Err(summary), known)
}

fn conv_oracle() -> Outcome {
    let cases: [([usize; 5], usize, usize, usize); 5] = [
        ([2, 3, 5, 5, 5], 2, 3, 1),
        ([1, 2, 4, 5, 3], 3, 3, 1),
        ([2, 3, 4, 4, 4], 3, 2, 2),
        ([2, 3, 5, 5, 5], 4, 1, 1),
        ([1, 1, 5, 4, 5], 2, 3, 2),
    ];
    let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 { a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum() };
    let mut worst: f64 = 0.0;
    for (i, &(shape, co, k, s)) in cases.iter().enumerate() {
        let pad = if k % 2 == 1 { (k - 1) / 2 } else { 0 };
        let geom = ConvGeometry { stride: s, pad };
        let (x, w, b) = (randn(&shape, 100 + i as u64), randn(&[co, shape[1], k, k, k], 200 + i as u64), randn(&[co], 300 + i as u64));
        let fast = conv3d_forward(&x, &w, Some(&b), geom).map_err(|e| e.to_string())?;
        let err = fast.max_abs_diff(&naive_conv(&x, &w, &b, s, pad)).unwrap();
        ensure(err <= 1e-10, || format!("conv3d case {i}: {err:e}"))?;
        worst = worst.max(err);

        let y = conv3d_forward(&x, &w, None, geom).unwrap();
        let r = randn(y.shape(), 400 + i as u64);
        let [gx, _, _] = conv3d_backward(&x, &w, &r, geom, [true, false, false]).unwrap();
        let gap = (dot(&y, &r) - dot(&x, &gx.unwrap())).abs() / (dot(&y, &y) * dot(&r, &r)).sqrt().max(1.0);
        ensure(gap <= 1e-10, || format!("adjoint case {i}: {gap:e}"))?;
        worst = worst.max(gap);
    }
    for (i, (shape, co, k, s, pad)) in
        [([2, 3, 3, 3, 3], 2, 2, 2, 0), ([1, 2, 2, 3, 2], 3, 3, 1, 1), ([2, 3, 2, 2, 2], 3, 3, 2, 1)].into_iter().enumerate()
    {
        let (x, w, b) = (randn(&shape, 500 + i as u64), randn(&[shape[1], co, k, k, k], 600 + i as u64), randn(&[co], 700 + i as u64));
        let fast = conv_transpose3d_forward(&x, &w, Some(&b), ConvGeometry { stride: s, pad }).unwrap();
        let err = fast.max_abs_diff(&naive_conv_transpose(&x, &w, &b, s, pad)).unwrap();
        ensure(err <= 1e-10, || format!("transposed case {i}: {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("max deviation {worst:.1e}"))
}

fn loss_oracle() -> Outcome {
    let cfg = LossConfig::default();
    ensure((cfg.lambda_dice, cfg.lambda_focal, cfg.gamma, cfg.alpha) == (0.7, 0.3, 2.0, 0.25), || {
        format!("default loss weights {cfg:?}")
    })?;
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut rng = Rng::new(seed, Stream::Init);
        let shape = [1, 2, 2, 2, 2];
        let logits = Tensor::normal(&shape, 0.0, 2.0, &mut rng).unwrap();
        let mut t = vec![0.0; 16];
        for v in 0..8 {
            t[rng.below(2) * 8 + v] = 1.0;
        }
        let (p, t) = (softmax_channels(&logits).unwrap(), Tensor::from_vec(&shape, t).unwrap());
        let err = (total_loss(&p, &t, &cfg).unwrap() - oracle_total(&nested(&p), &nested(&t), &cfg)).abs();
        ensure(err <= 1e-9, || format!("seed {seed}: {err:e}"))?;
        worst = worst.max(err);
    }
    let perfect = Tensor::from_vec(&[1, 2, 1, 1, 4], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
    ensure(total_loss(&perfect, &perfect, &cfg).unwrap() == 0.0, || "perfect prediction is not 0".into())?;
    let p = Tensor::from_vec(&[1, 2, 1, 1, 4], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
    let q = Tensor::from_vec(&[1, 2, 1, 1, 4], vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    let half = dice_loss(&p, &q, 1e-12).unwrap();
    ensure((half - 0.5).abs() < 1e-12, || format!("half-overlap dice {half}"))?;
    let even = Tensor::full(&[1, 2, 1, 1, 2], 0.5).unwrap();
    let t = Tensor::from_vec(&[1, 2, 1, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let focal = focal_loss(&even, &t, &cfg).unwrap();
    ensure((focal - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15, || format!("focal anchor {focal}"))?;
    Ok(format!("50 instances, max deviation {worst:.1e}; anchors exact"))
}

fn metrics_oracle() -> Outcome {
    let (pred, truth) = crafted();
    let r = evaluate_volume(&pred, &truth).map_err(|e| e.to_string())?;
    let classes: Vec<_> = r.classes.iter().map(|s| s.counts).collect();
    let want = [counts(16, 16, 32, 0), counts(8, 0, 48, 8), counts(16, 0, 48, 0), counts(0, 8, 40, 16)];
    ensure(classes == want, || format!("class counts {classes:?}"))?;
    let regions: Vec<_> = r.regions.iter().map(|s| s.counts).collect();
    let want = [counts(32, 0, 16, 16), counts(16, 0, 32, 16), counts(0, 8, 40, 16)];
    ensure(regions == want, || format!("region counts {regions:?}"))?;
    let sets: Vec<&[u8]> = Region::ALL.iter().map(|&r| region_positive_set(r)).collect();
    ensure(sets == [&[1, 2, 3][..], &[1, 3], &[3]], || format!("region sets {sets:?}"))?;

    let mut rng = Rng::new(23, Stream::Init);
    for _ in 0..100 {
        let pred: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let truth: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let report = evaluate_volume(&pred, &truth).unwrap();
        for (i, set) in sets.iter().enumerate() {
            let (bp, bt): (Vec<bool>, Vec<bool>) = (
                pred.iter().map(|v| set.contains(v)).collect(),
                truth.iter().map(|v| set.contains(v)).collect(),
            );
            let tp = bp.iter().zip(&bt).filter(|(p, t)| **p && **t).count() as u64;
            let fp = bp.iter().zip(&bt).filter(|(p, t)| **p && !**t).count() as u64;
            let fn_ = bp.iter().zip(&bt).filter(|(p, t)| !**p && **t).count() as u64;
            let c = counts(tp, fp, 64 - tp - fp - fn_, fn_);
            ensure(report.regions[i].counts == c, || format!("region {i}: {:?} vs {c:?}", report.regions[i].counts))?;
        }
    }
    Ok("crafted counts exact; 100 random masks agree".into())
}

fn run_config(out: &Path, assignments: &[&str]) -> RunConfig {
    let mut cfg = RunConfig::default();
    for kv in assignments {
        cfg.apply_assignment(kv).unwrap();
    }
    cfg.run.out = out.to_path_buf();
    cfg
}

fn overfit(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = run_config(
        &tmp.join("overfit"),
        &[
            "model.stage_channels=8,16,32",
            "model.convs_per_stage=1,1,2",
            "model.attention=per_decoder_per_level",
            "model.gating=same_level",
            "data.phantom_size=32",
            "data.phantom_count=1",
            "data.crop=32",
            "data.split_ratio=1",
            "data.augment_prob=0",
            "optim.schedule=onecycle",
            "optim.max_lr=0.01",
            "run.epochs=100",
            "run.eval_every=1000",
            "run.eval_splits=train",
        ],
    );
    let out = train(&cfg, |_| {}).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let wt = out.epochs.last().and_then(|e| e.evals.first()).map(|(_, ev)| ev.scores.wt_dice()).unwrap_or(0.0);
    let msg = format!("{} steps, training WT Dice {wt:.4}, {:.0}s", out.steps, elapsed.as_secs_f64());
    ensure(out.steps <= 300 && wt >= 0.90 && elapsed <= Duration::from_secs(900), || msg.clone())?;
    Ok(msg)
}

fn variant_matrix(tmp: &Path) -> Outcome {
    let base = ["model.stage_channels=8,16,32", "model.convs_per_stage=1,1,1", "data.phantom_size=16", "data.phantom_count=2", "data.crop=16", "data.split_ratio=0.5", "run.epochs=1", "run.eval_splits=test"];
    let variants: [(&str, &[&str]); 5] = [
        ("baseline", &["model.decoders=1", "model.attention=none"]),
        ("1AG", &["model.attention=shared_per_level"]),
        ("2AG", &[]),
        ("original-gating", &["model.gating=original"]),
        ("strided-conv", &["model.downsample=strided_conv"]),
    ];
    for (name, extra) in variants {
        let cfg = run_config(&tmp.join(name), &[&base[..], extra].concat());
        let out = train(&cfg, |_| {}).map_err(|e| format!("{name}: {e}"))?;
        ensure(out.steps == 1, || format!("{name}: {} steps", out.steps))?;
        let x = Tensor::<f32>::normal(&[2, 4, 16, 8, 24], 0.0, 1.0, &mut Rng::new(1, Stream::Init)).unwrap();
        let logits = predict(&out.params, &cfg.model, &x, false).map_err(|e| format!("{name}: {e}"))?.logits;
        ensure(logits.shape() == [2, 4, 16, 8, 24], || format!("{name}: logits {:?}", logits.shape()))?;
    }

    let c = ArchitectureConfig {
        in_channels: 2,
        num_classes: 3,
        stage_channels: vec![4, 8, 8],
        convs_per_stage: vec![1, 2, 1],
        attention: Attention::PerDecoderPerLevel,
        gating: Gating::SameLevel,
        downsample: Downsample::MaxPool,
        ..Default::default()
    };
    let mut p: ModelParams<f64> = build_model(&c, &mut Rng::new(7, Stream::Init)).unwrap();
    let head = p.get_mut("headB/w").unwrap();
    *head = Tensor::zeros_like(head);
    let x = randn(&[1, 2, 8, 8, 8], 8);
    let before = predict(&p, &c, &x, false).unwrap().logits;
    let mut rng = Rng::new(9, Stream::Init);
    let gates: Vec<String> = p.names().filter(|n| n.starts_with("gateB/")).map(String::from).collect();
    for n in &gates {
        let t = p.get_mut(n).unwrap();
        *t = t.add(&Tensor::normal(t.shape(), 0.0, 1.0, &mut rng).unwrap()).unwrap();
    }
    let diff = predict(&p, &c, &x, false).unwrap().logits.max_abs_diff(&before).unwrap();
    ensure(!gates.is_empty() && diff == 0.0, || format!("perturbing {} gate tensors moved logits by {diff:e}", gates.len()))?;
    Ok(format!("5 variants trained one step; gate disjointness diff {diff}"))
}

fn schedules() -> Outcome {
    for total in [10, 100, 500, 1000] {
        let cfg = ScheduleConfig { total_steps: total, max_lr: 3e-3, ..Default::default() };
        let lr = |s| onecycle_lr(s, &cfg).unwrap();
        ensure((lr(0) - 3e-3 / cfg.div_factor).abs() <= 1e-12, || format!("start {}", lr(0)))?;
        ensure((lr((cfg.pct_start * total as f64) as u64) - 3e-3).abs() <= 1e-12, || format!("peak of {total}"))?;
        ensure((lr(total) - 3e-3 / cfg.final_div_factor).abs() <= 1e-12, || format!("end {}", lr(total)))?;
    }
    for (t_mult, restarts) in [(1, [0, 5, 10, 15, 20]), (2, [0, 5, 15, 35, 75])] {
        let cfg = ScheduleConfig { kind: ScheduleKind::Cawr, t0: 5, t_mult, max_lr: 2e-3, min_lr: 1e-5, ..Default::default() };
        for r in restarts {
            ensure(cawr_lr(r, &cfg) == 2e-3, || format!("T_mult {t_mult}: lr {} at restart {r}", cawr_lr(r, &cfg)))?;
        }
    }
    Ok("OneCycle boundaries and CAWR restarts exact".into())
}

fn optimizer() -> Outcome {
    let params = |v: &[f64]| {
        let mut p = ModelParams::new();
        p.insert("theta", Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()).unwrap();
        p
    };
    let grads = |v: &[f64]| BTreeMap::from([("theta".to_string(), Tensor::from_vec(&[v.len()], v.to_vec()).unwrap())]);

    let (lr, b1, b2, eps, wd): (f64, f64, f64, f64, f64) = (0.1, 0.9, 0.999, 1e-8, 0.01);
    let (mut m, mut v, mut vmax, mut th) = (0.0, 0.0, 0.0f64, 1.0);
    let mut p = params(&[1.0]);
    let mut opt = AdamW::new(AdamWConfig { beta1: b1, beta2: b2, eps, weight_decay: wd });
    for (t, g) in [1.0, -0.5, 2.0].into_iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        vmax = vmax.max(v);
        th = th - lr * (m / (1.0 - b1.powi(t))) / ((vmax / (1.0 - b2.powi(t))).sqrt() + eps) - lr * wd * th;
        opt.step(&mut p, &grads(&[g]), lr).unwrap();
        let got = p.get("theta").unwrap().data()[0];
        ensure((got - th).abs() <= 1e-12, || format!("step {t}: {got} vs {th}"))?;
    }

    let mut rng = Rng::new(4, Stream::Init);
    let mut p = params(&[0.5, -1.0, 2.0]);
    let mut opt = AdamW::new(AdamWConfig::default());
    let mut prev = vec![0.0; 3];
    for step in 0..1000 {
        let g: Vec<f64> = (0..3).map(|_| rng.normal() * if rng.bernoulli(0.05) { 50.0 } else { 0.1 }).collect();
        opt.step(&mut p, &grads(&g), 1e-3).unwrap();
        let now = opt.moments["theta"].v_max.data().to_vec();
        ensure(now.iter().zip(&prev).all(|(a, b)| a >= b), || format!("v_max decreased at step {step}"))?;
        prev = now;
    }

    let mut p = params(&[2.0, -3.0]);
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.01, ..Default::default() });
    opt.step(&mut p, &grads(&[0.0, 0.0]), 0.1).unwrap();
    let got = p.get("theta").unwrap().data().to_vec();
    ensure(got == [2.0 * 0.999, -3.0 * 0.999], || format!("decay step {got:?}"))?;
    Ok("hand trace within 1e-12; v_max monotone; decay decoupled".into())
}

fn determinism(tmp: &Path) -> Outcome {
    let dir = tmp.join("determinism");
    let cfg = run_config(
        &dir,
        &["model.stage_channels=8,16,32", "model.convs_per_stage=1,1,1", "data.phantom_size=16", "data.phantom_count=2", "data.crop=16", "data.split_ratio=0.5", "run.epochs=2"],
    );
    let out = train(&cfg, |_| {}).map_err(|e| e.to_string())?;
    let first = fs::read(dir.join(LAST_CHECKPOINT)).unwrap();
    train(&cfg, |_| {}).map_err(|e| e.to_string())?;
    ensure(fs::read(dir.join(LAST_CHECKPOINT)).unwrap() == first, || "rerun checkpoint differs".into())?;

    let ck = Checkpoint::<f32>::load(dir.join(LAST_CHECKPOINT)).map_err(|e| e.to_string())?;
    ensure(ck.encode() == first, || "save after load differs".into())?;
    let data = load_dataset(&cfg).unwrap();
    let x = stack(&[&data.test[0].image]).unwrap();
    let a = predict(&out.params, &cfg.model, &x, false).unwrap().logits;
    let b = predict(&ck.params, &cfg.model, &x, false).unwrap().logits;
    ensure(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), || "logits changed".into())?;

    let mut rng = Rng::new(2, Stream::Init);
    let vol = NiftiVolume::new(vec![8, 8, 8], NiftiDtype::F32, (0..512).map(|_| rng.normal() as f32).collect()).unwrap();
    for name in ["v.nii", "v.nii.gz"] {
        let path = tmp.join(name);
        save_nifti(&vol, &path).map_err(|e| e.to_string())?;
        let back = load_nifti(&path).map_err(|e| e.to_string())?;
        ensure(back.data.iter().zip(&vol.data).all(|(a, b)| a.to_bits() == b.to_bits()), || format!("{name} lossy"))?;
        let other = ReaderOptions::new().read_file(&path).map_err(|e| e.to_string())?;
        let v = other.volume();
        ensure(other.header().datatype == 16 && v.dim() == [8, 8, 8], || format!("{name}: header mismatch"))?;
        for (x, y, z) in [(0u16, 0u16, 0u16), (7, 0, 0), (0, 7, 0), (0, 0, 7), (3, 4, 5)] {
            let want = vol.data[x as usize + 8 * y as usize + 64 * z as usize] as f64;
            ensure(v.get_f64(&[x, y, z]).unwrap() == want, || format!("{name}: voxel ({x},{y},{z})"))?;
        }
    }
    Ok("reruns byte-identical; round trip bit-exact; NIfTI lossless and externally readable".into())
}

fn preprocessing() -> Outcome {
    let starts = center_crop_starts(&[240, 240, 155], &[128, 128, 128]).unwrap();
    ensure(starts == [56, 56, 13], || format!("crop starts {starts:?}"))?;

    let extents = [240, 240, 155];
    let n: usize = extents.iter().product();
    let mut rng = Rng::new(31, Stream::Init);
    let modality = |rng: &mut Rng, mean: f64, std: f64| {
        Tensor::from_vec(&extents, (0..n).map(|_| (mean + std * rng.normal()) as f32).collect()).unwrap()
    };
    let modalities = [modality(&mut rng, 400.0, 120.0), modality(&mut rng, 90.0, 30.0), modality(&mut rng, 1e3, 250.0), modality(&mut rng, 5.0, 2.0)];
    let raw = [0.0, 1.0, 2.0, 4.0];
    let mask = Tensor::from_vec(&extents, (0..n).map(|_| raw[rng.below(4)]).collect()).unwrap();
    let s = preprocess_subject(&Subject { id: "brats".into(), modalities, mask }, [128; 3]).map_err(|e| e.to_string())?;
    let sp = 128 * 128 * 128;
    let (mut worst_mean, mut worst_std): (f64, f64) = (0.0, 0.0);
    for ch in s.image.data().chunks(sp) {
        let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / sp as f64;
        let std = (ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / sp as f64).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }
    ensure(worst_mean < 1e-4 && worst_std < 1e-3, || format!("z-score |mean| {worst_mean:e} |std-1| {worst_std:e}"))?;
    // Labels land in four channels; raw 4 can only be channel 3.
    ensure(s.target.shape()[0] == 4 && s.target.data()[3 * sp..].iter().any(|&v| v == 1.0), || "remap".into())?;

    let sample = preprocess_subject(&phantom_subject(1, 16, 0).unwrap(), [16; 3]).unwrap();
    let mut rng = Rng::new(5, Stream::Augment);
    let vox = 16 * 16 * 16;
    for draw in 0..1000 {
        let out = apply_plan(&sample, &AugmentPlan::draw(&mut rng, 0.5)).unwrap();
        let valid = (0..vox).all(|v| (0..4).map(|c| out.target.data()[c * vox + v]).sum::<f32>() == 1.0);
        ensure(valid, || format!("draw {draw} broke one-hot validity"))?;
    }
    Ok(format!("starts {starts:?}; |mean| {worst_mean:.1e}, |std-1| {worst_std:.1e}; 1000 draws one-hot"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut unexpected = 0;
    let mut report = |name: &str, outcome: Outcome, known: bool| {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                let tag = if known { " [known limit, not counted]" } else { "" };
                println!("FAIL  {name}: {detail}{tag}");
                if !known {
                    unexpected += 1;
                }
            }
        }
    };
    let (grad, known) = gradient_suite();
    report("gradient suite", grad, known);
    report("convolution oracle", conv_oracle(), false);
    report("loss oracle", loss_oracle(), false);
    report("metrics oracle", metrics_oracle(), false);
    report("overfit smoke test", overfit(tmp.path()), false);
    report("variant matrix", variant_matrix(tmp.path()), false);
    report("schedule conformance", schedules(), false);
    report("optimizer conformance", optimizer(), false);
    report("determinism and persistence", determinism(tmp.path()), false);
    report("preprocessing conformance", preprocessing(), false);
    if unexpected > 0 {
        println!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}
