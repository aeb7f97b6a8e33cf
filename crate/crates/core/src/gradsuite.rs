//! Finite-difference verification of every differentiable building block at
//! 64-bit, used by the `gradcheck` command and the test suites.

use crate::attention::{attention_gate, gate_param_shapes, GateParams, Gating};
use crate::engine::{finite_diff_check, GradCheck, Rng, Stream, Tape, Tensor, Var};
use crate::error::{arg_err, Result};
use crate::layers::{ConvGeometry, DropoutKey, DropoutSpec, Exec, GroupNormSpec, Mode};
use crate::network::{
    build_model, forward, param_specs, ArchitectureConfig, Attention, Downsample, ForwardOptions, ModelParams,
};
use crate::objectives::LossConfig;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 10;
/// Seeds tried per scope before giving up on finding kink-free instances.
const MAX_ATTEMPTS_FACTOR: usize = 4;

pub const SCOPES: [&str; 14] = [
    "conv3d",
    "conv_transpose3d",
    "maxpool3d",
    "group_norm",
    "relu",
    "sigmoid",
    "softmax",
    "channel_dropout",
    "attention_same_level",
    "attention_original",
    "dice_loss",
    "focal_loss",
    "total_loss",
    "network",
];

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub seed: u64,
    /// Input the gradient is taken with respect to.
    pub target: String,
    pub report: GradCheck,
}

#[derive(Clone, Debug)]
pub struct ScopeReport {
    pub scope: &'static str,
    pub checks: Vec<CheckOutcome>,
    /// Instances whose difference stencils crossed a kink and were replaced.
    pub skipped_seeds: Vec<u64>,
    pub instances: usize,
}

impl ScopeReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.report.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CheckOutcome> {
        self.checks
            .iter()
            .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
    }
}

type Named = Vec<(String, Tensor<f64>)>;

fn randn(shape: &[usize], rng: &mut Rng) -> Result<Tensor<f64>> {
    Tensor::normal(shape, 0.0, 1.0, rng)
}

/// Checks `f` with respect to each named input in turn, the others held fixed.
fn check_each(inputs: &Named, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Vec<(String, GradCheck)> {
    (0..inputs.len())
        .map(|i| {
            let report = finite_diff_check(
                |tape, x| {
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, (_, t))| if j == i { x } else { tape.constant(t.clone()) })
                        .collect();
                    f(tape, &vars)
                },
                &inputs[i].1,
                STEP,
                TOLERANCE,
            );
            (inputs[i].0.clone(), report)
        })
        .collect()
}

/// `sum(y * r)` for a fixed random `r`, so that every output element matters.
fn project(tape: &mut Tape<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let r = tape.constant(r.clone());
    let p = tape.mul(y, r)?;
    tape.sum_all(p)
}

fn shape_of<T: crate::engine::Element>(tape: &Tape<T>, v: Var) -> Vec<usize> {
    tape.value(v).shape().to_vec()
}

fn conv_instance(rng: &mut Rng, transposed: bool) -> Result<Vec<(String, GradCheck)>> {
    let n = 1 + rng.below(2);
    let (ci, co) = (1 + rng.below(3), 1 + rng.below(3));
    let (k, geom, ext) = if transposed {
        (2, ConvGeometry { stride: 2, pad: 0 }, [1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(3)])
    } else {
        match rng.below(3) {
            0 => (3, ConvGeometry::SAME, [2 + rng.below(3), 2 + rng.below(3), 2 + rng.below(3)]),
            1 => (1, ConvGeometry::POINTWISE, [1 + rng.below(3), 2, 1 + rng.below(3)]),
            _ => (2, ConvGeometry::DOWN2, [2 * (1 + rng.below(2)), 2, 4]),
        }
    };
    let (w_shape, b_len) = if transposed { ([ci, co, k, k, k], co) } else { ([co, ci, k, k, k], co) };
    let x = randn(&[n, ci, ext[0], ext[1], ext[2]], rng)?;
    let w = randn(&w_shape, rng)?;
    let b = randn(&[b_len], rng)?;
    let out_shape = {
        let mut t = Tape::new();
        let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
        let y = if transposed { t.conv_transpose3d(xv, wv, bv, geom)? } else { t.conv3d(xv, wv, bv, geom)? };
        shape_of(&t, y)
    };
    let r = randn(&out_shape, rng)?;
    let inputs = vec![("x".into(), x), ("w".into(), w), ("b".into(), b)];
    Ok(check_each(&inputs, |t, v| {
        let y = if transposed { t.conv_transpose3d(v[0], v[1], v[2], geom)? } else { t.conv3d(v[0], v[1], v[2], geom)? };
        project(t, y, &r)
    }))
}

fn unary_instance(rng: &mut Rng, shape: &[usize], op: impl Fn(&mut Tape<f64>, Var) -> Result<Var>) -> Result<Vec<(String, GradCheck)>> {
    let x = randn(shape, rng)?;
    let out_shape = {
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let y = op(&mut t, xv)?;
        shape_of(&t, y)
    };
    let r = randn(&out_shape, rng)?;
    Ok(check_each(&vec![("x".into(), x)], |t, v| {
        let y = op(t, v[0])?;
        project(t, y, &r)
    }))
}

fn random_spatial(rng: &mut Rng) -> [usize; 5] {
    [1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(3), 2 + rng.below(2), 1 + rng.below(3)]
}

fn group_norm_instance(rng: &mut Rng) -> Result<Vec<(String, GradCheck)>> {
    let groups = 1 + rng.below(3);
    let c = groups * (1 + rng.below(2));
    let shape = [1 + rng.below(2), c, 2, 1 + rng.below(3), 2];
    let x = randn(&shape, rng)?;
    let gamma = randn(&[c], rng)?;
    let beta = randn(&[c], rng)?;
    let r = randn(&shape, rng)?;
    let spec = GroupNormSpec { groups, eps: crate::layers::GROUP_NORM_EPS };
    let inputs = vec![("x".into(), x), ("gamma".into(), gamma), ("beta".into(), beta)];
    Ok(check_each(&inputs, |t, v| {
        let y = t.group_norm(v[0], v[1], v[2], spec)?;
        project(t, y, &r)
    }))
}

fn dropout_instance(rng: &mut Rng, seed: u64) -> Result<Vec<(String, GradCheck)>> {
    let shape = random_spatial(rng);
    let mode = if seed % 2 == 0 { Mode::Eval } else { Mode::Train };
    let spec = DropoutSpec { rate: 0.3, mode };
    let key = DropoutKey { seed, step: 3, layer: 1 };
    unary_instance(rng, &shape, move |t, x| t.channel_dropout(x, spec, key))
}

fn gate_instance(rng: &mut Rng, gating: Gating) -> Result<Vec<(String, GradCheck)>> {
    let n = 1 + rng.below(2);
    let (cx, cg) = (1 + rng.below(4), 1 + rng.below(3));
    let ext = [2, 2 * (1 + rng.below(2)), 2];
    let gext = match gating {
        Gating::SameLevel => ext,
        Gating::Original => [ext[0] / 2, ext[1] / 2, ext[2] / 2],
    };
    let mut inputs: Named = vec![
        ("x".into(), randn(&[n, cx, ext[0], ext[1], ext[2]], rng)?),
        ("g".into(), randn(&[n, cg, gext[0], gext[1], gext[2]], rng)?),
    ];
    for (name, shape) in gate_param_shapes(cx, cg) {
        inputs.push((name.to_string(), randn(&shape, rng)?));
    }
    let rx = randn(&[n, cx, ext[0], ext[1], ext[2]], rng)?;
    let ra = randn(&[n, 1, ext[0], ext[1], ext[2]], rng)?;
    Ok(check_each(&inputs, |t, v| {
        let p = GateParams { wx: v[2], bx: v[3], wg: v[4], bg: v[5], psi_w: v[6], psi_b: v[7] };
        let out = attention_gate(t, gating, &v[0], &v[1], &p)?;
        let a = project(t, out.x_hat, &rx)?;
        let b = project(t, out.alpha, &ra)?;
        t.add(a, b)
    }))
}

#[derive(Clone, Copy)]
enum LossKind {
    Dice,
    Focal,
    Total,
}

fn loss_instance(rng: &mut Rng, kind: LossKind) -> Result<Vec<(String, GradCheck)>> {
    let c = 2 + 2 * rng.below(2);
    let shape = [1 + rng.below(2), c, 2, 2, 2];
    let logits = randn(&shape, rng)?.scale(2.0);
    let sp = shape[2] * shape[3] * shape[4];
    let mut target = vec![0.0; logits.numel()];
    for b in 0..shape[0] {
        for k in 0..sp {
            target[(b * c + rng.below(c)) * sp + k] = 1.0;
        }
    }
    let target = Tensor::from_vec(&shape, target)?;
    let cfg = LossConfig::default();
    Ok(check_each(&vec![("logits".into(), logits)], |t, v| {
        let p = t.softmax_channels(v[0])?;
        let tv = t.constant(target.clone());
        match kind {
            LossKind::Dice => t.dice_loss(p, tv, cfg.dice_eps),
            LossKind::Focal => t.focal_loss(p, tv, cfg),
            LossKind::Total => t.total_loss(p, tv, cfg),
        }
    }))
}

/// Tiny variants cycled over instances.
pub fn tiny_network_config(instance: u64) -> ArchitectureConfig {
    let base = ArchitectureConfig {
        in_channels: 1,
        num_classes: 2,
        stage_channels: vec![2, 4],
        convs_per_stage: vec![1, 1],
        decoders: 2,
        attention: Attention::PerDecoderPerLevel,
        gating: Gating::SameLevel,
        ..Default::default()
    };
    match instance % 4 {
        0 => base,
        1 => ArchitectureConfig { gating: Gating::Original, ..base },
        2 => ArchitectureConfig { attention: Attention::SharedPerLevel, downsample: Downsample::StridedConv, ..base },
        _ => ArchitectureConfig { decoders: 1, attention: Attention::None, ..base },
    }
}

fn network_instance(rng: &mut Rng, seed: u64) -> Result<Vec<(String, GradCheck)>> {
    let config = tiny_network_config(seed);
    let params: ModelParams<f64> = build_model(&config, rng)?;
    let x = randn(&[1, 1, 4, 4, 4], rng)?;
    let names: Vec<String> = param_specs(&config)?.into_iter().map(|s| s.name).collect();
    let inputs: Named = names.iter().map(|n| Ok((n.clone(), params.get(n)?.clone()))).collect::<Result<_>>()?;
    Ok(check_each(&inputs, |t, v| {
        let bound = names.iter().cloned().zip(v.iter().copied()).collect();
        let xv = Exec::<f64>::input(t, x.clone());
        let out = forward(t, &bound, &config, &xv, ForwardOptions::eval())?;
        t.sum_all(out.logits)
    }))
}

fn instance(scope: &str, seed: u64) -> Result<Vec<(String, GradCheck)>> {
    let key = SCOPES.iter().position(|s| *s == scope).ok_or_else(|| unknown(scope))? as u64;
    let mut rng = Rng::keyed(seed, Stream::Init, &[key]);
    let rng = &mut rng;
    match scope {
        "conv3d" => conv_instance(rng, false),
        "conv_transpose3d" => conv_instance(rng, true),
        "maxpool3d" => {
            let shape = [1 + rng.below(2), 1 + rng.below(2), 2, 2 * (1 + rng.below(2)), 4];
            unary_instance(rng, &shape, |t, x| t.max_pool3d(x))
        }
        "group_norm" => group_norm_instance(rng),
        "relu" => {
            let shape = random_spatial(rng);
            unary_instance(rng, &shape, |t, x| t.relu(x))
        }
        "sigmoid" => {
            let shape = random_spatial(rng);
            unary_instance(rng, &shape, |t, x| t.sigmoid(x))
        }
        "softmax" => {
            let shape = random_spatial(rng);
            unary_instance(rng, &shape, |t, x| t.softmax_channels(x))
        }
        "channel_dropout" => dropout_instance(rng, seed),
        "attention_same_level" => gate_instance(rng, Gating::SameLevel),
        "attention_original" => gate_instance(rng, Gating::Original),
        "dice_loss" => loss_instance(rng, LossKind::Dice),
        "focal_loss" => loss_instance(rng, LossKind::Focal),
        "total_loss" => loss_instance(rng, LossKind::Total),
        "network" => network_instance(rng, seed),
        _ => Err(unknown(scope)),
    }
}

fn unknown(scope: &str) -> crate::error::Error {
    arg_err!("unknown gradcheck scope '{scope}' (valid: {}, all)", SCOPES.join(", "))
}

/// Runs `instances` kink-free seeded instances of one scope.
pub fn run_scope(scope: &str, instances: usize) -> Result<ScopeReport> {
    let name = *SCOPES.iter().find(|s| **s == scope).ok_or_else(|| unknown(scope))?;
    let mut report = ScopeReport { scope: name, checks: Vec::new(), skipped_seeds: Vec::new(), instances: 0 };
    let mut seed = 0u64;
    while report.instances < instances && (seed as usize) < instances.max(1) * MAX_ATTEMPTS_FACTOR {
        let checks = instance(name, seed)?;
        if checks.iter().any(|(_, r)| r.kink_crossings > 0) {
            report.skipped_seeds.push(seed);
        } else {
            report.instances += 1;
            report.checks.extend(checks.into_iter().map(|(target, report)| CheckOutcome { seed, target, report }));
        }
        seed += 1;
    }
    if report.instances < instances {
        // Not enough smooth instances: surface it as a failure.
        report.checks.push(CheckOutcome {
            seed,
            target: "instances".into(),
            report: GradCheck {
                passed: false,
                max_rel_error: f64::INFINITY,
                worst_index: 0,
                analytic: f64::NAN,
                numeric: f64::NAN,
                checked: 0,
                kink_crossings: report.skipped_seeds.len(),
                error: Some(format!("only {} of {instances} instances avoided kinks", report.instances)),
            },
        });
    }
    Ok(report)
}

/// `scope` is one of [`SCOPES`] or `all`.
pub fn run(scope: &str, instances: usize) -> Result<Vec<ScopeReport>> {
    if scope == "all" {
        SCOPES.iter().map(|s| run_scope(s, instances)).collect()
    } else {
        Ok(vec![run_scope(scope, instances)?])
    }
}
