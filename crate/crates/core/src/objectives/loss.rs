use crate::engine::{grad_fn, Element, Tape, Tensor, Var};
use crate::error::{arg_err, shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_dice: f64,
    pub lambda_focal: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Dice smoothing, added to numerator and denominator.
    pub dice_eps: f64,
    /// Lower clamp of the log argument in the focal term.
    pub prob_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_dice: 0.7,
            lambda_focal: 0.3,
            gamma: 2.0,
            alpha: 0.25,
            dice_eps: 1e-5,
            prob_eps: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (self.lambda_dice + self.lambda_focal - 1.0).abs() < 1e-12
            && self.lambda_dice >= 0.0
            && self.lambda_focal >= 0.0
            && self.gamma >= 0.0
            && self.alpha > 0.0
            && self.alpha < 1.0
            && self.dice_eps > 0.0
            && self.prob_eps > 0.0
            && self.prob_eps < 0.5;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid loss configuration {self:?}")))
        }
    }
}

/// Checks shapes and that `target` is one-hot along axis 1.
fn check_pair<T: Element>(probs: &Tensor<T>, target: &Tensor<T>) -> Result<[usize; 3]> {
    if probs.shape() != target.shape() {
        return Err(shape_err!("probabilities {:?} vs target {:?}", probs.shape(), target.shape()));
    }
    if probs.rank() < 2 {
        return Err(shape_err!("loss inputs need a class axis, got {:?}", probs.shape()));
    }
    let (n, c) = (probs.shape()[0], probs.shape()[1]);
    let sp = probs.numel() / (n * c);
    let t = target.data();
    for b in 0..n {
        for k in 0..sp {
            let mut sum = 0.0;
            for ch in 0..c {
                let v = t[(b * c + ch) * sp + k].as_f64();
                if v != 0.0 && v != 1.0 {
                    return Err(arg_err!("target is not one-hot: value {v}"));
                }
                sum += v;
            }
            if sum != 1.0 {
                return Err(arg_err!("target is not one-hot: channel sum {sum} at voxel {k} of sample {b}"));
            }
        }
    }
    Ok([n, c, sp])
}

/// Per-class `(intersection, sum p, sum t)` over batch and voxels.
fn dice_terms<T: Element>(p: &[T], t: &[T], [n, c, sp]: [usize; 3]) -> Vec<[f64; 3]> {
    let mut terms = vec![[0.0; 3]; c];
    for b in 0..n {
        for (ch, acc) in terms.iter_mut().enumerate() {
            let off = (b * c + ch) * sp;
            for (pv, tv) in p[off..off + sp].iter().zip(&t[off..off + sp]) {
                let (pv, tv) = (pv.as_f64(), tv.as_f64());
                acc[0] += pv * tv;
                acc[1] += pv;
                acc[2] += tv;
            }
        }
    }
    terms
}

/// Macro-averaged soft Dice loss over all classes.
pub fn dice_loss<T: Element>(probs: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<f64> {
    let dims = check_pair(probs, target)?;
    let terms = dice_terms(probs.data(), target.data(), dims);
    let c = terms.len() as f64;
    Ok(terms.iter().map(|[i, p, t]| 1.0 - (2.0 * i + eps) / (p + t + eps)).sum::<f64>() / c)
}

fn dice_grad<T: Element>(probs: &Tensor<T>, target: &Tensor<T>, eps: f64, scale: f64) -> Result<Tensor<T>> {
    let dims @ [n, c, sp] = check_pair(probs, target)?;
    let terms = dice_terms(probs.data(), target.data(), dims);
    let t = target.data();
    let mut out = vec![T::zero(); probs.numel()];
    for b in 0..n {
        for (ch, [i, p, tt]) in terms.iter().enumerate() {
            let den = p + tt + eps;
            let num = 2.0 * i + eps;
            let off = (b * c + ch) * sp;
            for k in off..off + sp {
                let g = -(2.0 * t[k].as_f64() / den - num / (den * den)) / c as f64;
                out[k] = T::from_f64(scale * g);
            }
        }
    }
    Tensor::from_vec(probs.shape(), out)
}

/// True-class probability per (sample, voxel).
fn true_class_probs<T: Element>(p: &[T], t: &[T], [n, c, sp]: [usize; 3]) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(n * sp);
    for b in 0..n {
        for k in 0..sp {
            let ch = (0..c).find(|&ch| t[(b * c + ch) * sp + k].as_f64() == 1.0).unwrap_or(0);
            let idx = (b * c + ch) * sp + k;
            out.push((idx, p[idx].as_f64()));
        }
    }
    out
}

/// `-alpha (1 - p_t)^gamma log(clamp(p_t))`, averaged over voxels and batch.
pub fn focal_loss<T: Element>(probs: &Tensor<T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    let dims = check_pair(probs, target)?;
    let pts = true_class_probs(probs.data(), target.data(), dims);
    let m = pts.len() as f64;
    let lo = cfg.prob_eps;
    Ok(pts
        .iter()
        .map(|&(_, pt)| -cfg.alpha * (1.0 - pt).powf(cfg.gamma) * pt.clamp(lo, 1.0 - lo).ln())
        .sum::<f64>()
        / m)
}

fn focal_grad<T: Element>(probs: &Tensor<T>, target: &Tensor<T>, cfg: &LossConfig, scale: f64) -> Result<Tensor<T>> {
    let dims = check_pair(probs, target)?;
    let pts = true_class_probs(probs.data(), target.data(), dims);
    let m = pts.len() as f64;
    let lo = cfg.prob_eps;
    let mut out = vec![T::zero(); probs.numel()];
    for (idx, pt) in pts {
        let q = pt.clamp(lo, 1.0 - lo);
        let one_minus = 1.0 - pt;
        let modulating = if cfg.gamma == 0.0 || one_minus == 0.0 {
            0.0
        } else {
            -cfg.gamma * one_minus.powf(cfg.gamma - 1.0) * q.ln()
        };
        let log_term = if pt > lo && pt < 1.0 - lo { one_minus.powf(cfg.gamma) / pt } else { 0.0 };
        out[idx] = T::from_f64(scale * -cfg.alpha * (modulating + log_term) / m);
    }
    Tensor::from_vec(probs.shape(), out)
}

/// `lambda_dice * dice + lambda_focal * focal`.
pub fn total_loss<T: Element>(probs: &Tensor<T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    Ok(cfg.lambda_dice * dice_loss(probs, target, cfg.dice_eps)? + cfg.lambda_focal * focal_loss(probs, target, cfg)?)
}

impl<T: Element> Tape<T> {
    /// `target` must be a constant node.
    pub fn dice_loss(&mut self, probs: Var, target: Var, eps: f64) -> Result<Var> {
        self.loss_node("dice_loss", probs, target, 0.0, move |p, t| dice_loss(p, t, eps), move |p, t, s| dice_grad(p, t, eps, s))
    }

    pub fn focal_loss(&mut self, probs: Var, target: Var, cfg: LossConfig) -> Result<Var> {
        self.loss_node("focal_loss", probs, target, cfg.prob_eps, move |p, t| focal_loss(p, t, &cfg), move |p, t, s| focal_grad(p, t, &cfg, s))
    }

    pub fn total_loss(&mut self, probs: Var, target: Var, cfg: LossConfig) -> Result<Var> {
        let d = self.dice_loss(probs, target, cfg.dice_eps)?;
        let f = self.focal_loss(probs, target, cfg)?;
        let d = self.scale(d, T::from_f64(cfg.lambda_dice))?;
        let f = self.scale(f, T::from_f64(cfg.lambda_focal))?;
        self.add(d, f)
    }

    fn loss_node(
        &mut self,
        op: &'static str,
        probs: Var,
        target: Var,
        branch_eps: f64,
        value: impl Fn(&Tensor<T>, &Tensor<T>) -> Result<f64>,
        grad: impl Fn(&Tensor<T>, &Tensor<T>, f64) -> Result<Tensor<T>> + Send + Sync + 'static,
    ) -> Result<Var> {
        if self.requires_grad(target) {
            return Err(arg_err!("{op}: the target must not require gradients"));
        }
        let v = value(self.value(probs), self.value(target))?;
        if op == "focal_loss" {
            // Clamp boundaries of the log argument are kinks.
            let lo = T::from_f64(branch_eps);
            let marks: Vec<u64> = self
                .value(probs)
                .data()
                .iter()
                .map(|&p| if p <= lo { 0 } else if p >= T::one() - lo { 2 } else { 1 })
                .collect();
            self.note_branches(marks);
        }
        let out = Tensor::from_vec(&[1], vec![T::from_f64(v)])?;
        self.push(op, &[probs, target], out, grad_fn::<T, _>(move |inp, _, g, _| {
            let s = g.data()[0].as_f64();
            Ok(vec![Some(grad(inp[0], inp[1], s)?), None])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let target = t(&[1, 2, 1, 1, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let cfg = LossConfig::default();
        assert!(dice_loss(&target, &target, cfg.dice_eps).unwrap() < 1e-5);
        assert_eq!(focal_loss(&target, &target, &cfg).unwrap(), 0.0);
        assert!(total_loss(&target, &target, &cfg).unwrap() < 1e-5);
    }

    #[test]
    fn disjoint_masks_give_unit_loss() {
        let target = t(&[1, 2, 1, 1, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let probs = t(&[1, 2, 1, 1, 2], vec![0.0, 1.0, 1.0, 0.0]);
        assert!((dice_loss(&probs, &target, 1e-5).unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn half_overlap_gives_half() {
        // Class 0: |P| = |T| = 2, overlap 1. Same for class 1.
        let target = t(&[1, 2, 1, 1, 4], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let probs = t(&[1, 2, 1, 1, 4], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let eps = 1e-12;
        assert!((dice_loss(&probs, &target, eps).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn focal_at_half_probability() {
        let target = t(&[1, 2, 1, 1, 1], vec![1.0, 0.0]);
        let probs = t(&[1, 2, 1, 1, 1], vec![0.5, 0.5]);
        let want = 0.25 * 0.25 * 2f64.ln();
        let got = focal_loss(&probs, &target, &LossConfig::default()).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.0433217).abs() < 1e-7);
    }

    #[test]
    fn gamma_zero_is_scaled_cross_entropy() {
        let target = t(&[1, 3, 1, 1, 2], vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let probs = t(&[1, 3, 1, 1, 2], vec![0.2, 0.7, 0.5, 0.1, 0.3, 0.2]);
        let cfg = LossConfig { gamma: 0.0, ..Default::default() };
        let ce = -(0.5f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((focal_loss(&probs, &target, &cfg).unwrap() - cfg.alpha * ce).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let target = t(&[1, 2, 1, 1, 1], vec![1.0, 1.0]);
        let probs = t(&[1, 2, 1, 1, 1], vec![0.5, 0.5]);
        assert!(dice_loss(&probs, &target, 1e-5).is_err());
        assert!(dice_loss(&probs, &t(&[1, 1, 1, 1, 2], vec![1.0, 1.0]), 1e-5).is_err());
        assert!(LossConfig { lambda_dice: 0.5, ..Default::default() }.validate().is_err());
        assert!(LossConfig::default().validate().is_ok());
    }
}
