use std::collections::BTreeMap;

use crate::engine::{Element, Tensor};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::network::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moments of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T: Element> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    /// Running elementwise maximum of `v`.
    pub v_max: Tensor<T>,
}

/// AdamW with the AMSGrad denominator and decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T: Element> {
    pub config: AdamWConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, step: 0, moments: BTreeMap::new() }
    }

    /// Applies one update. Gradients must be finite and cover exactly the
    /// parameter names; nothing is modified when a check fails.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(arg_err!("learning rate must be finite and non-negative, got {lr}"));
        }
        if grads.len() != params.len() {
            return Err(arg_err!("{} gradients for {} parameters", grads.len(), params.len()));
        }
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| arg_err!("no gradient for parameter '{name}'"))?;
            if g.shape() != p.shape() {
                return Err(shape_err!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of '{name}' at step {}", self.step + 1)));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let st = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros_like(p),
                v: Tensor::zeros_like(p),
                v_max: Tensor::zeros_like(p),
            });
            let (m, v, vm) = (st.m.data_mut(), st.v.data_mut(), st.v_max.data_mut());
            for (i, theta) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i].as_f64();
                let mi = c.beta1 * m[i].as_f64() + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v[i].as_f64() + (1.0 - c.beta2) * gi * gi;
                let vmi = vm[i].as_f64().max(vi);
                let th = theta.as_f64();
                let upd = lr * (mi / bc1) / ((vmi / bc2).sqrt() + c.eps) + lr * c.weight_decay * th;
                *theta = T::from_f64(th - upd);
                m[i] = T::from_f64(mi);
                v[i] = T::from_f64(vi);
                vm[i] = T::from_f64(vmi);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ModelParams<f64> {
        let mut p = ModelParams::new();
        p.insert("theta", Tensor::from_vec(&[1], vec![v]).unwrap()).unwrap();
        p
    }

    fn grad(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("theta".to_string(), Tensor::from_vec(&[1], vec![v]).unwrap())])
    }

    #[test]
    fn zero_gradient_without_decay_is_null() {
        let mut p = scalar(1.5);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..3 {
            opt.step(&mut p, &grad(0.0), 0.1).unwrap();
        }
        assert_eq!(p.get("theta").unwrap().data(), &[1.5]);
    }

    #[test]
    fn first_step_hand_value() {
        let mut p = scalar(1.0);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        opt.step(&mut p, &grad(1.0), 0.1).unwrap();
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.get("theta").unwrap().item().unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_gradients_without_mutation() {
        let mut p = scalar(1.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        assert!(opt.step(&mut p, &grad(f64::NAN), 0.1).is_err());
        let wrong = BTreeMap::from([("other".to_string(), Tensor::from_vec(&[1], vec![1.0]).unwrap())]);
        assert!(opt.step(&mut p, &wrong, 0.1).is_err());
        assert_eq!(opt.step, 0);
        assert_eq!(p.get("theta").unwrap().data(), &[1.0]);
    }
}
