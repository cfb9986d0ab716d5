//! Adam with bias correction and global-norm gradient clipping.

use crate::error::{Result, UsesError};
use crate::numerics::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Updates applied so far.
    pub steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Tensor<T>]) -> Result<Self> {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Adam {
            m: zeros()?,
            v: zeros()?,
            steps: 0,
        })
    }

    /// One update. `names` labels parameters in errors. Fails before
    /// touching anything if a gradient is not finite.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Tensor<T>],
        names: &[&str],
        lr: f64,
        hp: AdamParams,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(UsesError::Shape(format!(
                "{} parameters, {} gradients, {} optimizer slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).copied().unwrap_or("?");
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(UsesError::Shape(format!(
                    "{name}: parameter {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if let Some(bad) = g.data().iter().position(|x| !x.as_f64().is_finite()) {
                return Err(UsesError::NonFinite {
                    node: name.to_string(),
                    op: "gradient".into(),
                    detail: format!("element {bad} is {}", g.data()[bad].as_f64()),
                });
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - hp.beta1.powi(t);
        let c2 = 1.0 - hp.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pj, gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let g = gj.as_f64();
                let mn = hp.beta1 * mj.as_f64() + (1.0 - hp.beta1) * g;
                let vn = hp.beta2 * vj.as_f64() + (1.0 - hp.beta2) * g * g;
                *mj = T::of(mn);
                *vj = T::of(vn);
                let update = lr * (mn / c1) / ((vn / c2).sqrt() + hp.eps);
                *pj = T::of(pj.as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Euclidean norm over all gradient tensors.
pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm` (0 = off).
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn first_steps_with_unit_gradient() {
        let mut p = vec![scalar(0.0)];
        let mut opt = Adam::new(&p).unwrap();
        let hp = AdamParams::default();
        opt.step(&mut p, &[scalar(1.0)], &["w"], 1e-3, hp).unwrap();
        // m = 0.1, v = 0.001; bias-corrected both become 1
        assert!((p[0].data()[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        opt.step(&mut p, &[scalar(1.0)], &["w"], 1e-3, hp).unwrap();
        assert!((p[0].data()[0] + 2e-3).abs() < 1e-10);
        assert!((opt.m[0].data()[0] - 0.19).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let hp = AdamParams::default();
        let mut p = vec![scalar(0.25)];
        let mut fresh = Adam::new(&p).unwrap();
        fresh.step(&mut p, &[scalar(0.0)], &["w"], 1e-3, hp).unwrap();
        assert_eq!(p[0].data()[0], 0.25);

        let mut opt = Adam::new(&p).unwrap();
        opt.step(&mut p, &[scalar(1.0)], &["w"], 1e-3, hp).unwrap();
        let (m, v) = (opt.m[0].data()[0], opt.v[0].data()[0]);
        opt.step(&mut p, &[scalar(0.0)], &["w"], 1e-3, hp).unwrap();
        assert_eq!(opt.m[0].data()[0], 0.9 * m);
        assert_eq!(opt.v[0].data()[0], 0.999 * v);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = vec![scalar(0.0), scalar(1.0)];
        let mut opt = Adam::new(&p).unwrap();
        let err = opt
            .step(&mut p, &[scalar(0.0), scalar(f64::NAN)], &["a", "b"], 1e-3, AdamParams::default())
            .unwrap_err();
        assert!(err.to_string().contains('b'), "{err}");
        assert_eq!(opt.steps, 0);
        assert_eq!(p[1].data()[0], 1.0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut small = vec![scalar(0.5)];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data()[0], 0.5);
    }
}
