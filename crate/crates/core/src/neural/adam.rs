use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ParamSet, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for every tensor of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, t)| vec![T::zero(); t.len()])
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// One update. Parameters without a gradient (`None`) are treated as
    /// having a zero gradient. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Vec<T>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.len() != params.get(i).len() {
                    return Err(Error::Shape(format!("gradient size mismatch for {}", params.name(i))));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for {} at step {}",
                        params.name(i),
                        self.step_count + 1
                    )));
                }
            }
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.epsilon));
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let p = params.get_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g.as_ref().map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    fn single(w: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.add("w", Tensor::scalar(w)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = single(1.25);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            s.step(&mut p, &[Some(vec![0.0])]).unwrap();
        }
        assert_eq!(p.get(0).data()[0], 1.25);
        assert_eq!(s.first_moment[0][0], 0.0);
        assert_eq!(s.second_moment[0][0], 0.0);
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        for g in [0.5, -3.0, 1e-3] {
            let mut p = single(0.0);
            let mut s = AdamState::new(cfg, &p);
            s.step(&mut p, &[Some(vec![g])]).unwrap();
            let moved = p.get(0).data()[0].abs();
            let expected = cfg.lr * g.abs() / (g.abs() + cfg.epsilon);
            assert!((moved - expected).abs() < 1e-15, "{moved} vs {expected}");
            assert!((moved - cfg.lr).abs() < 1e-8);
        }
    }

    #[test]
    fn descends_quadratic() {
        let mut p = single(0.0);
        let mut s = AdamState::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &p,
        );
        let f = |w: f64| (w - 3.0) * (w - 3.0);
        let mut history = vec![f(0.0)];
        for _ in 0..50 {
            let w = p.get(0).data()[0];
            s.step(&mut p, &[Some(vec![2.0 * (w - 3.0)])]).unwrap();
            history.push(f(p.get(0).data()[0]));
        }
        // Monotone until momentum carries w past the minimum at step 41.
        assert!(history[..=40].windows(2).all(|w| w[1] < w[0]));
        assert!(history[41] > history[40]);
        assert!(history[50] < 0.05 * history[0]);
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = single(1.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        assert!(matches!(
            s.step(&mut p, &[Some(vec![f64::NAN])]),
            Err(Error::Numeric(_))
        ));
        assert_eq!(p.get(0).data()[0], 1.0);
        assert_eq!(s.step_count, 0);
    }
}
