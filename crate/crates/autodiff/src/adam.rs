use crate::{Error, Gradients, ParamStore, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite; the error names the first offending parameter.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Contract(format!(
            "gradient map has {} entries, store has {}",
            grads.len(),
            params.len()
        )));
    }
    for (name, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    params.step += 1;
    let t = params.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for id in params.ids().collect::<Vec<_>>() {
        let g = grads.get(id).data();
        let i = id.index();
        let m = &mut params.first_moment[i];
        let v = &mut params.second_moment[i];
        let mut step = Vec::with_capacity(g.len());
        for k in 0..g.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            step.push(cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
        }
        for (p, s) in params.values_mut(id).iter_mut().zip(step) {
            *p -= s;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::vector(vec![v])).unwrap();
        s
    }

    fn grads_of(store: &ParamStore, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(store);
        grads.tensors_mut()[0].data_mut()[0] = g;
        grads
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = scalar_store(1.0);
        let g = grads_of(&s, 0.0);
        for _ in 0..5 {
            adam_step(&mut s, &g, &AdamConfig::with_lr(0.1)).unwrap();
        }
        assert_eq!(s.by_name("p").unwrap().data(), &[1.0]);
        assert_eq!(s.step(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        let mut s = scalar_store(1.0);
        let g = grads_of(&s, 1.0);
        adam_step(&mut s, &g, &AdamConfig::with_lr(0.1)).unwrap();
        let p = s.by_name("p").unwrap().data()[0];
        assert!((p - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p - 0.9).abs() < 1e-8);
    }

    #[test]
    fn nan_gradient_aborts_with_parameter_name() {
        let mut s = scalar_store(1.0);
        let g = grads_of(&s, f64::NAN);
        let err = adam_step(&mut s, &g, &AdamConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::NonFiniteGradient(n) if n == "p"));
        assert_eq!(s.by_name("p").unwrap().data(), &[1.0]);
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut s = scalar_store(0.3);
            for k in 0..20 {
                let g = grads_of(&s, (k as f64 * 0.7).sin());
                adam_step(&mut s, &g, &AdamConfig::with_lr(0.01)).unwrap();
            }
            s.by_name("p").unwrap().data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
