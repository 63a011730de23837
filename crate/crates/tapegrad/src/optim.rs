//! Adam optimizer over a [`ParamStore`].

use indexmap::IndexMap;
use ndarray::ArrayD;

use crate::param::ParamStore;

/// Adam with bias-corrected first and second moment estimates.
///
/// Moment buffers are keyed by parameter name and created lazily at zero, so
/// a parameter whose gradient is exactly zero on every step so far is left
/// bitwise unchanged by [`Adam::step`].
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    first: IndexMap<String, ArrayD<f64>>,
    second: IndexMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        assert!((0.0..1.0).contains(&beta1), "beta1 must be in [0, 1)");
        assert!((0.0..1.0).contains(&beta2), "beta2 must be in [0, 1)");
        assert!(eps > 0.0, "eps must be positive");
        Self {
            beta1,
            beta2,
            eps,
            step_count: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        }
    }

    /// The common configuration: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn with_defaults() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    /// Apply one update with learning rate `lr`. `grads` must hold an entry
    /// per parameter with a matching shape.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &IndexMap<String, ArrayD<f64>>,
        lr: f64,
    ) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (name, value) in params.iter_mut() {
            let grad = grads
                .get(name)
                .unwrap_or_else(|| panic!("missing gradient for parameter {name:?}"));
            assert_eq!(
                grad.shape(),
                value.shape(),
                "gradient shape mismatch for {name:?}"
            );

            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(value.raw_dim()));
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(value.raw_dim()));

            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}
