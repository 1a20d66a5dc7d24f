use super::scalar::Scalar;

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
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
            lr: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes
            .into_iter()
            .map(|n| (vec![T::zero(); n], vec![T::zero(); n]))
            .unzip();
        AdamState { step: 0, m, v }
    }

    /// One bias-corrected update of every parameter tensor.
    pub fn update(&mut self, cfg: &AdamConfig, params: &mut [&mut [T]], grads: &[Vec<T>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of(cfg.beta1);
        let b2 = T::of(cfg.beta2);
        let c1 = T::of(1.0 - cfg.beta1);
        let c2 = T::of(1.0 - cfg.beta2);
        let corr1 = T::of(1.0 / (1.0 - cfg.beta1.powi(t)));
        let corr2 = T::of(1.0 / (1.0 - cfg.beta2.powi(t)));
        let lr = T::of(cfg.lr);
        let eps = T::of(cfg.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), m), v) in p.iter_mut().zip(&grads[i]).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                let mh = *m * corr1;
                let vh = *v * corr2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
