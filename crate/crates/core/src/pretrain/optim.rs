use crate::nn::Mat;
use crate::tensors::TensorMap;

/// Adam with bias correction. Moments are created lazily per tensor name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: TensorMap,
    second: TensorMap,
    step: u64,
    lr: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: TensorMap::new(),
            second: TensorMap::new(),
            step: 0,
            lr: 0.0,
        }
    }
}

impl Adam {
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.lr
    }

    pub fn moments(&self) -> (&TensorMap, &TensorMap) {
        (&self.first, &self.second)
    }

    /// Starts a new update at learning rate `lr`; call before [`Adam::update`].
    pub fn begin_step(&mut self, lr: f64) {
        self.step += 1;
        self.lr = lr;
    }

    pub fn update(&mut self, name: &str, param: &mut Mat, grad: &Mat) {
        assert!(self.step > 0, "begin_step must precede update");
        if !self.first.contains(name) {
            self.first.insert(name, Mat::zeros(param.raw_dim()));
            self.second.insert(name, Mat::zeros(param.raw_dim()));
        }
        let m = self.first.get_mut(name).expect("inserted");
        let v = self.second.get_mut(name).expect("inserted");
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (lr, eps) = (self.lr, self.eps);
        ndarray::Zip::from(param)
            .and(m)
            .and(v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }

    /// Updates every tensor in `params` that has a gradient.
    pub fn update_all(&mut self, params: &mut TensorMap, grads: &TensorMap) {
        for (name, p) in params.iter_mut() {
            if let Some(g) = grads.get(name) {
                self.update(name, p, g);
            }
        }
    }
}

/// Linear warmup to `peak` over the first `warmup_fraction` of steps, then
/// linear decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: u64) -> Self {
        let total_steps = total_steps.max(1);
        let warmup_steps = ((warmup_fraction * total_steps as f64).ceil() as u64).min(total_steps);
        Self {
            peak,
            warmup_steps,
            total_steps,
        }
    }

    /// Learning rate for the zero-based `step`.
    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            self.peak * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            let remaining = self.total_steps.saturating_sub(step) as f64;
            let span = (self.total_steps - self.warmup_steps).max(1) as f64;
            self.peak * (remaining / span).min(1.0)
        }
    }
}
