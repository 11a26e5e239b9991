use serde::{Deserialize, Serialize};

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state size");
        assert_eq!(grads.len(), self.m.len(), "gradient size");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Quantity watched by early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Combined validation loss, lower is better.
    #[default]
    CombinedLoss,
    /// Validation Pearson R of the MSE head, higher is better.
    PearsonR,
}

impl Monitor {
    fn better(self, candidate: f64, best: f64) -> bool {
        match self {
            Monitor::CombinedLoss => candidate < best,
            Monitor::PearsonR => candidate > best,
        }
    }

    fn worst(self) -> f64 {
        match self {
            Monitor::CombinedLoss => f64::INFINITY,
            Monitor::PearsonR => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub monitor: Monitor,
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    waited: usize,
}

impl EarlyStopping {
    pub fn new(monitor: Monitor, patience: usize) -> Self {
        EarlyStopping { monitor, patience, best: monitor.worst(), best_epoch: None, waited: 0 }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        if !value.is_nan() && self.monitor.better(value, self.best) {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.waited = 0;
            return StopDecision::Improved;
        }
        self.waited += 1;
        if self.waited >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_matches_hand_computation() {
        // f(x) = 0.5 (a x0² + b x1²)
        let (a, b) = (2.0, 0.5);
        let mut x = [1.0, -3.0];
        let mut opt = Adam::new(2, 0.1, 0.9, 0.999, 1e-8);
        let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
        let mut expected = x;
        for t in 1..=3 {
            let g = [a * x[0], b * x[1]];
            opt.step(&mut x, &g);
            let ge = [a * expected[0], b * expected[1]];
            for i in 0..2 {
                m[i] = 0.9 * m[i] + 0.1 * ge[i];
                v[i] = 0.999 * v[i] + 0.001 * ge[i] * ge[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                expected[i] -= 0.1 * mh / (vh.sqrt() + 1e-8);
            }
            for i in 0..2 {
                assert!((x[i] - expected[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_adam_step_has_size_lr() {
        let mut x = [5.0];
        Adam::new(1, 0.01, 0.9, 0.999, 1e-8).step(&mut x, &[3.0]);
        assert!((x[0] - 4.99).abs() < 1e-9);
    }

    #[test]
    fn stops_patience_epochs_after_the_best() {
        let mut es = EarlyStopping::new(Monitor::CombinedLoss, 10);
        let best_epoch = 4;
        let mut stopped = None;
        for epoch in 0..50 {
            let value = if epoch <= best_epoch { 10.0 - epoch as f64 } else { 100.0 + epoch as f64 };
            if es.observe(epoch, value) == StopDecision::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(best_epoch + 10));
        assert_eq!(es.best_epoch(), Some(best_epoch));
    }

    #[test]
    fn pearson_monitor_prefers_higher() {
        let mut es = EarlyStopping::new(Monitor::PearsonR, 2);
        assert_eq!(es.observe(0, 0.1), StopDecision::Improved);
        assert_eq!(es.observe(1, 0.3), StopDecision::Improved);
        assert_eq!(es.observe(2, 0.2), StopDecision::Continue);
        assert_eq!(es.observe(3, f64::NAN), StopDecision::Stop);
        assert_eq!(es.best(), 0.3);
    }
}
