use serde::{Deserialize, Serialize};

/// Step decay: `lr(t) = base * gamma^floor(t / step_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLr {
    pub base: f64,
    pub gamma: f64,
    pub step_size: usize,
}

impl StepLr {
    pub fn new(base: f64, gamma: f64, step_size: usize) -> Self {
        Self {
            base,
            gamma,
            step_size,
        }
    }

    pub fn lr(&self, t: usize) -> f64 {
        self.base * self.gamma.powi((t / self.step_size) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decays_every_step_size() {
        let s = StepLr::new(1e-4, 0.9, 500);
        assert_eq!(s.lr(0), 1e-4);
        assert_eq!(s.lr(499), 1e-4);
        assert_eq!(s.lr(500), 1e-4 * 0.9);
        assert_eq!(s.lr(1000), 1e-4 * 0.9 * 0.9);
        assert!((s.lr(500) - 9e-5).abs() < 1e-18);
        assert!((s.lr(1000) - 8.1e-5).abs() < 1e-18);
    }
}
