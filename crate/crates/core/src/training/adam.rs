use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use super::config::AdamConfig;
use crate::error::{GfdError, Result};

/// Adam over a fixed, named parameter group, with exportable moments so that
/// resumed runs continue bitwise.
pub struct Adam {
    params: Vec<(String, Var)>,
    moments: Vec<Option<(Tensor, Tensor)>>,
    cfg: AdamConfig,
    step: u64,
}

/// Running statistics are updated by the forward pass, never by the optimizer.
pub fn is_trainable(name: &str) -> bool {
    !(name.ends_with("running_mean") || name.ends_with("running_var"))
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, cfg: AdamConfig) -> Self {
        let params: Vec<_> = params
            .into_iter()
            .filter(|(n, _)| is_trainable(n))
            .collect();
        let moments = vec![None; params.len()];
        Self {
            params,
            moments,
            cfg,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient in `grads`.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((_, var), slot) in self.params.iter().zip(self.moments.iter_mut()) {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Gradients carry their backward graph; keeping them in the moments would retain every step's graph.
            let g = &g.detach();
            let (m, v) = match slot.take() {
                Some((m, v)) => (
                    ((m * beta1)? + (g * (1.0 - beta1))?)?,
                    ((v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?,
                ),
                None => ((g * (1.0 - beta1))?, (g.sqr()? * (1.0 - beta2))?),
            };
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + eps)?)?;
            var.set(&var.as_tensor().sub(&(update * lr)?)?)?;
            *slot = Some((m, v));
        }
        Ok(())
    }

    /// Moments keyed `{param}.m` / `{param}.v`.
    pub fn export(&self, prefix: &str) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for ((name, _), slot) in self.params.iter().zip(&self.moments) {
            if let Some((m, v)) = slot {
                out.insert(format!("{prefix}/{name}.m"), m.clone());
                out.insert(format!("{prefix}/{name}.v"), v.clone());
            }
        }
        out
    }

    pub fn import(
        &mut self,
        prefix: &str,
        tensors: &HashMap<String, Tensor>,
        step: u64,
    ) -> Result<()> {
        for ((name, var), slot) in self.params.iter().zip(self.moments.iter_mut()) {
            let m = tensors.get(&format!("{prefix}/{name}.m"));
            let v = tensors.get(&format!("{prefix}/{name}.v"));
            *slot = match (m, v) {
                (Some(m), Some(v)) => {
                    if m.dims() != var.dims() || v.dims() != var.dims() {
                        return Err(GfdError::Checkpoint(format!(
                            "optimizer moment shape mismatch for {name}"
                        )));
                    }
                    Some((m.to_dtype(var.dtype())?, v.to_dtype(var.dtype())?))
                }
                (None, None) => None,
                _ => {
                    return Err(GfdError::Checkpoint(format!(
                        "incomplete optimizer moments for {name}"
                    )))
                }
            };
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let dev = Device::Cpu;
        let w = Var::from_tensor(&Tensor::new(&[1.0f64, -2.0, 0.5], &dev).unwrap()).unwrap();
        let mut opt = Adam::new(vec![("w".into(), w.clone())], AdamConfig::default());
        let loss = (w.as_tensor() * Tensor::new(&[3.0f64, -1.0, 0.0], &dev).unwrap())
            .unwrap()
            .sum_all()
            .unwrap();
        opt.step(&loss.backward().unwrap(), 0.1).unwrap();
        let got: Vec<f64> = w.as_tensor().to_vec1().unwrap();
        assert!((got[0] - 0.9).abs() < 1e-6);
        assert!((got[1] - -1.9).abs() < 1e-6);
        assert_eq!(got[2], 0.5);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn skips_running_statistics() {
        let dev = Device::Cpu;
        let v = Var::zeros(2, DType::F32, &dev).unwrap();
        let opt = Adam::new(
            vec![
                ("bn.running_mean".into(), v.clone()),
                ("bn.weight".into(), v),
            ],
            AdamConfig::default(),
        );
        assert_eq!(opt.params.len(), 1);
    }

    #[test]
    fn export_import_round_trip() {
        let dev = Device::Cpu;
        let make = || Var::from_tensor(&Tensor::new(&[1.0f64, 2.0], &dev).unwrap()).unwrap();
        let (a, b) = (make(), make());
        let mut oa = Adam::new(vec![("w".into(), a.clone())], AdamConfig::default());
        let mut ob = Adam::new(vec![("w".into(), b.clone())], AdamConfig::default());
        let step = |opt: &mut Adam, var: &Var| {
            let loss = var.as_tensor().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap(), 0.01).unwrap();
        };
        step(&mut oa, &a);
        b.set(a.as_tensor()).unwrap();
        ob.import("g", &oa.export("g"), oa.steps()).unwrap();
        step(&mut oa, &a);
        step(&mut ob, &b);
        assert_eq!(
            a.as_tensor().to_vec1::<f64>().unwrap(),
            b.as_tensor().to_vec1::<f64>().unwrap()
        );
    }
}
