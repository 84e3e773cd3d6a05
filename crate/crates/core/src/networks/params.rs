use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GfdError, Result};

/// Named parameters of one network, backed by a candle `VarMap`.
#[derive(Clone)]
pub struct ParamStore {
    varmap: VarMap,
    dtype: DType,
    device: Device,
}

/// Shape and content hash of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub sha256: String,
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device) -> Self {
        Self {
            varmap: VarMap::new(),
            dtype,
            device: device.clone(),
        }
    }

    pub fn vb(&self) -> VarBuilder<'static> {
        VarBuilder::from_varmap(&self.varmap, self.dtype, &self.device)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// All variables sorted by name.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut out: Vec<_> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.varmap
            .data()
            .lock()
            .expect("varmap lock")
            .get(name)
            .cloned()
    }

    pub fn num_params(&self) -> usize {
        self.named_vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.named_vars()
            .into_iter()
            .map(|(k, v)| (k, v.dims().to_vec()))
            .collect()
    }

    /// Re-initializes every variable from `seed`, independently of creation order.
    ///
    /// Rank >= 2 weights draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; rank-1
    /// `weight` and `running_var` start at one; everything else at zero.
    pub fn init_seeded(&self, seed: u64) -> Result<()> {
        for (name, var) in self.named_vars() {
            let dims = var.dims().to_vec();
            let n: usize = dims.iter().product();
            let is_weight = name.ends_with("weight");
            let values: Vec<f64> = if is_weight && dims.len() >= 2 {
                let fan_in: usize = dims[1..].iter().product();
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &name));
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            } else if is_weight || name.ends_with("running_var") {
                vec![1.0; n]
            } else {
                vec![0.0; n]
            };
            let t =
                Tensor::from_vec(values, dims.as_slice(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// Raw little-endian bytes of every variable, for bitwise comparisons.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<u8>>> {
        self.named_vars()
            .into_iter()
            .map(|(k, v)| Ok((k, tensor_bytes(v.as_tensor())?)))
            .collect()
    }

    pub fn records(&self) -> Result<BTreeMap<String, ParamRecord>> {
        self.named_vars()
            .into_iter()
            .map(|(k, v)| {
                let bytes = tensor_bytes(v.as_tensor())?;
                let rec = ParamRecord {
                    shape: v.dims().to_vec(),
                    sha256: hex::encode(Sha256::digest(&bytes)),
                };
                Ok((k, rec))
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let vars = self.named_vars();
        let tensors: Vec<(String, Tensor)> = vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors.into_iter().collect(), path)?;
        Ok(())
    }

    /// Loads values into existing variables. Every variable must be present with a matching shape.
    pub fn load(&self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(GfdError::MissingFile(path.to_path_buf()));
        }
        let loaded = candle_core::safetensors::load(path, &self.device)?;
        for (name, var) in self.named_vars() {
            let t = loaded.get(&name).ok_or_else(|| {
                GfdError::Checkpoint(format!("{}: missing tensor '{name}'", path.display()))
            })?;
            if t.dims() != var.dims() {
                return Err(GfdError::ShapeMismatch {
                    expected: var.dims().to_vec(),
                    got: t.dims().to_vec(),
                });
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub(crate) fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => flat
            .to_vec1::<f64>()?
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
        DType::F32 => flat
            .to_vec1::<f32>()?
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
        other => flat.to_dtype(DType::F64)?.to_vec1::<f64>().map(|v| {
            let mut out: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
            out.extend(format!("{other:?}").bytes());
            out
        })?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let s = ParamStore::new(DType::F32, &Device::Cpu);
        let vb = s.vb();
        vb.get_with_hints((4, 3, 3, 3), "conv.weight", candle_nn::Init::Const(0.))
            .unwrap();
        vb.get_with_hints(4, "conv.bias", candle_nn::Init::Const(0.))
            .unwrap();
        vb.get_with_hints(4, "norm.weight", candle_nn::Init::Const(0.))
            .unwrap();
        vb.get_with_hints(4, "norm.running_var", candle_nn::Init::Const(0.))
            .unwrap();
        s
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let (a, b, c) = (store(), store(), store());
        a.init_seeded(7).unwrap();
        b.init_seeded(7).unwrap();
        c.init_seeded(8).unwrap();
        assert_eq!(a.snapshot().unwrap(), b.snapshot().unwrap());
        assert_ne!(a.snapshot().unwrap(), c.snapshot().unwrap());
        let w: Vec<f32> = a
            .get("conv.weight")
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let bound = 1.0 / 27f32.sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
        let ones: Vec<f32> = a.get("norm.weight").unwrap().to_vec1().unwrap();
        assert_eq!(ones, vec![1.0; 4]);
        let rv: Vec<f32> = a.get("norm.running_var").unwrap().to_vec1().unwrap();
        assert_eq!(rv, vec![1.0; 4]);
        assert_eq!(a.num_params(), 108 + 12);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = store();
        a.init_seeded(1).unwrap();
        a.save(&dir.path().join("a.safetensors")).unwrap();
        let b = store();
        b.load(&dir.path().join("a.safetensors")).unwrap();
        assert_eq!(a.records().unwrap(), b.records().unwrap());
        assert!(matches!(
            b.load(&dir.path().join("missing.safetensors")),
            Err(GfdError::MissingFile(_))
        ));
    }
}
