use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamWState, Module, Rng};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn from_array(name: &str, a: &Array2<f64>) -> Self {
        Self {
            name: name.to_string(),
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        match self.shape[..] {
            [r, c] if r * c == self.data.len() => Ok(Array2::from_shape_vec((r, c), self.data.clone())
                .expect("shape checked")),
            _ => Err(Error::Contract(format!(
                "tensor {} has shape {:?} but {} values",
                self.name,
                self.shape,
                self.data.len()
            ))),
        }
    }
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal string; the position is a 128-bit counter.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<Rng> {
        use rand::SeedableRng;
        let bad = |what: &str| Error::Contract(format!("checkpoint RNG state: invalid {what}"));
        let bytes = hex::decode(&self.seed).map_err(|_| bad("seed"))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| bad("seed length"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("word position"))?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<AdamWState>,
    pub rng: Option<RngState>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn capture<M: Module + ?Sized>(model: &M) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            params: model
                .params()
                .iter()
                .map(|p| NamedTensor::from_array(&p.name, &p.value))
                .collect(),
            optimizer: None,
            rng: None,
            metadata: serde_json::Value::Null,
        }
    }

    /// Copies tensors into `model`, matching by name and shape.
    pub fn restore_into<M: Module + ?Sized>(&self, model: &mut M) -> Result<()> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Contract(format!(
                "checkpoint version {} is not supported",
                self.format_version
            )));
        }
        let mut params = model.params_mut();
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for (p, t) in params.iter_mut().zip(&self.params) {
            let value = t.to_array()?;
            if p.name != t.name || p.value.dim() != value.dim() {
                return Err(Error::Contract(format!(
                    "checkpoint tensor {} {:?} does not match parameter {} {:?}",
                    t.name,
                    t.shape,
                    p.name,
                    p.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{rng_from_seed, AdamW, AdamWConfig, Linear};
    use rand::Rng as _;

    #[test]
    fn round_trip_restores_everything() {
        let mut rng = rng_from_seed(9);
        let mut model = Linear::new("fc", 3, 2, &mut rng);
        model.weight.grad.fill(0.1);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut model.params_mut(), 1e-3).unwrap();
        let _: f64 = rng.random();

        let mut ck = Checkpoint::capture(&model);
        ck.optimizer = Some(opt.state(&["fc.weight".into(), "fc.bias".into()]));
        ck.rng = Some(RngState::capture(&rng));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);

        let mut fresh = Linear::new("fc", 3, 2, &mut rng_from_seed(1));
        back.restore_into(&mut fresh).unwrap();
        assert_eq!(fresh.weight.value, model.weight.value);
        assert_eq!(AdamW::from_state(back.optimizer.as_ref().unwrap()).unwrap(), opt);
        let mut resumed = back.rng.unwrap().restore().unwrap();
        assert_eq!(resumed.random::<u64>(), rng.random::<u64>());

        let mut wrong = Linear::new("other", 3, 2, &mut rng_from_seed(1));
        assert!(ck.restore_into(&mut wrong).is_err());
    }
}
