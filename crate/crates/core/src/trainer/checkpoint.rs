use std::fs;
use std::path::Path;

use pkchat_tensor::{ParamId, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::keywords::CrfModel;
use crate::model::{DialogueModel, ModelConfig};
use crate::text::Vocab;

const MAGIC_PREFIX: &[u8; 6] = b"PKCHAT";
const VERSION: &[u8; 2] = b"01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the data section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    crf: Option<CrfModel>,
    step: u64,
    #[serde(default)]
    train_config: Option<TrainConfig>,
}

/// Everything needed to restore a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub crf: Option<CrfModel>,
    pub step: u64,
    /// Hyperparameters the parameters were trained with, if any.
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn from_model(model: &DialogueModel, step: u64) -> Self {
        Self {
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            params: model.params.clone(),
            crf: None,
            step,
            train_config: None,
        }
    }

    pub fn model(&self) -> Result<DialogueModel> {
        DialogueModel::from_parts(self.config.clone(), self.vocab.clone(), self.params.clone())
    }

    /// The parameters as they will read back after a save: rounded to f32.
    pub fn stored_precision(&self) -> Self {
        let mut out = self.clone();
        for i in 0..out.params.len() {
            for x in out.params.get_mut(ParamId(i)).data_mut() {
                *x = *x as f32 as f64;
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for (_, name, t) in self.params.iter() {
            tensors.push(TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset });
            offset += t.numel() * 4;
        }
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors,
            crf: self.crf.clone(),
            step: self.step,
            train_config: self.train_config.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset);
        out.extend_from_slice(MAGIC_PREFIX);
        out.extend_from_slice(VERSION);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in self.params.iter() {
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..6] != MAGIC_PREFIX {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        if &bytes[6..8] != VERSION {
            return Err(Error::UnsupportedVersion(String::from_utf8_lossy(&bytes[6..8]).into_owned()));
        }
        let len_bytes: [u8; 8] = bytes
            .get(8..16)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Checkpoint("truncated header length".into()))?;
        let header_len = usize::try_from(u64::from_le_bytes(len_bytes))
            .map_err(|_| Error::Checkpoint("header length overflows".into()))?;
        let body_start = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let mut header: Header = serde_json::from_slice(&bytes[16..body_start])
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let data = &bytes[body_start..];

        let mut params = ParamStore::new();
        for entry in &header.tensors {
            let numel: usize = entry.shape.iter().product();
            let slice = entry
                .offset
                .checked_add(numel * 4)
                .and_then(|end| data.get(entry.offset..end))
                .ok_or_else(|| Error::Checkpoint(format!("truncated data for tensor `{}`", entry.name)))?;
            let values = slice
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            params.add(entry.name.clone(), Tensor::new(entry.shape.clone(), values)?)?;
        }
        let expected: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum();
        if data.len() != expected {
            return Err(Error::Checkpoint(format!("data section is {} bytes, expected {expected}", data.len())));
        }
        if let Some(crf) = header.crf.as_mut() {
            crf.rebuild_index();
            crf.validate()?;
        }
        let ckpt = Checkpoint {
            config: header.config,
            vocab: header.vocab,
            params,
            crf: header.crf,
            step: header.step,
            train_config: header.train_config,
        };
        // Name and shape checks against the embedded config.
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let vocab = Vocab::build(["basalt is_a igneous rock", "it is igneous rock ."], 1, 2).unwrap();
        let mut cfg = ModelConfig::toy(vocab.len());
        cfg.hidden = 8;
        cfg.heads = 2;
        cfg.ffn = 16;
        cfg.layers = 1;
        cfg.latent = 2;
        let model = DialogueModel::new(cfg, vocab, 5).unwrap();
        Checkpoint::from_model(&model, 3)
    }

    #[test]
    fn round_trip_at_stored_precision() {
        let c = ckpt();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c.stored_precision());
        assert_eq!(back.step, 3);
    }

    #[test]
    fn header_layout() {
        let bytes = ckpt().to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"PKCHAT01");
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + n]).unwrap();
        assert_eq!(header["tensors"][0]["offset"], 0);
        assert!(header["config"]["hidden"].is_number());
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = ckpt().to_bytes().unwrap();
        bytes[7] = b'2';
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion(_)));
        assert!(err.to_string().contains("unsupported version"));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = ckpt().to_bytes().unwrap();
        let step = (bytes.len() / 97).max(1);
        for cut in (0..bytes.len()).step_by(step) {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let c = ckpt();
        let mut bytes = c.to_bytes().unwrap();
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + n]).unwrap();
        header["config"]["ffn"] = 15.into();
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes.split_off(16 + n));
        let err = Checkpoint::from_bytes(&out).unwrap_err().to_string();
        assert!(err.contains("ffn.w1"), "{err}");
    }
}
