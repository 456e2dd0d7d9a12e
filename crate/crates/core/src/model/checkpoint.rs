//! Checkpoint container:
//!
//! ```text
//! b"PRIMEDCK" | u64 LE header length | JSON header | f32 LE blobs
//! ```
//!
//! Blobs are every parameter in header order, followed (when the header
//! carries optimizer settings) by the RMSprop second moments in the same
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelKind, UnetConfig, UnetModel};
use crate::autodiff::{Parameter, Rmsprop, RmspropConfig, Tensor};
use crate::error::{Error, Result};
use crate::masks::MaskTemplate;

const MAGIC: &[u8; 8] = b"PRIMEDCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model_kind: ModelKind,
    pub model: UnetConfig,
    pub params: Vec<ParamEntry>,
    pub optimizer: Option<RmspropConfig>,
    pub seed: u64,
    pub epoch: usize,
    /// Mask template the model was trained with.
    pub train_mask: Option<MaskTemplate>,
    /// `[height, width]` of the training images.
    pub image_size: Option<[usize; 2]>,
    /// Validation loss at the saved epoch.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: UnetModel<f32>,
    pub optimizer_state: Option<Vec<Tensor<f32>>>,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, model: UnetModel<f32>, optimizer: Option<&Rmsprop<f32>>, seed: u64, epoch: usize) -> Self {
        let header = CheckpointHeader {
            version: VERSION,
            model_kind: kind,
            model: *model.config(),
            params: model
                .params()
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
            optimizer: optimizer.map(|o| o.config),
            seed,
            epoch,
            train_mask: None,
            image_size: None,
            val_loss: None,
        };
        Self {
            header,
            optimizer_state: optimizer.map(|o| o.square_avg().to_vec()),
            model,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.header.model_kind
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.model.param_count() * 2);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let blobs = self
            .model
            .params()
            .iter()
            .map(|p| &p.value)
            .chain(self.optimizer_state.iter().flatten());
        for t in blobs {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("missing checkpoint magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        if header.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
        }
        if header.model.in_channels != header.model_kind.in_channels() {
            return Err(Error::Checkpoint(format!(
                "{} model stored with {} input channels",
                header.model_kind, header.model.in_channels
            )));
        }
        let mut blob = &bytes[16 + hlen..];
        let mut take = |shape: &[usize]| -> Result<Tensor<f32>> {
            let n: usize = shape.iter().product();
            if blob.len() < 4 * n {
                return Err(Error::Checkpoint("truncated parameter blob".into()));
            }
            let (head, rest) = blob.split_at(4 * n);
            blob = rest;
            let data = head
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Tensor::new(shape.to_vec(), data)
        };
        let mut params = Vec::with_capacity(header.params.len());
        for e in &header.params {
            params.push(Parameter::new(e.name.clone(), take(&e.shape)?));
        }
        let optimizer_state = match header.optimizer {
            Some(_) => Some(
                header
                    .params
                    .iter()
                    .map(|e| take(&e.shape))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        if !blob.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", blob.len())));
        }
        let model = UnetModel::from_params(header.model, params)?;
        Ok(Self {
            header,
            model,
            optimizer_state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(detail) => Error::CorruptFile {
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }

    /// Rebuilds an optimizer with the stored hyperparameters and state.
    pub fn optimizer(&self) -> Result<Option<Rmsprop<f32>>> {
        match (&self.header.optimizer, &self.optimizer_state) {
            (Some(cfg), Some(state)) => {
                let mut opt = Rmsprop::new(*cfg, self.model.params())?;
                opt.set_square_avg(state.clone())?;
                Ok(Some(opt))
            }
            _ => Ok(None),
        }
    }
}
