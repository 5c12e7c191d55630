//! Single-file checkpoints: a JSON header describing the network followed by
//! raw little-endian weights and a SHA-256 trailer.
//!
//! Layout: magic (8 bytes), format version (u32 LE), header length (u64 LE),
//! header JSON, payload, checksum over everything before it (32 bytes).
//! The checksum is verified before anything else is interpreted, so any
//! damage to the file surfaces as a corruption error.

use std::collections::BTreeMap;
use std::path::Path;

use amortize::diffcore::{AdamState, Params, Tensor};
use amortize::evidentialnet::{EvidentialConfig, ModelComparator};
use amortize::genmodels::{Model, PriorSpec, SimStats};
use amortize::posterior::{PosteriorEstimator, PosteriorSpec};
use amortize::trainer::TrainState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{AppError, AppResult};

pub const MAGIC: &[u8; 8] = b"AMZCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Posterior(PosteriorEstimator),
    Comparison(ModelComparator),
}

impl Network {
    pub fn kind(&self) -> &'static str {
        match self {
            Network::Posterior(_) => "posterior",
            Network::Comparison(_) => "comparison",
        }
    }

    pub fn params(&self) -> &Params {
        match self {
            Network::Posterior(e) => &e.params,
            Network::Comparison(c) => &c.params,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub network: Network,
    /// Present when the file was written mid-training and can be resumed.
    pub train_state: Option<TrainState>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NetworkHeader {
    Posterior(PosteriorSpec),
    Comparison {
        models: Vec<Model>,
        priors: Vec<PriorSpec>,
        evidential: EvidentialConfig,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    iteration: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    losses: Vec<f64>,
    stats: SimStats,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: Config,
    network: NetworkHeader,
    weights: Vec<WeightEntry>,
    /// Adam moments are stored as weights named `adam.m/<param>` and
    /// `adam.v/<param>`.
    optimizer: Option<OptimizerHeader>,
}

const FIRST_MOMENT: &str = "adam.m/";
const SECOND_MOMENT: &str = "adam.v/";

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let network = match &self.network {
            Network::Posterior(e) => NetworkHeader::Posterior(e.spec().clone()),
            Network::Comparison(c) => NetworkHeader::Comparison {
                models: c.models.clone(),
                priors: c.priors.clone(),
                evidential: c.config().clone(),
            },
        };
        let mut tensors: Vec<(String, &Tensor)> = self.network.params().iter().map(|(n, t)| (n.clone(), t)).collect();
        let optimizer = self.train_state.as_ref().map(|s| {
            for (n, t) in &s.adam.first_moment {
                tensors.push((format!("{FIRST_MOMENT}{n}"), t));
            }
            for (n, t) in &s.adam.second_moment {
                tensors.push((format!("{SECOND_MOMENT}{n}"), t));
            }
            OptimizerHeader {
                iteration: s.iteration,
                lr: s.adam.lr,
                beta1: s.adam.beta1,
                beta2: s.adam.beta2,
                eps: s.adam.eps,
                step_count: s.adam.step_count,
                losses: s.losses.clone(),
                stats: s.stats,
            }
        });

        let mut payload = Vec::new();
        let mut weights = Vec::with_capacity(tensors.len());
        for (name, t) in tensors {
            weights.push(WeightEntry {
                name,
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for x in t.data() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let header = Header {
            config: self.config.clone(),
            network,
            weights,
            optimizer,
        };
        let header = serde_json::to_vec(&header).expect("checkpoint header serializes");

        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len() + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses a checkpoint; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> AppResult<Self> {
        let corrupt = |reason: &str| AppError::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < PREFIX_LEN + CHECKSUM_LEN {
            return Err(corrupt("file is too short"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(corrupt("checksum mismatch"));
        }
        if &body[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(AppError::UnsupportedVersion {
                path: path.to_path_buf(),
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|l| PREFIX_LEN.checked_add(l))
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&body[PREFIX_LEN..header_end])
            .map_err(|e| corrupt(&format!("unreadable header: {e}")))?;
        let payload = &body[header_end..];

        let mut params = Params::new();
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        let mut covered = 0usize;
        for w in &header.weights {
            let count: usize = w.shape.iter().product();
            let start = w.offset as usize;
            let end = start
                .checked_add(count * 8)
                .filter(|&e| e <= payload.len() && start == covered)
                .ok_or_else(|| corrupt(&format!("weight `{}` does not match its byte span", w.name)))?;
            covered = end;
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(w.shape.clone(), data).map_err(|e| corrupt(&e.to_string()))?;
            if let Some(n) = w.name.strip_prefix(FIRST_MOMENT) {
                first.insert(n.to_string(), t);
            } else if let Some(n) = w.name.strip_prefix(SECOND_MOMENT) {
                second.insert(n.to_string(), t);
            } else {
                params.insert(w.name.clone(), t);
            }
        }
        if covered != payload.len() {
            return Err(corrupt("payload has trailing bytes"));
        }

        let network = match header.network {
            NetworkHeader::Posterior(spec) => Network::Posterior(PosteriorEstimator::from_parts(spec, params)?),
            NetworkHeader::Comparison {
                models,
                priors,
                evidential,
            } => Network::Comparison(ModelComparator::from_parts(models, priors, evidential, params)?),
        };
        let train_state = header.optimizer.map(|o| TrainState {
            iteration: o.iteration,
            adam: AdamState {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                step_count: o.step_count,
                first_moment: first,
                second_moment: second,
            },
            losses: o.losses,
            stats: o.stats,
        });
        Ok(Checkpoint {
            config: header.config,
            network,
            train_state,
        })
    }

    pub fn into_posterior(self, path: &Path) -> AppResult<(PosteriorEstimator, Config, Option<TrainState>)> {
        match self.network {
            Network::Posterior(e) => Ok((e, self.config, self.train_state)),
            other => Err(AppError::KindMismatch {
                path: path.to_path_buf(),
                found: other.kind().into(),
                expected: "posterior".into(),
            }),
        }
    }

    pub fn into_comparison(self, path: &Path) -> AppResult<(ModelComparator, Config, Option<TrainState>)> {
        match self.network {
            Network::Comparison(c) => Ok((c, self.config, self.train_state)),
            other => Err(AppError::KindMismatch {
                path: path.to_path_buf(),
                found: other.kind().into(),
                expected: "comparison".into(),
            }),
        }
    }
}

/// Writes through a temporary sibling file and renames it into place, so a
/// crash never leaves a half-written checkpoint behind.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> AppResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, ckpt.to_bytes()).map_err(|e| AppError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> AppResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
