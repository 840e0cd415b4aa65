//! Ensemble checkpoint files: a JSON header (member specs with their seeds,
//! the standardizer) followed by each member's flat parameter array.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ensemble, NetModel, NetSpec};
use crate::data::StandardizationParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "rcl-ensemble/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberCheckpoint {
    pub spec: NetSpec,
    pub train_seed: u64,
    pub parameter_count: usize,
    pub parameters: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub standardizer: StandardizationParams,
    pub members: Vec<MemberCheckpoint>,
}

impl Checkpoint {
    pub fn from_ensemble(ensemble: &Ensemble, train_seeds: &[u64]) -> Self {
        let members = ensemble
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| MemberCheckpoint {
                spec: m.spec().clone(),
                train_seed: train_seeds.get(i).copied().unwrap_or_default(),
                parameter_count: m.param_count(),
                parameters: m.params.clone(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            standardizer: ensemble.standardizer.clone(),
            members,
        }
    }

    pub fn into_ensemble(self) -> Result<Ensemble> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unknown checkpoint format `{}`",
                self.format
            )));
        }
        let members = self
            .members
            .into_iter()
            .map(|m| {
                let expected = m.spec.param_count()?;
                if m.parameter_count != expected || m.parameters.len() != expected {
                    return Err(Error::Shape {
                        expected,
                        got: m.parameters.len().max(m.parameter_count),
                    });
                }
                NetModel::from_parts(m.spec, m.parameters)
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(members, self.standardizer)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ensemble: &Ensemble, train_seeds: &[u64]) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_ensemble(ensemble, train_seeds))?;
    crate::report::write_atomic(path.as_ref(), text.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Ensemble> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    ck.into_ensemble()
}
