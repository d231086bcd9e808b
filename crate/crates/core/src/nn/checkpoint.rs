use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, MlpSpec};
use crate::error::{Error, Result};
use crate::param::{ParamKind, Scaler};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to run a trained model: network, BN statistics, the
/// fitted scaler and the system it was trained for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ParamKind,
    pub n_antennas: usize,
    pub n_users: usize,
    pub noise_variance: f64,
    pub train_seed: u64,
    pub spec: MlpSpec,
    pub params: Vec<f64>,
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
    pub scaler: Scaler,
}

impl Checkpoint {
    pub fn new(kind: ParamKind, noise_variance: f64, train_seed: u64, model: &Mlp, scaler: &Scaler) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind,
            n_antennas: scaler.n_antennas,
            n_users: scaler.n_users,
            noise_variance,
            train_seed,
            spec: model.spec().clone(),
            params: model.params().to_vec(),
            running_mean: model.running_mean().to_vec(),
            running_var: model.running_var().to_vec(),
            scaler: scaler.clone(),
        }
    }

    pub fn model(&self) -> Result<Mlp> {
        Mlp::from_parts(
            self.spec.clone(),
            self.params.clone(),
            self.running_mean.clone(),
            self.running_var.clone(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.scaler.require_fitted()?;
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("checkpoint version {} (supported: {CHECKPOINT_VERSION})", ck.version),
            });
        }
        let (n, k) = (ck.n_antennas, ck.n_users);
        if ck.spec.input_dim != ck.kind.input_dim(n, k) || ck.spec.output_dim != ck.kind.label_dim(n, k) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("network widths do not match {} at N={n}, K={k}", ck.kind),
            });
        }
        Ok(ck)
    }
}
