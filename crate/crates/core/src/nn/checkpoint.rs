use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::map::{MapModel, Parameterization};
use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// On-disk JSON form of a [`MapModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub residual: bool,
    pub parameterization: Parameterization,
    /// Flat parameters in the [`Mlp`] layout.
    pub params: Vec<f64>,
}

impl From<&MapModel> for Checkpoint {
    fn from(model: &MapModel) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layer_dims: model.net.layer_dims().to_vec(),
            activation: model.net.activation(),
            residual: model.net.has_residual(),
            parameterization: model.parameterization,
            params: model.net.params().to_vec(),
        }
    }
}

impl Checkpoint {
    pub fn into_model(self) -> Result<MapModel> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", self.format_version)));
        }
        let net = Mlp::from_params(&self.layer_dims, self.activation, self.residual, self.params)?;
        MapModel::new(self.parameterization, net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<MapModel> {
        let text = fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)?.into_model()
    }
}
