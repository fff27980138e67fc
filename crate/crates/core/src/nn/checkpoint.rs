//! Versioned JSON checkpoints for networks and optimizer state.
//!
//! Reals are written as shortest round-trip decimals and parsed with exact
//! rounding, so a save/load cycle reproduces every value bit for bit.

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::matrix::DenseMatrix;
use super::mlp::{Activation, Gradients, Layer, LayerGradients, NetworkParams};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamCheckpoint {
    #[serde(flatten)]
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<MomentLayer>,
    pub second_moment: Vec<MomentLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentLayer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

fn moments_to_layers(g: &Gradients) -> Vec<MomentLayer> {
    g.layers
        .iter()
        .map(|l| MomentLayer {
            weight: l.weight.clone(),
            bias: l.bias.clone(),
            gamma: l.gamma.clone(),
            beta: l.beta.clone(),
        })
        .collect()
}

fn layers_to_moments(layers: Vec<MomentLayer>) -> Gradients {
    Gradients {
        layers: layers
            .into_iter()
            .map(|l| LayerGradients {
                weight: l.weight,
                bias: l.bias,
                gamma: l.gamma,
                beta: l.beta,
            })
            .collect(),
    }
}

impl NetworkCheckpoint {
    pub fn new(params: &NetworkParams, adam: Option<&AdamState>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            layer_dims: params.layer_dims(),
            activations: params.activations(),
            layers: params.layers().to_vec(),
            adam: adam.map(|a| AdamCheckpoint {
                config: a.config,
                step_count: a.step_count,
                first_moment: moments_to_layers(&a.first_moment),
                second_moment: moments_to_layers(&a.second_moment),
            }),
        }
    }

    /// Validates the document and rebuilds the network (and optimizer state,
    /// when present).
    pub fn restore(self) -> Result<(NetworkParams, Option<AdamState>)> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion(self.format_version));
        }
        let params = NetworkParams::from_layers(self.layers)?;
        if params.layer_dims() != self.layer_dims {
            return Err(Error::dim(format!(
                "declared layer_dims {:?} but weights imply {:?}",
                self.layer_dims,
                params.layer_dims()
            )));
        }
        if params.activations() != self.activations {
            return Err(Error::InvalidValue(
                "declared activations disagree with layers".into(),
            ));
        }
        let adam = match self.adam {
            None => None,
            Some(a) => {
                let state = AdamState {
                    config: a.config,
                    step_count: a.step_count,
                    first_moment: layers_to_moments(a.first_moment),
                    second_moment: layers_to_moments(a.second_moment),
                };
                if !state.first_moment.mirrors(&params) || !state.second_moment.mirrors(&params) {
                    return Err(Error::dim("adam moments do not mirror the network"));
                }
                Some(state)
            }
        };
        Ok((params, adam))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
