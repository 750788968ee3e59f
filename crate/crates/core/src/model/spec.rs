//! Model specification file schema (TOML).
//!
//! A [`ModelSpec`] describes the medium, the transmitter's reaction set for
//! every symbol, the receiver and the initial condition. The schema is
//! versioned through [`ModelSpec::version`]; see `docs/model-format.md`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::{GridSpec, VoxelRef};
use super::ModelError;

/// Current model file schema version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Name of the signalling (diffusing) species in reaction lists.
pub const SIGNAL: &str = "S";

/// A mass-action reaction inside the transmitter voxel.
///
/// Stoichiometry is written by repetition: `reactants = ["S", "S"]` is a
/// homodimerisation. At most two reactant molecules are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    #[serde(default)]
    pub reactants: Vec<String>,
    #[serde(default)]
    pub products: Vec<String>,
    /// Rate constant in count units (1/s for every order).
    pub rate: f64,
}

impl Reaction {
    pub fn new(reactants: &[&str], products: &[&str], rate: f64) -> Self {
        Reaction {
            reactants: reactants.iter().map(|s| s.to_string()).collect(),
            products: products.iter().map(|s| s.to_string()).collect(),
            rate,
        }
    }

    /// Kinetic order, i.e. the number of reactant molecules.
    pub fn order(&self) -> usize {
        self.reactants.len()
    }
}

/// The reactions used to generate one transmission symbol.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReactionSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub reactions: Vec<Reaction>,
}

impl ReactionSet {
    pub fn new(name: &str, reactions: Vec<Reaction>) -> Self {
        ReactionSet {
            name: Some(name.to_string()),
            reactions,
        }
    }

    /// A single zeroth-order source of signalling molecules at `rate`.
    pub fn constant_source(rate: f64) -> Self {
        ReactionSet {
            name: Some(format!("source {rate}")),
            reactions: vec![Reaction::new(&[], &[SIGNAL], rate)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitterSpec {
    pub voxel: VoxelRef,
    /// Intermediate species confined to the transmitter voxel.
    #[serde(default)]
    pub species: Vec<String>,
    /// One reaction set per symbol, indexed by symbol.
    pub symbols: Vec<ReactionSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverSpec {
    pub voxel: VoxelRef,
    /// Number of receptors M.
    pub receptors: u32,
    /// Binding rate constant λ̃ in μm³/s.
    pub binding_rate_constant: f64,
    /// Unbinding rate μ in 1/s.
    pub unbinding_rate: f64,
}

impl ReceiverSpec {
    /// Per-voxel binding propensity constant λ = λ̃ / W³.
    pub fn binding_propensity_constant(&self, grid: &GridSpec) -> f64 {
        self.binding_rate_constant / grid.voxel_volume()
    }
}

/// Signalling molecules placed in a voxel at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelCount {
    pub voxel: VoxelRef,
    pub count: u32,
}

/// One alternative for the initial state, chosen with probability
/// proportional to `weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    #[serde(default = "one")]
    pub weight: f64,
    /// Intermediate species counts; unlisted species start at zero.
    #[serde(default)]
    pub species: BTreeMap<String, u32>,
    #[serde(default)]
    pub signal: Vec<VoxelCount>,
}

fn one() -> f64 {
    1.0
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState {
            weight: 1.0,
            species: BTreeMap::new(),
            signal: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default = "current_version")]
    pub version: u32,
    pub grid: GridSpec,
    pub transmitter: TransmitterSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver: Option<ReceiverSpec>,
    /// Weighted alternatives for the initial state. Empty means all zero.
    #[serde(default)]
    pub initial: Vec<InitialState>,
}

fn current_version() -> u32 {
    MODEL_FORMAT_VERSION
}

impl ModelSpec {
    pub fn n_symbols(&self) -> usize {
        self.transmitter.symbols.len()
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let spec: ModelSpec =
            toml::from_str(text).map_err(|e| ModelError::Config(format!("model file: {e}")))?;
        if spec.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Config(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                spec.version
            )));
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_toml())
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))
    }

    /// Short content hash used to tie internal models to the model they were
    /// estimated from.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model spec serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }

    pub fn with_receptors(mut self, receptors: u32) -> Self {
        if let Some(rx) = self.receiver.as_mut() {
            rx.receptors = receptors;
        }
        self
    }
}
