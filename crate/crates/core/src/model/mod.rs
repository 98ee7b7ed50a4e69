//! Progressive transformer mapping gloss sequences to pose frames.
//!
//! The encoder embeds gloss tokens (sinusoidal positions, pre-norm
//! self-attention blocks). The decoder is autoregressive over continuous
//! frames, each carrying a normalized progress counter `t / T` as its last
//! component; generation stops once the predicted counter reaches 1.
//! After every decoder self-attention sublayer the normalized residual stream
//! is captured as that layer's latent, which the contrastive objectives use.

mod checkpoint;
mod frames;
mod params;
mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use frames::{decoder_inputs, target_frames, FrameLayout, Motion};
pub use params::ParamStore;
pub use transformer::{Dropout, ForwardOutput, Generated, SampleInput};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Width of the projection head output (the sentence-embedding width).
pub const PROJECTION_DIM: usize = crate::losses::SENTENCE_DIM;
/// Generation stops once the predicted counter reaches `1 - STOP_MARGIN`.
pub const STOP_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    Cartesian,
    Quaternion,
}

impl std::str::FromStr for OutputMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartesian" => Ok(OutputMode::Cartesian),
            "quaternion" => Ok(OutputMode::Quaternion),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected cartesian or quaternion)"
            ))),
        }
    }
}

impl std::fmt::Display for OutputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutputMode::Cartesian => "cartesian",
            OutputMode::Quaternion => "quaternion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
    pub feedforward_dim: usize,
    pub vocab_size: usize,
    pub output_mode: OutputMode,
    pub max_frames: usize,
    pub dropout_rate: f64,
    pub counter_enabled: bool,
    /// Joints of the skeleton the frames describe.
    pub num_joints: usize,
}

impl ModelConfig {
    /// Desk-scale preset: 2 layers, 2 heads, width 64.
    pub fn toy(vocab_size: usize, num_joints: usize, output_mode: OutputMode) -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            embed_dim: 64,
            feedforward_dim: 128,
            vocab_size,
            output_mode,
            max_frames: 64,
            dropout_rate: 0.0,
            counter_enabled: true,
            num_joints,
        }
    }

    /// The reference full-scale configuration: 2 layers, 4 heads, width 512.
    pub fn full(vocab_size: usize, num_joints: usize, output_mode: OutputMode) -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 4,
            embed_dim: 512,
            feedforward_dim: 2048,
            vocab_size,
            output_mode,
            max_frames: 300,
            dropout_rate: 0.1,
            counter_enabled: true,
            num_joints,
        }
    }

    /// Smallest useful configuration, for finite-difference checks.
    pub fn tiny(vocab_size: usize, num_joints: usize, output_mode: OutputMode) -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            embed_dim: 8,
            feedforward_dim: 12,
            vocab_size,
            output_mode,
            max_frames: 16,
            dropout_rate: 0.0,
            counter_enabled: true,
            num_joints,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_layers == 0 || self.num_heads == 0 || self.embed_dim == 0 || self.feedforward_dim == 0 {
            return bad("layer, head, width and feed-forward sizes must be positive".into());
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.max_frames == 0 {
            return bad("max_frames must be at least 1".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if self.num_joints < 2 {
            return bad("skeleton needs at least 2 joints".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn num_bones(&self) -> usize {
        self.num_joints - 1
    }

    pub fn layout(&self) -> FrameLayout {
        FrameLayout::new(self.output_mode, self.num_joints, self.counter_enabled)
    }
}

/// Model parameters together with their configuration.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: transformer::ParamIds,
}

impl Model {
    /// Xavier-uniform weights, zero biases, unit norm gains; fully determined by `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut params = ParamStore::default();
        let ids = transformer::ParamIds::allocate(&config, &mut params, seed);
        Ok(Model { config, params, ids })
    }

    /// Rebuild from named tensors, checking every name and shape.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Model> {
        let mut model = Model::new(config, 0)?;
        if named.len() != model.params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} weight arrays, found {}",
                model.params.len(),
                named.len()
            )));
        }
        for (name, t) in named {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown weight array `{name}`")))?;
            let want = model.params.get(id).shape();
            if t.shape() != want {
                return Err(Error::shape(
                    "weight array",
                    format!("{want:?}"),
                    format!("{name} {:?}", t.shape()),
                ));
            }
            *model.params.get_mut(id) = t;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Zero the output head, so every emitted frame is all zeros.
    pub fn zero_output_head(&mut self) {
        for id in [self.ids.head.w, self.ids.head.b] {
            self.params.get_mut(id).data_mut().fill(0.0);
        }
    }
}
