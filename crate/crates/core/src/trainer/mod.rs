//! Synthetic data, the training loop, gradient checking, evaluation and the
//! configuration sweep.

mod adam;
mod evaluate;
mod gradcheck;
pub mod objective;
mod sweep;
mod synth;

pub use adam::Adam;
pub use evaluate::{evaluate, evaluate_pairs, motion_views, pearson, sentence_alignment, EvalReport};
pub use gradcheck::{gradcheck, gradcheck_dataset, GradcheckEntry, GradcheckReport, GRADCHECK_TOLERANCE};
pub use sweep::{format_table, sweep, SweepConfig, SweepRow};
pub use synth::{synth_dataset, GlossLibrary, SentenceEmbeddingMode, SynthSpec};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::dataio::Vocabulary;
use crate::error::{Error, Result};
use crate::losses::{DEFAULT_GLOSS_LAMBDA, DEFAULT_TAU};
use crate::metrics::MetricsReport;
use crate::model::{Dropout, Model, ModelConfig, OutputMode};
use crate::skeleton::{PoseSequence, Skeleton};
use objective::{Objective, Prepared};

/// Epoch budget of the toy preset; enough for the synthetic quaternion task.
pub const TOY_EPOCHS: usize = 800;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub glosses: Vec<u32>,
    pub pose: PoseSequence,
    pub sentence: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub skeleton: Skeleton,
    pub vocab: Vocabulary,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(skeleton: Skeleton, vocab: Vocabulary, samples: Vec<Sample>) -> Result<Dataset> {
        for s in &samples {
            if s.pose.num_joints() != skeleton.num_joints() {
                return Err(Error::shape("sample pose", skeleton.num_joints(), s.pose.num_joints()));
            }
            if s.glosses.is_empty() {
                return Err(Error::InvalidArgument(format!("sample {} has no glosses", s.id)));
            }
            if let Some(&g) = s.glosses.iter().find(|&&g| g as usize >= vocab.len()) {
                return Err(Error::InvalidArgument(format!(
                    "sample {}: gloss id {g} not in vocabulary",
                    s.id
                )));
            }
        }
        Ok(Dataset {
            skeleton,
            vocab,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.samples.iter().map(|s| s.pose.len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrastive {
    None,
    Gloss,
    Sentence,
}

impl std::str::FromStr for Contrastive {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Contrastive::None),
            "gloss" => Ok(Contrastive::Gloss),
            "sentence" => Ok(Contrastive::Sentence),
            other => Err(Error::InvalidArgument(format!(
                "unknown contrastive loss `{other}` (expected none, gloss or sentence)"
            ))),
        }
    }
}

impl std::fmt::Display for Contrastive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Contrastive::None => "none",
            Contrastive::Gloss => "gloss",
            Contrastive::Sentence => "sentence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub contrastive: Contrastive,
    pub lambda: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Evaluate on the training set every this many epochs (0 = never).
    #[serde(default)]
    pub eval_every: usize,
    /// Chance that a decoder input row is replaced by the model's own
    /// prediction of that frame (0 = pure teacher forcing).
    #[serde(default)]
    pub scheduled_sampling: f64,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Toy defaults: batch 8, Adam at 1e-3, no contrastive term, half of the
    /// decoder inputs drawn from the model's own predictions, 800 epochs.
    pub fn toy(model: ModelConfig) -> Self {
        TrainConfig {
            contrastive: Contrastive::None,
            lambda: DEFAULT_GLOSS_LAMBDA,
            tau: DEFAULT_TAU,
            batch_size: 8,
            learning_rate: 1e-3,
            epochs: TOY_EPOCHS,
            seed: 0,
            eval_every: 0,
            scheduled_sampling: 0.5,
            model,
        }
    }

    /// Reference-scale defaults: batch 64, 1000 epochs, plain teacher forcing.
    pub fn full(model: ModelConfig) -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 1000,
            scheduled_sampling: 0.0,
            ..TrainConfig::toy(model)
        }
    }

    pub fn mode(&self) -> OutputMode {
        self.model.output_mode
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.contrastive == Contrastive::Sentence && self.batch_size < 2 {
            return bad("the sentence contrastive loss needs batch_size >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.scheduled_sampling) {
            return bad(format!(
                "scheduled_sampling must lie in [0, 1], got {}",
                self.scheduled_sampling
            ));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub slp_loss: f64,
    pub contrastive_loss: f64,
    pub total_loss: f64,
    pub lambda: f64,
    /// Mean of each SLP component over the epoch's batches.
    pub components: BTreeMap<String, f64>,
    /// Sample indices of every batch, in order.
    pub batches: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub steps: u64,
}

/// Shuffled batches; a trailing singleton joins the previous batch so every
/// batch can form contrastive pairs.
pub fn make_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFiniteLoss { term, .. } => Error::NonFiniteLoss { epoch, term },
        other => other,
    }
}

/// Train from a fresh seeded model.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let model = Model::new(config.model.clone(), config.seed)?;
    train_from(model, dataset, config)
}

/// Teacher-forced minibatch training with Adam, deterministic given the seed.
pub fn train_from(mut model: Model, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptySequence("training dataset"));
    }
    if model.config() != &config.model {
        return Err(Error::InvalidArgument(
            "model does not match the training configuration".into(),
        ));
    }
    if dataset.skeleton.num_joints() != config.model.num_joints {
        return Err(Error::shape(
            "dataset skeleton",
            config.model.num_joints,
            dataset.skeleton.num_joints(),
        ));
    }
    let layout = config.model.layout();
    let prepared = objective::prepare(dataset, &layout)?;
    let objective = Objective {
        contrastive: config.contrastive,
        lambda: config.lambda,
        tau: config.tau,
    };
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut sampling_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(3));
    let mut opt = Adam::new(model.params(), config.learning_rate);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let batches = make_batches(prepared.len(), config.batch_size, &mut shuffle);
        let mut sums = BTreeMap::<String, f64>::new();
        let (mut slp, mut cont, mut total) = (0.0, 0.0, 0.0);
        for batch in &batches {
            let items: Vec<&Prepared> = batch.iter().map(|&i| &prepared[i]).collect();
            let mixed;
            let items = if config.scheduled_sampling > 0.0 {
                mixed = objective::mix_predictions(&model, &items, config.scheduled_sampling, &mut sampling_rng)
                    .map_err(|e| with_epoch(e, epoch))?;
                mixed.iter().collect()
            } else {
                items
            };
            let mut g = Graph::new();
            let dropout = (config.model.dropout_rate > 0.0).then_some(Dropout {
                rate: config.model.dropout_rate,
                rng: &mut dropout_rng,
            });
            let loss = objective
                .build(&model, &mut g, &items, dropout)
                .map_err(|e| with_epoch(e, epoch))?;
            let grads = g.backward(loss.total).map_err(|_| Error::NonFiniteLoss {
                epoch,
                term: "gradient",
            })?;
            let grads = g.param_grads(&grads, model.params().len());
            if grads.iter().flatten().any(|t| !t.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    term: "gradient",
                });
            }
            opt.step(model.params_mut(), &grads);
            slp += g.value(loss.slp).item();
            cont += loss.contrastive.map_or(0.0, |c| g.value(c).item());
            total += g.value(loss.total).item();
            for (name, v) in &loss.components {
                *sums.entry(name.to_string()).or_default() += g.value(*v).item();
            }
        }
        let nb = batches.len() as f64;
        let metrics = if config.eval_every > 0 && epoch % config.eval_every == 0 {
            Some(evaluate(&model, dataset, crate::metrics::DEFAULT_PCK_ALPHA, false)?.report)
        } else {
            None
        };
        log.push(EpochRecord {
            epoch,
            slp_loss: slp / nb,
            contrastive_loss: cont / nb,
            total_loss: total / nb,
            lambda: config.lambda,
            components: sums.into_iter().map(|(k, v)| (k, v / nb)).collect(),
            batches,
            metrics,
        });
    }
    Ok(TrainOutcome {
        model,
        log,
        steps: opt.steps(),
    })
}

/// The log as line-delimited JSON.
pub fn log_to_jsonl(log: &[EpochRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}
