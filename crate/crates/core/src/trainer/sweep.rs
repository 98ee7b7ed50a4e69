//! The experiment grid: both output modes, each as a baseline, with the gloss
//! contrastive term, and with the sentence contrastive term over a list of
//! weights, plus a batch-size list for the Cartesian sentence variant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, Contrastive, Dataset, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, DEFAULT_PCK_ALPHA};
use crate::model::OutputMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Template for every run; mode, contrastive term, weight and batch size are overridden.
    pub base: TrainConfig,
    pub gloss_lambda: f64,
    pub cartesian_sentence_lambdas: Vec<f64>,
    pub quaternion_sentence_lambdas: Vec<f64>,
    pub sentence_batch_sizes: Vec<usize>,
    pub batch_sweep_lambda: f64,
    /// Runs trained concurrently.
    pub jobs: usize,
}

impl SweepConfig {
    /// The reference grid of weights and batch sizes around `base`.
    pub fn reference(base: TrainConfig) -> Self {
        SweepConfig {
            base,
            gloss_lambda: 1e-4,
            cartesian_sentence_lambdas: vec![1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 0.1],
            quaternion_sentence_lambdas: vec![0.05, 0.1, 1.0],
            sentence_batch_sizes: vec![128, 256],
            batch_sweep_lambda: 1e-3,
            jobs: 1,
        }
    }

    /// Every run of the grid, in report order.
    pub fn runs(&self) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        let mk = |mode, contrastive, lambda, batch_size| {
            let mut c = self.base.clone();
            c.model.output_mode = mode;
            c.contrastive = contrastive;
            c.lambda = lambda;
            c.batch_size = batch_size;
            c
        };
        let b = self.base.batch_size;
        for mode in [OutputMode::Cartesian, OutputMode::Quaternion] {
            out.push(mk(mode, Contrastive::None, 0.0, b));
            out.push(mk(mode, Contrastive::Gloss, self.gloss_lambda, b));
            let lambdas = match mode {
                OutputMode::Cartesian => &self.cartesian_sentence_lambdas,
                OutputMode::Quaternion => &self.quaternion_sentence_lambdas,
            };
            for &l in lambdas {
                out.push(mk(mode, Contrastive::Sentence, l, b));
            }
            if mode == OutputMode::Cartesian {
                for &bs in &self.sentence_batch_sizes {
                    out.push(mk(mode, Contrastive::Sentence, self.batch_sweep_lambda, bs));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: OutputMode,
    pub contrastive: Contrastive,
    pub lambda: f64,
    pub batch_size: usize,
    pub final_total_loss: f64,
    pub report: MetricsReport,
}

/// Train and evaluate every run of the grid; rows come back in grid order
/// regardless of how many run at once.
pub fn sweep(dataset: &Dataset, config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if config.jobs == 0 {
        return Err(Error::InvalidArgument("jobs must be at least 1".into()));
    }
    let runs = config.runs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| {
        runs.par_iter()
            .map(|run| {
                let outcome = train(dataset, run)?;
                let eval = evaluate(&outcome.model, dataset, DEFAULT_PCK_ALPHA, false)?;
                Ok(SweepRow {
                    mode: run.mode(),
                    contrastive: run.contrastive,
                    lambda: run.lambda,
                    batch_size: run.batch_size,
                    final_total_loss: outcome.log.last().map_or(f64::NAN, |r| r.total_loss),
                    report: eval.report,
                })
            })
            .collect()
    })
}

/// Fixed-width text table, one row per run.
pub fn format_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:<11} {:<9} {:>8} {:>6}  {:<17} {:<17} {:<17}\n",
        "mode", "variant", "lambda", "batch", "MJE", "MBAE", "PCK"
    );
    for r in rows {
        let lambda = if r.contrastive == Contrastive::None {
            "-".to_string()
        } else {
            format!("{}", r.lambda)
        };
        let cell = |m: f64, s: f64, p: usize| format!("{m:.p$} ± {s:.p$}");
        out.push_str(&format!(
            "{:<11} {:<9} {:>8} {:>6}  {:<17} {:<17} {:<17}\n",
            r.mode.to_string(),
            r.contrastive.to_string(),
            lambda,
            r.batch_size,
            cell(r.report.mje.mean, r.report.mje.std, 3),
            cell(r.report.mbae.mean, r.report.mbae.std, 2),
            cell(r.report.pck.mean, r.report.pck.std, 3),
        ));
    }
    out
}
