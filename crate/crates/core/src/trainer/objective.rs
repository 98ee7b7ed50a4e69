//! The training objective for one batch, built on the autodiff graph.

use super::{Contrastive, Dataset};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{diff, GlossBatchAnnotation, SentenceEmbeddingBatch};
use crate::model::{decoder_inputs, target_frames, Dropout, FrameLayout, Model, Motion, OutputMode, SampleInput};
use crate::rotation::encode;
use rand::Rng;

/// Targets and teacher-forced inputs of one sample, computed once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub glosses: Vec<u32>,
    pub targets: Tensor,
    pub inputs: Tensor,
    pub sentence: Option<Vec<f64>>,
}

pub fn prepare(dataset: &Dataset, layout: &FrameLayout) -> Result<Vec<Prepared>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let motion = match layout.mode {
                OutputMode::Cartesian => Motion::Pose(s.pose.clone()),
                OutputMode::Quaternion => Motion::Rotation(encode(&s.pose, &dataset.skeleton)?),
            };
            let targets = target_frames(&motion, layout)?;
            Ok(Prepared {
                glosses: s.glosses.clone(),
                inputs: decoder_inputs(&targets),
                targets,
                sentence: s.sentence.clone(),
            })
        })
        .collect()
}

/// Copies of `batch` whose decoder inputs take the model's own (normalized)
/// prediction of each previous frame with probability `rate`.
pub fn mix_predictions(model: &Model, batch: &[&Prepared], rate: f64, rng: &mut impl Rng) -> Result<Vec<Prepared>> {
    let layout = model.config().layout();
    let inputs: Vec<SampleInput> = batch
        .iter()
        .map(|p| SampleInput {
            glosses: &p.glosses,
            frames: &p.inputs,
        })
        .collect();
    let mut g = Graph::new();
    let out = model.forward(&mut g, &inputs, None, false).map_err(tag("forward"))?;
    let pred = g.value(out.output);
    let mut start = 0;
    let mut mixed = Vec::with_capacity(batch.len());
    for p in batch {
        let mut q = (*p).clone();
        let n = p.inputs.rows();
        for t in 1..n {
            if rng.gen_bool(rate) {
                let mut row = pred.row(start + t - 1).to_vec();
                layout.normalize_row(&mut row);
                q.inputs.row_mut(t).copy_from_slice(&row);
            }
        }
        start += n;
        mixed.push(q);
    }
    Ok(mixed)
}

/// Graph handles of every logged term.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub slp: Var,
    pub contrastive: Option<Var>,
    pub total: Var,
    pub components: Vec<(&'static str, Var)>,
}

/// Which scalar the loss closure should return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Slp,
    Contrastive,
    Total,
}

pub struct Objective {
    pub contrastive: Contrastive,
    pub lambda: f64,
    pub tau: f64,
}

fn tag(term: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { epoch: 0, term },
        other => other,
    }
}

impl Objective {
    pub fn build(
        &self,
        model: &Model,
        g: &mut Graph,
        batch: &[&Prepared],
        dropout: Option<Dropout<'_>>,
    ) -> Result<BatchLoss> {
        let layout = model.config().layout();
        let inputs: Vec<SampleInput> = batch
            .iter()
            .map(|p| SampleInput {
                glosses: &p.glosses,
                frames: &p.inputs,
            })
            .collect();
        let project = self.contrastive == Contrastive::Sentence;
        let out = model.forward(g, &inputs, dropout, project).map_err(tag("forward"))?;
        let targets: Vec<Tensor> = batch.iter().map(|p| p.targets.clone()).collect();
        let slp = self.slp(g, out.output, &targets, &layout).map_err(tag("slp"))?;
        let contrastive = match self.contrastive {
            Contrastive::None => None,
            Contrastive::Gloss => {
                let ann = GlossBatchAnnotation::new(batch.iter().map(|p| p.glosses.clone()).collect());
                Some(diff::gloss_supcon(g, &out.pooled, &ann, self.tau).map_err(tag("contrastive"))?)
            }
            Contrastive::Sentence => {
                let rows = batch
                    .iter()
                    .map(|p| {
                        p.sentence
                            .clone()
                            .ok_or_else(|| Error::InvalidArgument("sample has no sentence embedding".into()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let sentences = SentenceEmbeddingBatch::from_rows(&rows)?;
                let projected = out.projected.as_deref().expect("projection requested");
                Some(diff::sbert_supcon(g, projected, &sentences).map_err(tag("contrastive"))?)
            }
        };
        let total = match contrastive {
            Some(c) => diff::total_loss(g, slp.0, c, self.lambda).map_err(tag("total"))?,
            None => slp.0,
        };
        Ok(BatchLoss {
            slp: slp.0,
            contrastive,
            total,
            components: slp.1,
        })
    }

    /// SLP loss over all stacked rows plus the counter regression.
    fn slp(
        &self,
        g: &mut Graph,
        output: Var,
        targets: &[Tensor],
        layout: &FrameLayout,
    ) -> Result<(Var, Vec<(&'static str, Var)>)> {
        let stacked = targets
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let gt = g.concat_rows(&stacked)?;
        let rows = g.shape(gt).0;
        let mut parts = Vec::new();
        match layout.mode {
            OutputMode::Cartesian => {
                let cols = 3 * layout.num_joints;
                let p = g.slice_cols(output, 0, cols)?;
                let t = g.slice_cols(gt, 0, cols)?;
                parts.push(("mse_joints", diff::mse_joints(g, p, t)?));
            }
            OutputMode::Quaternion => {
                let qcols = 4 * layout.num_bones();
                let p = g.slice_cols(output, 0, qcols)?;
                let p = g.reshape(p, rows * layout.num_bones(), 4)?;
                let p = g.normalize_rows(p)?;
                let t = g.slice_cols(gt, 0, qcols)?;
                let t = g.reshape(t, rows * layout.num_bones(), 4)?;
                parts.push(("geodesic", diff::geodesic_loss(g, p, t)?));
                let pr = g.slice_cols(output, qcols, 3)?;
                let tr = g.slice_cols(gt, qcols, 3)?;
                parts.push(("root", diff::root_loss(g, pr, tr)?));
            }
        }
        if let Some(c) = layout.counter_col() {
            let p = g.slice_cols(output, c, 1)?;
            let t = g.slice_cols(gt, c, 1)?;
            let d = g.sub(p, t)?;
            let sq = g.square(d)?;
            parts.push(("counter", g.mean(sq)?));
        }
        let mut slp = parts[0].1;
        for &(_, v) in &parts[1..] {
            slp = g.add(slp, v)?;
        }
        Ok((slp, parts))
    }

    /// Scalar value of `term` for a batch, with no dropout.
    pub fn evaluate(&self, model: &Model, batch: &[&Prepared], term: Term) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.build(model, &mut g, batch, None)?;
        let v = match term {
            Term::Slp => l.slp,
            Term::Total => l.total,
            Term::Contrastive => l
                .contrastive
                .ok_or_else(|| Error::InvalidArgument("no contrastive term configured".into()))?,
        };
        Ok(g.value(v).item())
    }
}
