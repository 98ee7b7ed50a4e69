use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::prepare;
use super::Dataset;
use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::losses::{cosine_matrix, SentenceEmbeddingBatch};
use crate::metrics::{default_body_parts, evaluate_sample, MetricsReport, SampleMetrics};
use crate::model::{Model, Motion, SampleInput};
use crate::rotation::{decode, encode, RotationSequence};
use crate::skeleton::{PoseSequence, Skeleton};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report: MetricsReport,
    pub samples: Vec<SampleMetrics>,
}

/// A motion in both representations.
pub fn motion_views(motion: Motion, skeleton: &Skeleton) -> Result<(PoseSequence, RotationSequence)> {
    match motion {
        Motion::Pose(p) => {
            let r = encode(&p, skeleton)?;
            Ok((p, r))
        }
        Motion::Rotation(r) => Ok((decode(&r, skeleton)?, r)),
    }
}

/// Metrics for ready-made (prediction, ground truth) pose pairs.
pub fn evaluate_pairs(
    pairs: &[(PoseSequence, PoseSequence)],
    skeleton: &Skeleton,
    alpha: f64,
    per_part: bool,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptySequence("evaluation set"));
    }
    let parts = if per_part {
        default_body_parts(skeleton)
    } else {
        Vec::new()
    };
    let samples = pairs
        .par_iter()
        .map(|(pred, gt)| {
            let pr = encode(pred, skeleton)?;
            let gr = encode(gt, skeleton)?;
            evaluate_sample((pred, &pr), (gt, &gr), skeleton, alpha, &parts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        report: MetricsReport::aggregate(&samples)?,
        samples,
    })
}

/// Generate every sample from its glosses and score it against the ground truth.
pub fn evaluate(model: &Model, dataset: &Dataset, alpha: f64, per_part: bool) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptySequence("evaluation set"));
    }
    if model.config().num_joints != dataset.skeleton.num_joints() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint expects {} joints but the dataset skeleton has {}",
            model.config().num_joints,
            dataset.skeleton.num_joints()
        )));
    }
    let sk = &dataset.skeleton;
    let parts = if per_part { default_body_parts(sk) } else { Vec::new() };
    let layout = model.config().layout();
    let results = dataset
        .samples
        .par_iter()
        .map(|s| {
            let generated = model.generate(&s.glosses)?;
            let (pp, pr) = motion_views(layout.to_motion(&generated.frames)?, sk)?;
            let gr = encode(&s.pose, sk)?;
            let m = evaluate_sample((&pp, &pr), (&s.pose, &gr), sk, alpha, &parts)?;
            Ok((m, generated.truncated))
        })
        .collect::<Result<Vec<_>>>()?;
    let truncated = results.iter().filter(|r| r.1).count();
    let samples: Vec<SampleMetrics> = results.into_iter().map(|r| r.0).collect();
    let mut report = MetricsReport::aggregate(&samples)?;
    report.truncated = truncated;
    Ok(EvalReport { report, samples })
}

/// Pearson correlation of two equally long samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("pearson", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("pearson of a constant sample".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn upper_triangle(m: &Tensor) -> Vec<f64> {
    let n = m.rows();
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| m.get(i, j))
        .collect()
}

/// Correlation between the pairwise cosine similarities of the final decoder
/// layer's projected latents (teacher-forced) and those of the sentence embeddings.
pub fn sentence_alignment(model: &Model, dataset: &Dataset) -> Result<f64> {
    let prepared = prepare(dataset, &model.config().layout())?;
    let rows = prepared
        .iter()
        .map(|p| {
            p.sentence
                .clone()
                .ok_or_else(|| Error::InvalidArgument("sample has no sentence embedding".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let sentences = SentenceEmbeddingBatch::from_rows(&rows)?;
    let inputs: Vec<SampleInput> = prepared
        .iter()
        .map(|p| SampleInput {
            glosses: &p.glosses,
            frames: &p.inputs,
        })
        .collect();
    let mut g = Graph::new();
    let out = model.forward(&mut g, &inputs, None, true)?;
    let last = *out
        .projected
        .as_deref()
        .and_then(<[_]>::last)
        .expect("projection requested");
    let sim = cosine_matrix(g.value(last));
    pearson(&upper_triangle(&sim), &upper_triangle(&sentences.similarity_matrix()))
}
