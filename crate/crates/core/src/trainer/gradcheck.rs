use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{prepare, Objective, Prepared, Term};
use super::{Contrastive, Dataset, GlossLibrary};
use crate::autodiff::check::relative_error;
use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, OutputMode};
use crate::skeleton::Skeleton;

/// Largest acceptable relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Contrastive weight used for the combined-objective checks, large enough
/// that both parts of the gradient matter.
const CHECK_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub mode: OutputMode,
    pub term: String,
    pub max_relative_error: f64,
    /// Parameter holding the worst entry.
    pub worst_parameter: String,
    pub scalars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_relative_error <= self.tolerance)
    }
}

/// Four short samples whose gloss overlaps give three usable contrastive
/// anchors whose terms do not cancel.
pub fn gradcheck_dataset(seed: u64) -> Result<Dataset> {
    let lib = GlossLibrary::new(Skeleton::demo(), 4, seed);
    lib.dataset_for(&[vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 3]], 4)
}

fn analytic(model: &Model, objective: &Objective, batch: &[&Prepared], term: Term) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let l = objective.build(model, &mut g, batch, None)?;
    let v = match term {
        Term::Slp => l.slp,
        Term::Total => l.total,
        Term::Contrastive => l.contrastive.expect("contrastive objective"),
    };
    let grads = g.backward(v)?;
    Ok(g.param_grads(&grads, model.params().len())
        .into_iter()
        .zip(model.params().tensors())
        .map(|(gr, p)| gr.unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
        .collect())
}

fn check_term(
    model: &Model,
    objective: &Objective,
    batch: &[&Prepared],
    term: Term,
    step: f64,
) -> Result<(f64, String, usize)> {
    let grads = analytic(model, objective, batch, term)?;
    let coords: Vec<(usize, usize)> = model
        .params()
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k, i)))
        .collect();
    let errors = coords
        .par_iter()
        .map_init(
            || model.clone(),
            |m, &(k, i)| -> Result<f64> {
                let x = m.params().get(k).data()[i];
                m.params_mut().get_mut(k).data_mut()[i] = x + step;
                let up = objective.evaluate(m, batch, term);
                m.params_mut().get_mut(k).data_mut()[i] = x - step;
                let down = objective.evaluate(m, batch, term);
                m.params_mut().get_mut(k).data_mut()[i] = x;
                let numeric = (up? - down?) / (2.0 * step);
                Ok(relative_error(grads[k].data()[i], numeric))
            },
        )
        .collect::<Result<Vec<f64>>>()?;
    let (worst, err) = errors
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (j, &e)| if e > acc.1 { (j, e) } else { acc });
    let name = model.params().name(coords[worst].0).to_string();
    Ok((err, name, coords.len()))
}

/// Central-difference check of every parameter's gradient, for every loss
/// term in both output modes, on the tiny configuration.
pub fn gradcheck(step: f64, seed: u64) -> Result<GradcheckReport> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid step {step}")));
    }
    let dataset = gradcheck_dataset(seed)?;
    let mut entries = Vec::new();
    for mode in [OutputMode::Cartesian, OutputMode::Quaternion] {
        let config = ModelConfig::tiny(dataset.vocab.len(), dataset.skeleton.num_joints(), mode);
        let model = Model::new(config.clone(), seed)?;
        let prepared = prepare(&dataset, &config.layout())?;
        let batch: Vec<&Prepared> = prepared.iter().collect();
        let slp_name = match mode {
            OutputMode::Cartesian => "mse_joints",
            OutputMode::Quaternion => "geodesic+root",
        };
        let terms = [
            (slp_name, Contrastive::None, Term::Slp),
            ("gloss_contrastive", Contrastive::Gloss, Term::Contrastive),
            ("sentence_contrastive", Contrastive::Sentence, Term::Contrastive),
            ("total_gloss", Contrastive::Gloss, Term::Total),
            ("total_sentence", Contrastive::Sentence, Term::Total),
        ];
        for (name, contrastive, term) in terms {
            let objective = Objective {
                contrastive,
                lambda: CHECK_LAMBDA,
                tau: 1.0,
            };
            let (err, worst, scalars) = check_term(&model, &objective, &batch, term, step)?;
            entries.push(GradcheckEntry {
                mode,
                term: name.to_string(),
                max_relative_error: err,
                worst_parameter: worst,
                scalars,
            });
        }
    }
    Ok(GradcheckReport {
        step,
        tolerance: GRADCHECK_TOLERANCE,
        seed,
        entries,
    })
}
