use std::path::{Path, PathBuf};

use quatsign_core::autodiff::Tensor;
use quatsign_core::dataio::{
    load_embeddings, load_gloss_annotations, load_pose_sequence, load_rotation_sequence, load_skeleton, load_vectors,
    pose_sequence_to_string, rotation_sequence_to_string, save_json, write_atomic, DatasetManifest, EmbeddingTable,
    Vocabulary,
};
use quatsign_core::losses::{self, GlossBatchAnnotation, SentenceEmbeddingBatch};
use quatsign_core::metrics::MetricsReport;
use quatsign_core::model::{load_checkpoint, save_checkpoint, Motion};
use quatsign_core::trainer::{self, log_to_jsonl, motion_views, SweepConfig, SynthSpec};
use quatsign_core::{Contrastive, Dataset, ModelConfig, PoseSequence, RotationSequence, Skeleton, TrainConfig};
use serde::Serialize;

use crate::{
    CodecArgs, EvalArgs, Failure, Format, GradcheckArgs, LossArgs, LossName, Preset, RunArgs, SweepArgs, SynthArgs,
    TrainArgs,
};

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Write to `out`, or to standard output.
fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, why: &str) -> Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| usage(format!("--{flag} is required {why}")))
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

/// A pose or rotation file, told apart by its header.
fn load_motion(path: &Path, skeleton: &Skeleton) -> Result<Motion, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let first = text.lines().next().unwrap_or_default();
    let format = serde_json::from_str::<serde_json::Value>(first)
        .ok()
        .and_then(|v| v.get("format").and_then(|f| f.as_str()).map(str::to_string));
    Ok(match format.as_deref() {
        Some("rotation") => Motion::Rotation(load_rotation_sequence(path, skeleton)?),
        _ => Motion::Pose(load_pose_sequence(path, skeleton)?),
    })
}

fn views(path: &Path, skeleton: &Skeleton) -> Result<(PoseSequence, RotationSequence), Failure> {
    Ok(motion_views(load_motion(path, skeleton)?, skeleton)?)
}

pub fn encode(a: &CodecArgs) -> Outcome {
    let sk = load_skeleton(&a.skeleton)?;
    let pose = load_pose_sequence(&a.input, &sk)?;
    let rot = quatsign_core::encode(&pose, &sk)?;
    emit(a.out.as_deref(), &rotation_sequence_to_string(&rot, &sk)?)
}

pub fn decode(a: &CodecArgs) -> Outcome {
    let sk = load_skeleton(&a.skeleton)?;
    let rot = load_rotation_sequence(&a.input, &sk)?;
    let pose = quatsign_core::decode(&rot, &sk)?;
    emit(a.out.as_deref(), &pose_sequence_to_string(&pose, &sk)?)
}

#[derive(Serialize)]
struct MetricRow<'a> {
    metric: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    part: Option<&'a str>,
    mean: f64,
    std: f64,
    samples: usize,
}

fn metric_rows(r: &MetricsReport) -> Vec<MetricRow<'_>> {
    let row = |metric, part, s: &quatsign_core::metrics::Summary| MetricRow {
        metric,
        part,
        mean: s.mean,
        std: s.std,
        samples: r.count,
    };
    let mut rows = vec![
        row("MJE", None, &r.mje),
        row("MBAE", None, &r.mbae),
        row("PCK", None, &r.pck),
    ];
    for (name, s) in &r.per_part_mje {
        rows.push(row("MJE", Some(name.as_str()), s));
    }
    rows
}

fn metrics_text(r: &MetricsReport, format: Format) -> String {
    let rows = metric_rows(r);
    match format {
        Format::Json => rows
            .iter()
            .map(|row| serde_json::to_string(row).expect("rows serialize") + "\n")
            .collect(),
        Format::Text => {
            let mut out = format!("{:<16} {}\n", "metric", "mean ± std");
            for row in &rows {
                let label = match row.part {
                    Some(p) => format!("{}[{p}]", row.metric),
                    None => row.metric.to_string(),
                };
                out.push_str(&format!("{label:<16} {:.3} ± {:.3}\n", row.mean, row.std));
            }
            out.push_str(&format!("samples {}", r.count));
            if r.truncated > 0 {
                out.push_str(&format!(", {} generations hit max_frames", r.truncated));
            }
            out.push('\n');
            out
        }
    }
}

pub fn eval(a: &EvalArgs) -> Outcome {
    if !(a.alpha > 0.0) || !a.alpha.is_finite() {
        return Err(usage(format!("--alpha must be positive, got {}", a.alpha)));
    }
    let report = if let (Some(ckpt), Some(data)) = (&a.checkpoint, &a.data) {
        let model = load_checkpoint(ckpt)?.model;
        let dataset = DatasetManifest::load(data)?;
        trainer::evaluate(&model, &dataset, a.alpha, a.per_part)?.report
    } else {
        let why = "unless --checkpoint and --data are given";
        let sk = load_skeleton(required(&a.skeleton, "skeleton", why)?)?;
        let (pred, _) = views(required(&a.pred, "pred", why)?, &sk)?;
        let (gt, _) = views(required(&a.gt, "gt", why)?, &sk)?;
        trainer::evaluate_pairs(&[(pred, gt)], &sk, a.alpha, a.per_part)?.report
    };
    emit(a.out.as_deref(), &metrics_text(&report, a.format))
}

/// Rows of `table` reordered to follow `ids`.
fn rows_by_id(table: &EmbeddingTable, ids: &[String], what: &str) -> Result<Tensor, Failure> {
    let mut data = Vec::with_capacity(ids.len() * table.rows.cols());
    for id in ids {
        let row = table
            .row(id)
            .ok_or_else(|| Failure::Data(format!("sample `{id}` has no {what} row")))?;
        data.extend_from_slice(row);
    }
    Ok(Tensor::new(ids.len(), table.rows.cols(), data)?)
}

fn loss_value(a: &LossArgs) -> Result<f64, Failure> {
    let pair_why = "for this loss";
    match a.name {
        LossName::MseJoints | LossName::Geodesic | LossName::Root => {
            let sk = load_skeleton(required(&a.skeleton, "skeleton", pair_why)?)?;
            let (pp, pr) = views(required(&a.pred, "pred", pair_why)?, &sk)?;
            let (gp, gr) = views(required(&a.gt, "gt", pair_why)?, &sk)?;
            Ok(match a.name {
                LossName::MseJoints => losses::mse_joints(&pp, &gp)?,
                LossName::Geodesic => losses::geodesic_loss(&pr, &gr)?,
                _ => losses::root_loss(pr.root_positions(), gr.root_positions())?,
            })
        }
        LossName::GlossSupcon => {
            let latents = load_vectors(required(&a.latents, "latents", pair_why)?, None)?;
            let mut vocab = Vocabulary::new();
            let ann = load_gloss_annotations(required(&a.glosses, "glosses", pair_why)?, &mut vocab)?;
            let sequences = latents
                .sample_ids
                .iter()
                .map(|id| {
                    ann.get(id)
                        .map(<[u32]>::to_vec)
                        .ok_or_else(|| Failure::Data(format!("sample `{id}` has no gloss annotation")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(losses::gloss_supcon(
                &[latents.rows],
                &GlossBatchAnnotation::new(sequences),
                a.tau,
            )?)
        }
        LossName::SbertSupcon => {
            let latents = load_vectors(required(&a.latents, "latents", pair_why)?, None)?;
            let table = load_embeddings(required(&a.embeddings, "embeddings", pair_why)?)?;
            let sentences = SentenceEmbeddingBatch::new(rows_by_id(&table, &latents.sample_ids, "embedding")?)?;
            Ok(losses::sbert_supcon(&[latents.rows], &sentences)?)
        }
    }
}

pub fn loss(a: &LossArgs) -> Outcome {
    if !(a.tau > 0.0) || !a.tau.is_finite() {
        return Err(usage(format!("--tau must be positive, got {}", a.tau)));
    }
    let value = loss_value(a)?;
    if !value.is_finite() {
        return Err(Failure::Numeric(format!("loss is not finite ({value})")));
    }
    let label = clap::ValueEnum::to_possible_value(&a.name)
        .expect("named")
        .get_name()
        .to_string();
    let text = match a.format {
        Format::Text => format!("{label} {value}\n"),
        Format::Json => serde_json::json!({ "loss": label, "value": value }).to_string() + "\n",
    };
    emit(a.out.as_deref(), &text)
}

pub fn synth(a: &SynthArgs) -> Outcome {
    let spec = SynthSpec {
        num_glosses: a.num_glosses,
        num_sequences: a.num_sequences,
        frames_per_sequence: a.frames,
        glosses_per_sequence: a.glosses_per_sequence,
        seed: a.seed,
        ..SynthSpec::default()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let dataset = trainer::synth_dataset(&spec)?;
    create_dir(&a.out)?;
    let manifest = DatasetManifest::write_dataset(&a.out, &dataset)?;
    println!("{}", manifest.display());
    Ok(())
}

fn run_config(
    run: &RunArgs,
    dataset: &Dataset,
    contrastive: Contrastive,
    lambda: Option<f64>,
) -> Result<TrainConfig, Failure> {
    let (vocab, joints) = (dataset.vocab.len(), dataset.skeleton.num_joints());
    let mut model = match run.preset {
        Preset::Tiny => ModelConfig::tiny(vocab, joints, run.mode),
        Preset::Toy => ModelConfig::toy(vocab, joints, run.mode),
        Preset::Full => ModelConfig::full(vocab, joints, run.mode),
    };
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut model.num_layers, run.layers);
    set(&mut model.num_heads, run.heads);
    set(&mut model.embed_dim, run.embed_dim);
    set(&mut model.feedforward_dim, run.ff_dim);
    set(&mut model.max_frames, run.max_frames);
    if let Some(d) = run.dropout {
        model.dropout_rate = d;
    }
    let max = dataset.max_frames();
    if run.max_frames.is_none() && model.max_frames < max {
        model.max_frames = max;
    }
    let mut c = match run.preset {
        Preset::Full => TrainConfig::full(model),
        _ => TrainConfig::toy(model),
    };
    c.contrastive = contrastive;
    c.seed = run.seed;
    if let Some(l) = lambda {
        c.lambda = l;
    }
    if let Some(t) = run.tau {
        c.tau = t;
    }
    set(&mut c.batch_size, run.batch_size);
    set(&mut c.epochs, run.epochs);
    if let Some(lr) = run.learning_rate {
        c.learning_rate = lr;
    }
    if let Some(s) = run.scheduled_sampling {
        c.scheduled_sampling = s;
    }
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

pub fn train(a: &TrainArgs) -> Outcome {
    let dataset = DatasetManifest::load(&a.run.data)?;
    let mut config = run_config(&a.run, &dataset, a.contrastive, a.lambda)?;
    config.eval_every = a.eval_every;
    let outcome = trainer::train(&dataset, &config)?;
    create_dir(&a.out)?;
    save_checkpoint(
        &a.out.join("checkpoint.qsc"),
        &outcome.model,
        config.seed,
        outcome.steps,
    )?;
    write_atomic(&a.out.join("log.jsonl"), log_to_jsonl(&outcome.log).as_bytes())?;
    save_json(&a.out.join("config.json"), &config)?;
    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "{} epochs, {} steps: slp {} contrastive {} total {}",
        config.epochs, outcome.steps, last.slp_loss, last.contrastive_loss, last.total_loss
    );
    println!("checkpoint {}", a.out.join("checkpoint.qsc").display());
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Outcome {
    if !(a.step > 0.0) || !a.step.is_finite() {
        return Err(usage(format!("invalid step {}", a.step)));
    }
    let report = trainer::gradcheck(a.step, a.seed)?;
    let text = match a.format {
        Format::Json => report
            .entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entries serialize") + "\n")
            .collect::<String>(),
        Format::Text => {
            let mut out = format!(
                "{:<11} {:<21} {:>12}  {}\n",
                "mode", "term", "max rel err", "worst parameter"
            );
            for e in &report.entries {
                out.push_str(&format!(
                    "{:<11} {:<21} {:>12.3e}  {}\n",
                    e.mode.to_string(),
                    e.term,
                    e.max_relative_error,
                    e.worst_parameter
                ));
            }
            out.push_str(&format!(
                "max relative error {:.3e} (tolerance {:e}, step {:e}): {}\n",
                report.max_relative_error(),
                report.tolerance,
                report.step,
                if report.passed() { "PASS" } else { "FAIL" }
            ));
            out
        }
    };
    emit(a.out.as_deref(), &text)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "gradient check failed: max relative error {:e} exceeds {:e}",
            report.max_relative_error(),
            report.tolerance
        )))
    }
}

pub fn sweep(a: &SweepArgs) -> Outcome {
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let dataset = DatasetManifest::load(&a.run.data)?;
    let base = run_config(&a.run, &dataset, Contrastive::None, None)?;
    let mut grid = SweepConfig::reference(base);
    grid.jobs = a.jobs;
    if let Some(l) = a.gloss_lambda {
        grid.gloss_lambda = l;
    }
    if let Some(v) = &a.cartesian_lambdas {
        grid.cartesian_sentence_lambdas = v.clone();
    }
    if let Some(v) = &a.quaternion_lambdas {
        grid.quaternion_sentence_lambdas = v.clone();
    }
    if let Some(v) = &a.batch_sizes {
        grid.sentence_batch_sizes = v.clone();
    }
    if let Some(l) = a.batch_sweep_lambda {
        grid.batch_sweep_lambda = l;
    }
    for run in grid.runs() {
        run.validate().map_err(|e| usage(e.to_string()))?;
    }
    let rows = trainer::sweep(&dataset, &grid)?;
    let runs_dir = a.out.join("runs");
    create_dir(&runs_dir)?;
    for (k, r) in rows.iter().enumerate() {
        let name = format!(
            "{k:02}-{}-{}-l{}-b{}.json",
            r.mode, r.contrastive, r.lambda, r.batch_size
        );
        save_json(&runs_dir.join(name), r)?;
    }
    let table = trainer::format_table(&rows);
    let lines: String = rows
        .iter()
        .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
        .collect();
    write_atomic(&a.out.join("table.txt"), table.as_bytes())?;
    write_atomic(&a.out.join("table.jsonl"), lines.as_bytes())?;
    print!(
        "{}",
        match a.format {
            Format::Text => table,
            Format::Json => lines,
        }
    );
    Ok(())
}
