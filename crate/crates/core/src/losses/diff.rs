//! The objectives as differentiable graph expressions.
//!
//! Layouts: poses are `frames x 3*joints`, roots `frames x 3`, quaternions
//! one per row (`frames*bones x 4`, `w x y z`), latents one sample per row.

use super::{GlossBatchAnnotation, SentenceEmbeddingBatch, SENTENCE_DIM};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape(g: &Graph, ctx: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::shape(ctx, format!("{sb:?}"), format!("{sa:?}")));
    }
    Ok(())
}

pub fn mse_joints(g: &mut Graph, pred: Var, gt: Var) -> Result<Var> {
    same_shape(g, "mse_joints", pred, gt)?;
    let (frames, cols) = g.shape(pred);
    if cols % 3 != 0 || frames == 0 {
        return Err(Error::shape(
            "mse_joints",
            "frames x 3*joints",
            format!("{frames}x{cols}"),
        ));
    }
    let d = g.sub(pred, gt)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    g.scale(s, 3.0 / (frames * cols) as f64)
}

/// Mean `acos(2 (q' . q)^2 - 1)` with the input clamped `ACOS_EPS` inside `[-1, 1]`.
pub fn geodesic_loss(g: &mut Graph, pred: Var, gt: Var) -> Result<Var> {
    same_shape(g, "geodesic_loss", pred, gt)?;
    if g.shape(pred).1 != 4 {
        return Err(Error::shape("geodesic_loss", "4 columns", g.shape(pred).1));
    }
    let d = g.row_dot(pred, gt)?;
    let d2 = g.square(d)?;
    let c = g.scale(d2, 2.0)?;
    let c = g.offset(c, -1.0)?;
    let angle = g.acos(c)?;
    g.mean(angle)
}

pub fn root_loss(g: &mut Graph, pred: Var, gt: Var) -> Result<Var> {
    same_shape(g, "root_loss", pred, gt)?;
    let frames = g.shape(pred).0;
    let d = g.sub(pred, gt)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    g.scale(s, 1.0 / frames as f64)
}

pub fn gloss_supcon_layer(g: &mut Graph, latents: Var, annotation: &GlossBatchAnnotation, tau: f64) -> Result<Var> {
    super::check_tau(tau)?;
    if g.shape(latents).0 != annotation.len() {
        return Err(Error::shape("gloss_supcon", annotation.len(), g.shape(latents).0));
    }
    let mut terms = Vec::new();
    for anchor in annotation.anchors().iter().filter(|a| a.is_usable()) {
        let zf = g.slice_rows(latents, anchor.reference, 1)?;
        let zf = g.transpose(zf)?;
        let mut lse = |set: &[usize]| -> Result<Var> {
            let rows = g.gather_rows(latents, set)?;
            let s = g.matmul(rows, zf)?;
            let s = g.scale(s, 1.0 / tau)?;
            g.logsumexp(s)
        };
        let pos = lse(&anchor.positives)?;
        let neg = lse(&anchor.negatives)?;
        // -(lse(pos) - ln|A| - lse(neg))
        let t = g.sub(neg, pos)?;
        terms.push(g.offset(t, (anchor.positives.len() as f64).ln())?);
    }
    if terms.is_empty() {
        return g.constant(Tensor::scalar(0.0));
    }
    let all = g.concat_rows(&terms)?;
    g.sum(all)
}

fn layer_mean(g: &mut Graph, terms: Vec<Var>) -> Result<Var> {
    let n = terms.len();
    let all = g.concat_rows(&terms)?;
    let s = g.sum(all)?;
    g.scale(s, 1.0 / n as f64)
}

pub fn gloss_supcon(g: &mut Graph, layers: &[Var], annotation: &GlossBatchAnnotation, tau: f64) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::EmptySequence("latent stack has no layers"));
    }
    let terms = layers
        .iter()
        .map(|&l| gloss_supcon_layer(g, l, annotation, tau))
        .collect::<Result<Vec<_>>>()?;
    layer_mean(g, terms)
}

pub fn sbert_supcon_layer(g: &mut Graph, projected: Var, sentences: &SentenceEmbeddingBatch) -> Result<Var> {
    let (n, d) = g.shape(projected);
    if n != sentences.len() {
        return Err(Error::shape("sbert_supcon", sentences.len(), n));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "sentence contrastive loss needs at least 2 samples".into(),
        ));
    }
    if d != SENTENCE_DIM {
        return Err(Error::shape("projected latents", SENTENCE_DIM, d));
    }
    let target = g.constant(sentences.similarity_matrix())?;
    let mut upper = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            upper.data_mut()[i * n + j] = 1.0;
        }
    }
    let upper = g.constant(upper)?;
    let sim = g.cosine_similarity_matrix(projected)?;
    let diff = g.sub(sim, target)?;
    let sq = g.square(diff)?;
    let masked = g.mul(sq, upper)?;
    let s = g.sum(masked)?;
    g.scale(s, 2.0 / (n * (n - 1)) as f64)
}

pub fn sbert_supcon(g: &mut Graph, layers: &[Var], sentences: &SentenceEmbeddingBatch) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::EmptySequence("projected stack has no layers"));
    }
    let terms = layers
        .iter()
        .map(|&l| sbert_supcon_layer(g, l, sentences))
        .collect::<Result<Vec<_>>>()?;
    layer_mean(g, terms)
}

pub fn total_loss(g: &mut Graph, slp: Var, contrastive: Var, lambda: f64) -> Result<Var> {
    let c = g.scale(contrastive, lambda)?;
    g.add(slp, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{max_relative_error, numerical_gradient, DEFAULT_STEP};
    use crate::losses;
    use crate::rotation::{RotationSequence, UnitQuat};
    use crate::skeleton::{PoseSequence, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grad_error<F>(inputs: &[Tensor], expr: F) -> f64
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone()).unwrap()).collect();
        let l = expr(&mut g, &vars).unwrap();
        let gr = g.backward(l).unwrap();
        let analytic: Vec<Tensor> = vars.iter().map(|v| gr.wrt(*v).unwrap().clone()).collect();
        let numeric = numerical_gradient(
            |xs| {
                let mut g = Graph::new();
                let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone()).unwrap()).collect();
                let l = expr(&mut g, &vars)?;
                Ok(g.value(l).item())
            },
            inputs,
            DEFAULT_STEP,
        )
        .unwrap();
        max_relative_error(&analytic, &numeric)
    }

    fn value<F>(inputs: &[Tensor], expr: F) -> f64
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
        let l = expr(&mut g, &vars).unwrap();
        g.value(l).item()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_quats(rng: &mut ChaCha8Rng, n: usize) -> Vec<UnitQuat> {
        (0..n)
            .map(|_| {
                UnitQuat::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                )
                .unwrap()
            })
            .collect()
    }

    fn quat_tensor(q: &[UnitQuat]) -> Tensor {
        Tensor::from_rows(&q.iter().map(|q| q.to_array().to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn pose_losses_match_direct_values() {
        let mut r = rng(1);
        let a = Tensor::uniform(4, 9, 1.0, &mut r);
        let b = Tensor::uniform(4, 9, 1.0, &mut r);
        let to_seq = |t: &Tensor| {
            PoseSequence::new(
                (0..t.rows())
                    .map(|i| t.row(i).chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
                    .collect(),
            )
            .unwrap()
        };
        let direct = losses::mse_joints(&to_seq(&a), &to_seq(&b)).unwrap();
        let graph = value(&[a.clone(), b.clone()], |g, v| mse_joints(g, v[0], v[1]));
        assert!((direct - graph).abs() < 1e-14);

        let ra = Tensor::uniform(5, 3, 1.0, &mut r);
        let rb = Tensor::uniform(5, 3, 1.0, &mut r);
        let pts = |t: &Tensor| {
            (0..t.rows())
                .map(|i| Vec3::from_row_slice(t.row(i)))
                .collect::<Vec<_>>()
        };
        let direct = losses::root_loss(&pts(&ra), &pts(&rb)).unwrap();
        let graph = value(&[ra, rb], |g, v| root_loss(g, v[0], v[1]));
        assert!((direct - graph).abs() < 1e-14);
    }

    #[test]
    fn geodesic_graph_matches_direct() {
        let mut r = rng(2);
        let a = random_quats(&mut r, 6);
        let b = random_quats(&mut r, 6);
        let seq = |q: &[UnitQuat]| {
            RotationSequence::new(q.chunks(2).map(|c| c.to_vec()).collect(), vec![Vec3::zeros(); 3]).unwrap()
        };
        let direct = losses::geodesic_loss(&seq(&a), &seq(&b)).unwrap();
        let graph = value(&[quat_tensor(&a), quat_tensor(&b)], |g, v| geodesic_loss(g, v[0], v[1]));
        assert!((direct - graph).abs() < 1e-10);
    }

    #[test]
    fn contrastive_graph_matches_direct() {
        let mut r = rng(3);
        let ann = GlossBatchAnnotation::new(vec![vec![0, 1, 1], vec![0], vec![1, 2], vec![2], vec![3, 0]]);
        let z0 = Tensor::uniform(5, 4, 1.0, &mut r);
        let z1 = Tensor::uniform(5, 4, 1.0, &mut r);
        let direct = losses::gloss_supcon(&[z0.clone(), z1.clone()], &ann, 0.7).unwrap();
        let graph = value(&[z0, z1], |g, v| gloss_supcon(g, v, &ann, 0.7));
        assert!((direct - graph).abs() < 1e-12, "{direct} vs {graph}");

        let e = SentenceEmbeddingBatch::new(Tensor::uniform(5, SENTENCE_DIM, 1.0, &mut r)).unwrap();
        let p0 = Tensor::uniform(5, SENTENCE_DIM, 1.0, &mut r);
        let p1 = Tensor::uniform(5, SENTENCE_DIM, 1.0, &mut r);
        let direct = losses::sbert_supcon(&[p0.clone(), p1.clone()], &e).unwrap();
        let graph = value(&[p0, p1], |g, v| sbert_supcon(g, v, &e));
        assert!((direct - graph).abs() < 1e-12);
    }

    #[test]
    fn degenerate_gloss_batch_is_zero() {
        let ann = GlossBatchAnnotation::new(vec![vec![0], vec![0]]);
        let z = Tensor::filled(2, 3, 0.5);
        assert_eq!(value(&[z], |g, v| gloss_supcon_layer(g, v[0], &ann, 1.0)), 0.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut r = rng(4);
        let tol = 1e-4;
        let a = Tensor::uniform(3, 6, 1.0, &mut r);
        let b = Tensor::uniform(3, 6, 1.0, &mut r);
        assert!(grad_error(&[a, b], |g, v| mse_joints(g, v[0], v[1])) <= tol);

        let a = Tensor::uniform(4, 3, 1.0, &mut r);
        let b = Tensor::uniform(4, 3, 1.0, &mut r);
        assert!(grad_error(&[a, b], |g, v| root_loss(g, v[0], v[1])) <= tol);

        // raw quaternions normalized on the graph, as the model does
        let qa = Tensor::uniform(6, 4, 1.0, &mut r);
        let qb = quat_tensor(&random_quats(&mut r, 6));
        let err = grad_error(&[qa, qb], |g, v| {
            let p = g.normalize_rows(v[0])?;
            geodesic_loss(g, p, v[1])
        });
        assert!(err <= tol, "geodesic {err:e}");

        let ann = GlossBatchAnnotation::new(vec![vec![0, 1, 1], vec![0], vec![1, 2], vec![2], vec![3, 0]]);
        let z0 = Tensor::uniform(5, 4, 1.0, &mut r);
        let z1 = Tensor::uniform(5, 4, 1.0, &mut r);
        let err = grad_error(&[z0, z1], |g, v| gloss_supcon(g, v, &ann, 1.0));
        assert!(err <= tol, "gloss {err:e}");

        let e = SentenceEmbeddingBatch::new(Tensor::uniform(4, SENTENCE_DIM, 1.0, &mut r)).unwrap();
        let p = Tensor::uniform(4, SENTENCE_DIM, 1.0, &mut r);
        let err = grad_error(&[p], |g, v| sbert_supcon(g, v, &e));
        assert!(err <= tol, "sbert {err:e}");

        let s = Tensor::scalar(0.7);
        let c = Tensor::scalar(-2.0);
        let err = grad_error(&[s, c], |g, v| total_loss(g, v[0], v[1], 1e-4));
        assert!(err <= tol);
    }
}
