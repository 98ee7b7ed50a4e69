//! Training objectives.
//!
//! The functions here evaluate each loss directly on plain values; [`diff`]
//! builds the same losses on an autodiff [`Graph`](crate::autodiff::Graph)
//! for training.

pub mod diff;

use std::collections::BTreeSet;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rotation::{geodesic_distance, RotationSequence};
use crate::skeleton::{PoseSequence, Vec3};

/// Width of the sentence embeddings the second contrastive variant aligns to.
pub const SENTENCE_DIM: usize = 384;
pub const DEFAULT_TAU: f64 = 1.0;
pub const DEFAULT_GLOSS_LAMBDA: f64 = 1e-4;

/// Mean squared joint distance over all frames and joints.
pub fn mse_joints(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    if pred.len() != gt.len() || pred.num_joints() != gt.num_joints() {
        return Err(Error::shape(
            "mse_joints",
            format!("{}x{}", gt.len(), gt.num_joints()),
            format!("{}x{}", pred.len(), pred.num_joints()),
        ));
    }
    let n = (pred.len() * pred.num_joints()) as f64;
    let s: f64 = pred
        .frames()
        .iter()
        .zip(gt.frames())
        .flat_map(|(a, b)| a.iter().zip(b))
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok(s / n)
}

/// Mean geodesic angle between matching bone rotations, in radians.
pub fn geodesic_loss(pred: &RotationSequence, gt: &RotationSequence) -> Result<f64> {
    if pred.len() != gt.len() || pred.num_bones() != gt.num_bones() {
        return Err(Error::shape(
            "geodesic_loss",
            format!("{}x{}", gt.len(), gt.num_bones()),
            format!("{}x{}", pred.len(), pred.num_bones()),
        ));
    }
    let n = (pred.len() * pred.num_bones()) as f64;
    let s: f64 = pred
        .quats()
        .iter()
        .zip(gt.quats())
        .flat_map(|(a, b)| a.iter().zip(b))
        .map(|(a, b)| geodesic_distance(a, b))
        .sum();
    Ok(s / n)
}

/// Mean squared distance between root trajectories.
pub fn root_loss(pred_root: &[Vec3], gt_root: &[Vec3]) -> Result<f64> {
    if pred_root.len() != gt_root.len() || pred_root.is_empty() {
        return Err(Error::shape("root_loss", gt_root.len(), pred_root.len()));
    }
    let s: f64 = pred_root.iter().zip(gt_root).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok(s / pred_root.len() as f64)
}

/// `slp + lambda * contrastive`.
pub fn total_loss(slp_loss: f64, contrastive_loss: f64, lambda: f64) -> f64 {
    slp_loss + lambda * contrastive_loss
}

/// Gloss token sequences of one batch, used to form contrastive pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlossBatchAnnotation {
    sequences: Vec<Vec<u32>>,
}

/// One gloss of the batch with its reference sequence and pair sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchor {
    pub gloss: u32,
    /// Sequence with the most occurrences of the gloss (lowest index on ties).
    pub reference: usize,
    /// Other sequences containing the gloss.
    pub positives: Vec<usize>,
    /// Sequences not containing the gloss.
    pub negatives: Vec<usize>,
}

impl Anchor {
    /// Anchors with an empty positive or negative set contribute nothing.
    pub fn is_usable(&self) -> bool {
        !self.positives.is_empty() && !self.negatives.is_empty()
    }
}

impl GlossBatchAnnotation {
    pub fn new(sequences: Vec<Vec<u32>>) -> Self {
        GlossBatchAnnotation { sequences }
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Every distinct gloss of the batch, in increasing id order.
    pub fn anchors(&self) -> Vec<Anchor> {
        let glosses: BTreeSet<u32> = self.sequences.iter().flatten().copied().collect();
        glosses
            .into_iter()
            .map(|gloss| {
                let counts: Vec<usize> = self
                    .sequences
                    .iter()
                    .map(|s| s.iter().filter(|&&m| m == gloss).count())
                    .collect();
                let mut reference = 0;
                for (k, &c) in counts.iter().enumerate() {
                    if c > counts[reference] {
                        reference = k;
                    }
                }
                let positives = (0..counts.len()).filter(|&k| counts[k] > 0 && k != reference).collect();
                let negatives = (0..counts.len()).filter(|&k| counts[k] == 0).collect();
                Anchor {
                    gloss,
                    reference,
                    positives,
                    negatives,
                }
            })
            .collect()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Gloss-supervised contrastive loss for one layer's sequence-level latents (`N x d`).
///
/// Per usable anchor the term is
/// `-log( mean_{a in A} exp(z_f . z_a / tau) / sum_{b in B} exp(z_f . z_b / tau) )`;
/// the denominator runs over negatives only.
pub fn gloss_supcon_layer(latents: &Tensor, annotation: &GlossBatchAnnotation, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if latents.rows() != annotation.len() {
        return Err(Error::shape("gloss_supcon", annotation.len(), latents.rows()));
    }
    let mut total = 0.0;
    for anchor in annotation.anchors().iter().filter(|a| a.is_usable()) {
        let zf = latents.row(anchor.reference);
        let sims = |set: &[usize]| set.iter().map(|&k| dot(zf, latents.row(k)) / tau).collect::<Vec<_>>();
        let pos = sims(&anchor.positives);
        let neg = sims(&anchor.negatives);
        let log_ratio = logsumexp(pos.iter().copied()) - (pos.len() as f64).ln() - logsumexp(neg.iter().copied());
        total -= log_ratio;
    }
    Ok(total)
}

/// Mean of [`gloss_supcon_layer`] over decoder layers.
pub fn gloss_supcon(stack: &[Tensor], annotation: &GlossBatchAnnotation, tau: f64) -> Result<f64> {
    if stack.is_empty() {
        return Err(Error::EmptySequence("latent stack has no layers"));
    }
    let mut s = 0.0;
    for layer in stack {
        s += gloss_supcon_layer(layer, annotation, tau)?;
    }
    Ok(s / stack.len() as f64)
}

/// `(x . y) / (|x| |y|)`.
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("cosine_similarity", x.len(), y.len()));
    }
    let nx = dot(x, x).sqrt();
    let ny = dot(y, y).sqrt();
    if !(nx > 0.0) || !(ny > 0.0) {
        return Err(Error::ZeroNorm("cosine_similarity"));
    }
    Ok(dot(x, y) / (nx * ny))
}

/// Sentence embeddings of one batch, one 384-wide row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbeddingBatch {
    embeddings: Tensor,
}

impl SentenceEmbeddingBatch {
    pub fn new(embeddings: Tensor) -> Result<Self> {
        if embeddings.cols() != SENTENCE_DIM {
            return Err(Error::shape("sentence embeddings", SENTENCE_DIM, embeddings.cols()));
        }
        for r in 0..embeddings.rows() {
            let row = embeddings.row(r);
            if !row.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite {
                    op: "sentence embedding",
                });
            }
            if dot(row, row) == 0.0 {
                return Err(Error::ZeroNorm("sentence embedding row"));
            }
        }
        Ok(SentenceEmbeddingBatch { embeddings })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        SentenceEmbeddingBatch::new(Tensor::from_rows(rows)?)
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows() == 0
    }

    /// `N x N` cosine similarity matrix.
    pub fn similarity_matrix(&self) -> Tensor {
        cosine_matrix(&self.embeddings)
    }
}

/// Pairwise cosine similarities of the rows of `m`. Rows must be nonzero.
pub fn cosine_matrix(m: &Tensor) -> Tensor {
    let n = m.rows();
    let norms: Vec<f64> = (0..n).map(|i| dot(m.row(i), m.row(i)).sqrt()).collect();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.data_mut()[i * n + j] = dot(m.row(i), m.row(j)) / (norms[i] * norms[j]);
        }
    }
    out
}

/// Mean squared gap between the projected-latent and sentence-embedding
/// cosine similarities, over unordered pairs `i < j`.
pub fn sbert_supcon_layer(projected: &Tensor, sentences: &SentenceEmbeddingBatch) -> Result<f64> {
    let n = projected.rows();
    if n != sentences.len() {
        return Err(Error::shape("sbert_supcon", sentences.len(), n));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "sentence contrastive loss needs at least 2 samples".into(),
        ));
    }
    if projected.cols() != SENTENCE_DIM {
        return Err(Error::shape("projected latents", SENTENCE_DIM, projected.cols()));
    }
    let s = sentences.similarity_matrix();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_similarity(projected.row(i), projected.row(j))? - s.get(i, j);
            total += d * d;
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Mean of [`sbert_supcon_layer`] over decoder layers.
pub fn sbert_supcon(stack: &[Tensor], sentences: &SentenceEmbeddingBatch) -> Result<f64> {
    if stack.is_empty() {
        return Err(Error::EmptySequence("projected stack has no layers"));
    }
    let mut s = 0.0;
    for layer in stack {
        s += sbert_supcon_layer(layer, sentences)?;
    }
    Ok(s / stack.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::UnitQuat;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn seq(frames: Vec<Vec<[f64; 3]>>) -> PoseSequence {
        PoseSequence::new(
            frames
                .into_iter()
                .map(|f| f.into_iter().map(Vec3::from).collect())
                .collect(),
        )
        .unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng, t: usize, j: usize) -> PoseSequence {
        seq((0..t)
            .map(|_| (0..j).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect())
            .collect())
    }

    #[test]
    fn mse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_pose(&mut rng, 4, 3);
        assert_eq!(mse_joints(&a, &a).unwrap(), 0.0);
        let shifted = a.translated(Vec3::x());
        assert!((mse_joints(&shifted, &a).unwrap() - 1.0).abs() < 1e-12);

        let b = random_pose(&mut rng, 4, 3);
        let mut brute = 0.0;
        for t in 0..4 {
            for j in 0..3 {
                for c in 0..3 {
                    let d = a.frames()[t][j][c] - b.frames()[t][j][c];
                    brute += d * d;
                }
            }
        }
        assert!((mse_joints(&a, &b).unwrap() - brute / 12.0).abs() < 1e-12);
        assert!(mse_joints(&a, &random_pose(&mut rng, 3, 3)).is_err());
    }

    fn rots(q: Vec<Vec<UnitQuat>>) -> RotationSequence {
        let n = q.len();
        RotationSequence::new(q, vec![Vec3::zeros(); n]).unwrap()
    }

    #[test]
    fn geodesic_loss_examples() {
        let id = UnitQuat::IDENTITY;
        let z90 = UnitQuat::from_axis_angle(&Vec3::z(), PI / 2.0).unwrap();
        let a = rots(vec![vec![id]]);
        assert_eq!(geodesic_loss(&a, &a).unwrap(), 0.0);
        let b = rots(vec![vec![z90]]);
        assert!((geodesic_loss(&a, &b).unwrap() - PI / 2.0).abs() < 1e-12);
        let c = rots(vec![vec![id], vec![id]]);
        let d = rots(vec![vec![z90], vec![id]]);
        assert!((geodesic_loss(&c, &d).unwrap() - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn root_loss_examples() {
        let a = vec![Vec3::new(0.1, 0.2, 0.3); 3];
        assert_eq!(root_loss(&a, &a).unwrap(), 0.0);
        let b: Vec<Vec3> = a.iter().map(|p| p + Vec3::x()).collect();
        assert!((root_loss(&b, &a).unwrap() - 1.0).abs() < 1e-12);
        let c: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(3.0, 4.0, 0.0)).collect();
        assert!((root_loss(&c, &a).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(2.0, 3.0, 0.0), 2.0);
        assert!((total_loss(2.0, 3.0, 1e-4) - 2.0003).abs() < 1e-15);
        assert_eq!(DEFAULT_GLOSS_LAMBDA, 1e-4);
        assert_eq!(DEFAULT_TAU, 1.0);
    }

    #[test]
    fn anchors_follow_set_definitions() {
        let ann = GlossBatchAnnotation::new(vec![vec![0, 1], vec![0, 0], vec![1], vec![]]);
        let a = ann.anchors();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].reference, 1);
        assert_eq!(a[0].positives, vec![0]);
        assert_eq!(a[0].negatives, vec![2, 3]);
        assert_eq!(a[1].reference, 0);
        assert_eq!(a[1].positives, vec![2]);
        assert_eq!(a[1].negatives, vec![1, 3]);
    }

    #[test]
    fn gloss_supcon_all_shared_is_zero() {
        let ann = GlossBatchAnnotation::new(vec![vec![0, 1], vec![1, 0], vec![0, 1, 1]]);
        let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(gloss_supcon_layer(&z, &ann, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn gloss_supcon_worked_example() {
        let ann = GlossBatchAnnotation::new(vec![vec![0, 1], vec![0], vec![1]]);
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(gloss_supcon_layer(&z, &ann, 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn gloss_supcon_rejects_bad_tau() {
        let ann = GlossBatchAnnotation::new(vec![vec![0], vec![1]]);
        let z = Tensor::zeros(2, 2);
        assert!(gloss_supcon_layer(&z, &ann, 0.0).is_err());
    }

    #[test]
    fn layer_averaging() {
        let ann = GlossBatchAnnotation::new(vec![vec![0, 1], vec![0], vec![1], vec![2]]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l0 = Tensor::uniform(4, 3, 1.0, &mut rng);
        let l1 = Tensor::uniform(4, 3, 1.0, &mut rng);
        let a = gloss_supcon_layer(&l0, &ann, 1.0).unwrap();
        let b = gloss_supcon_layer(&l1, &ann, 1.0).unwrap();
        assert_eq!(gloss_supcon(std::slice::from_ref(&l0), &ann, 1.0).unwrap(), a);
        assert!((gloss_supcon(&[l0.clone(), l1], &ann, 1.0).unwrap() - (a + b) / 2.0).abs() < 1e-15);
        assert!((gloss_supcon(&[l0.clone(), l0.clone(), l0], &ann, 1.0).unwrap() - a).abs() < 1e-14);
        assert!(gloss_supcon(&[], &ann, 1.0).is_err());
    }

    #[test]
    fn cosine_examples() {
        let x = [1.0, 2.0, -3.0];
        assert!((cosine_similarity(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        let nx: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cosine_similarity(&x, &nx).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine_similarity(&x, &[0.0; 3]).is_err());
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        Tensor::uniform(n, d, 1.0, rng)
    }

    #[test]
    fn sbert_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = random_rows(&mut rng, 4, SENTENCE_DIM);
        let batch = SentenceEmbeddingBatch::new(e.clone()).unwrap();
        assert_eq!(sbert_supcon_layer(&e, &batch).unwrap(), 0.0);

        let mut same = vec![0.0; SENTENCE_DIM];
        same[0] = 1.0;
        let batch = SentenceEmbeddingBatch::from_rows(&[same.clone(), same.clone()]).unwrap();
        let mut other = vec![0.0; SENTENCE_DIM];
        other[1] = 1.0;
        let proj = Tensor::from_rows(&[same, other]).unwrap();
        assert!((sbert_supcon_layer(&proj, &batch).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sentence_batch_validation() {
        assert!(SentenceEmbeddingBatch::new(Tensor::filled(2, 383, 1.0)).is_err());
        assert!(SentenceEmbeddingBatch::new(Tensor::zeros(2, SENTENCE_DIM)).is_err());
    }

    proptest! {
        #[test]
        fn geodesic_loss_sign_flip_invariant(seed in 0u64..1000, flip in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut q = || UnitQuat::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5).unwrap();
            let a = vec![vec![q(), q()], vec![q(), q()], vec![q(), q()]];
            let b = vec![vec![q(), q()], vec![q(), q()], vec![q(), q()]];
            let base = geodesic_loss(&rots(a.clone()), &rots(b.clone())).unwrap();
            let mut fa = a.clone();
            fa[flip / 2][flip % 2] = fa[flip / 2][flip % 2].neg();
            let mut fb = b.clone();
            fb[flip % 3][flip % 2] = fb[flip % 3][flip % 2].neg();
            prop_assert!((geodesic_loss(&rots(fa), &rots(b)).unwrap() - base).abs() < 1e-12);
            prop_assert!((geodesic_loss(&rots(a), &rots(fb)).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn sbert_scale_invariant(seed in 0u64..1000, row in 0usize..5, k in 0.01..100.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_rows(&mut rng, 5, SENTENCE_DIM);
            let e = random_rows(&mut rng, 5, SENTENCE_DIM);
            let base = sbert_supcon_layer(&p, &SentenceEmbeddingBatch::new(e.clone()).unwrap()).unwrap();
            let scale_row = |t: &Tensor| {
                let mut t = t.clone();
                t.data_mut()[row * SENTENCE_DIM..(row + 1) * SENTENCE_DIM].iter_mut().for_each(|x| *x *= k);
                t
            };
            let a = sbert_supcon_layer(&scale_row(&p), &SentenceEmbeddingBatch::new(e.clone()).unwrap()).unwrap();
            let b = sbert_supcon_layer(&p, &SentenceEmbeddingBatch::new(scale_row(&e)).unwrap()).unwrap();
            prop_assert!((a - base).abs() < 1e-12);
            prop_assert!((b - base).abs() < 1e-12);
        }

        #[test]
        fn gloss_supcon_permutation_equivariant(seed in 0u64..500) {
            // unique per-gloss maxima: sample k holds gloss k twice, so f is unambiguous
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 5;
            let seqs: Vec<Vec<u32>> = (0..n)
                .map(|k| {
                    let mut s = vec![k as u32, k as u32];
                    for g in 0..n as u32 {
                        if g != k as u32 && rng.gen_bool(0.4) {
                            s.push(g);
                        }
                    }
                    s
                })
                .collect();
            let z = random_rows(&mut rng, n, 3);
            let base = gloss_supcon_layer(&z, &GlossBatchAnnotation::new(seqs.clone()), 1.0).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left(2);
            perm.swap(0, 3);
            let pseqs: Vec<Vec<u32>> = perm.iter().map(|&i| seqs[i].clone()).collect();
            let pz = Tensor::from_rows(&perm.iter().map(|&i| z.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            let permuted = gloss_supcon_layer(&pz, &GlossBatchAnnotation::new(pseqs), 1.0).unwrap();
            prop_assert!((permuted - base).abs() < 1e-12);
            prop_assert!(base.is_finite());
        }
    }
}
