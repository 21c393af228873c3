//! Evaluation-side metric learning: Euclidean distance matrix, triplet and
//! cross-entropy losses, the batch-all P x K sampler, and the gallery/probe
//! rank-1 protocol. Losses are evaluable functions only; nothing here
//! computes gradients.

use crate::error::{Error, Result};
use crate::model::Embedding;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Labeled matrix of flattened per-sequence feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Tensor,
    pub labels: Vec<u32>,
    pub views: Option<Vec<String>>,
}

impl EmbeddingSet {
    pub fn new(vectors: Tensor, labels: Vec<u32>, views: Option<Vec<String>>) -> Result<Self> {
        if vectors.rank() != 2 {
            return Err(Error::InvalidParameter(format!(
                "embedding set must be rank 2 (n, D), got {:?}",
                vectors.dims()
            )));
        }
        let n = vectors.dims()[0];
        if labels.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{n} vectors but {} labels",
                labels.len()
            )));
        }
        if let Some(v) = &views {
            if v.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "{n} vectors but {} view tags",
                    v.len()
                )));
            }
        }
        Ok(EmbeddingSet {
            vectors,
            labels,
            views,
        })
    }

    /// Flattens (bins, d_out) embeddings into rows of one matrix.
    pub fn from_embeddings(embeddings: &[Embedding]) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::InvalidParameter("empty embedding list".into()));
        }
        let d: usize = embeddings[0].values.elem_count();
        let mut data = Vec::with_capacity(embeddings.len() * d);
        let mut labels = Vec::with_capacity(embeddings.len());
        let mut views = Vec::with_capacity(embeddings.len());
        for e in embeddings {
            if e.values.elem_count() != d {
                return Err(Error::shape_mismatch(
                    e.values.dims(),
                    embeddings[0].values.dims(),
                    "embedding dims in set",
                ));
            }
            data.extend_from_slice(e.values.data());
            labels.push(e.label.unwrap_or(0));
            views.push(e.view.clone().unwrap_or_default());
        }
        EmbeddingSet::new(
            Tensor::new(&[embeddings.len(), d], data)?,
            labels,
            Some(views),
        )
    }

    pub fn len(&self) -> usize {
        self.vectors.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.dims()[1]
    }

    fn row(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.vectors.data()[i * d..(i + 1) * d]
    }
}

/// Batch composition for batch-all sampling: P classes, K samples each.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    pub frames_per_clip: usize,
    pub margin: f32,
}

impl SamplerConfig {
    /// P = K = 8, T = 30, margin 0.2.
    pub fn preset() -> Self {
        SamplerConfig {
            classes_per_batch: 8,
            samples_per_class: 8,
            frames_per_clip: 30,
            margin: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes_per_batch == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidParameter("P and K must be >= 1".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    acc.sqrt()
}

/// d[i][j] = L2 distance between row i of a and row j of b.
pub fn euclidean_distance_matrix(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<Tensor> {
    if a.dim() != b.dim() {
        return Err(Error::shape_mismatch(
            a.vectors.dims(),
            b.vectors.dims(),
            "embedding dims",
        ));
    }
    let (na, nb) = (a.len(), b.len());
    let mut data = Vec::with_capacity(na * nb);
    for i in 0..na {
        for j in 0..nb {
            data.push(l2_distance(a.row(i), b.row(j)) as f32);
        }
    }
    Tensor::new(&[na, nb], data)
}

/// max(d_pos - d_neg + margin, 0)
pub fn triplet_loss(d_pos: f64, d_neg: f64, margin: f64) -> Result<f64> {
    if margin < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "margin must be non-negative, got {margin}"
        )));
    }
    if d_pos < 0.0 || d_neg < 0.0 {
        return Err(Error::InvalidParameter(
            "distances must be non-negative".into(),
        ));
    }
    Ok((d_pos - d_neg + margin).max(0.0))
}

/// Enumerates every (anchor, positive, negative) triple in the set; returns
/// the mean over triples with positive loss (0.0 when none is active) and
/// the fraction of such triples.
pub fn batch_all_triplet_loss(e: &EmbeddingSet, margin: f64) -> Result<(f64, f64)> {
    let n = e.len();
    let mut total = 0.0f64;
    let mut active = 0usize;
    let mut triples = 0usize;
    for a in 0..n {
        for p in 0..n {
            if p == a || e.labels[p] != e.labels[a] {
                continue;
            }
            let d_pos = l2_distance(e.row(a), e.row(p));
            for neg in 0..n {
                if e.labels[neg] == e.labels[a] {
                    continue;
                }
                triples += 1;
                let d_neg = l2_distance(e.row(a), e.row(neg));
                let loss = triplet_loss(d_pos, d_neg, margin)?;
                if loss > 0.0 {
                    total += loss;
                    active += 1;
                }
            }
        }
    }
    if triples == 0 {
        return Err(Error::InvalidParameter(
            "no valid triple: need >= 2 classes and a class with >= 2 samples".into(),
        ));
    }
    let mean = if active == 0 { 0.0 } else { total / active as f64 };
    Ok((mean, active as f64 / triples as f64))
}

/// Mean of -log softmax(logits)[label], stabilized by max subtraction.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.rank() != 2 {
        return Err(Error::InvalidParameter(format!(
            "logits must be rank 2 (n, classes), got {:?}",
            logits.dims()
        )));
    }
    let [n, classes] = *logits.dims() else {
        unreachable!()
    };
    if labels.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        if label >= classes {
            return Err(Error::InvalidParameter(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let log_sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        total += -(row[label] as f64 - max - log_sum);
    }
    Ok(total / n as f64)
}

/// Draws a P x K batch: exactly P distinct classes, K indices per class,
/// deterministic for a given seed. Classes with fewer than K samples are
/// sampled with replacement.
pub fn sample_batch(labels_pool: &[u32], cfg: &SamplerConfig, seed: u64) -> Result<Vec<usize>> {
    cfg.validate()?;
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels_pool.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let p = cfg.classes_per_batch;
    let k = cfg.samples_per_class;
    if by_class.len() < p {
        return Err(Error::InvalidParameter(format!(
            "need {p} classes, pool has {}",
            by_class.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<u32> = by_class.keys().copied().collect();
    classes.shuffle(&mut rng);
    classes.truncate(p);

    let mut batch = Vec::with_capacity(p * k);
    for class in classes {
        let members = &by_class[&class];
        if members.len() >= k {
            let mut pool = members.clone();
            pool.shuffle(&mut rng);
            batch.extend_from_slice(&pool[..k]);
        } else {
            for _ in 0..k {
                batch.push(members[rng.gen_range(0..members.len())]);
            }
        }
    }
    Ok(batch)
}

/// Fraction of probes whose nearest gallery neighbor shares their label.
/// Ties break toward the lowest gallery index; with `exclude_same_view`,
/// gallery entries carrying the probe's view tag are skipped.
pub fn rank1_accuracy(
    gallery: &EmbeddingSet,
    probe: &EmbeddingSet,
    exclude_same_view: bool,
) -> Result<f64> {
    if gallery.is_empty() || probe.is_empty() {
        return Err(Error::InvalidParameter(
            "gallery and probe must be non-empty".into(),
        ));
    }
    if gallery.dim() != probe.dim() {
        return Err(Error::shape_mismatch(
            gallery.vectors.dims(),
            probe.vectors.dims(),
            "embedding dims",
        ));
    }
    if exclude_same_view && (gallery.views.is_none() || probe.views.is_none()) {
        return Err(Error::InvalidParameter(
            "same-view exclusion requires view tags on both sets".into(),
        ));
    }
    let mut correct = 0usize;
    for i in 0..probe.len() {
        let probe_view = probe.views.as_ref().map(|v| v[i].as_str());
        let mut best: Option<(f64, usize)> = None;
        for j in 0..gallery.len() {
            if exclude_same_view {
                let gv = gallery.views.as_ref().unwrap()[j].as_str();
                if Some(gv) == probe_view {
                    continue;
                }
            }
            let d = l2_distance(probe.row(i), gallery.row(j));
            let better = match best {
                None => true,
                Some((bd, _)) => d < bd,
            };
            if better {
                best = Some((d, j));
            }
        }
        let Some((_, j)) = best else {
            return Err(Error::InvalidParameter(format!(
                "probe {i} has no gallery candidate after view exclusion"
            )));
        };
        if gallery.labels[j] == probe.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / probe.len() as f64)
}
