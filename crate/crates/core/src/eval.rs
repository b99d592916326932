//! Evaluation protocols: latent linear probes, cross-modal coherence and
//! importance-sampled log-likelihood.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barycenter::{subsets, BarycenterError, SubsetIndex};
use crate::data::MultimodalDataset;
use crate::diffgraph::Tensor;
use crate::gaussian::{log_sum_exp, DiagGaussian, GaussianError};
use crate::mmvae::{GenerationNoise, MmvaeError, MultimodalVae};
use crate::rng::SplitRng;

pub const PROBE_L2: f64 = 1e-3;
pub const PROBE_ITERS: usize = 500;
pub const PROBE_TRAIN_SAMPLES: usize = 500;
pub const DEFAULT_IS_SAMPLES: usize = 512;
/// Rows decoded at once by the importance sampler.
const IS_CHUNK_ROWS: usize = 4096;
const GENERATION_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty evaluation set")]
    Empty,
    #[error("feature dim mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{latents} feature rows for {labels} labels")]
    CountMismatch { latents: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("probe needs every one of {classes} classes present, found {present}")]
    DegenerateLabels { present: usize, classes: usize },
    #[error("no reference classifier for modality {0}")]
    MissingClassifier(usize),
    #[error("importance sample count must be >= 1")]
    NoSamples,
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error(transparent)]
    Mmvae(#[from] MmvaeError),
    #[error(transparent)]
    Barycenter(#[from] BarycenterError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

/// Multinomial logistic regression `argmax_c (W x + b)_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// `C x dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub dim: usize,
    pub trained_on: usize,
}

impl LinearProbe {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(c, b)| b + dot(&self.weight[c * self.dim..(c + 1) * self.dim], x))
            .collect()
    }

    /// Highest-scoring class; ties go to the lower class id.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        best
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits a probe by full-batch gradient descent on the L2-regularized
/// cross-entropy (bias unregularized).
///
/// Features are standardized internally and the scaling is folded back into
/// the returned weights. The step is `1 / L` with `L` the curvature bound
/// `½ λ_max(ZᵀZ / n) + l2` of the standardized design, so the run is
/// monotone and deterministic.
pub fn fit_linear_probe(
    latents: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    l2: f64,
    iters: usize,
) -> Result<LinearProbe, EvalError> {
    let n = latents.len();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    if labels.len() != n {
        return Err(EvalError::CountMismatch {
            latents: n,
            labels: labels.len(),
        });
    }
    let dim = latents[0].len();
    if let Some(row) = latents.iter().find(|r| r.len() != dim) {
        return Err(EvalError::DimMismatch {
            expected: dim,
            got: row.len(),
        });
    }
    let mut present = vec![false; num_classes];
    for &y in labels {
        if y >= num_classes {
            return Err(EvalError::BadLabel {
                label: y,
                classes: num_classes,
            });
        }
        present[y] = true;
    }
    let present = present.iter().filter(|p| **p).count();
    if present < num_classes || num_classes < 2 {
        return Err(EvalError::DegenerateLabels {
            present,
            classes: num_classes,
        });
    }
    if latents.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EvalError::NumericFailure("non-finite probe feature".into()));
    }

    let nf = n as f64;
    let mut mu = vec![0.0; dim];
    for row in latents {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v / nf;
        }
    }
    let mut sd = vec![0.0; dim];
    for row in latents {
        for ((s, v), m) in sd.iter_mut().zip(row).zip(&mu) {
            *s += (v - m).powi(2) / nf;
        }
    }
    for s in &mut sd {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let z: Vec<Vec<f64>> = latents
        .iter()
        .map(|r| r.iter().zip(&mu).zip(&sd).map(|((v, m), s)| (v - m) / s).collect())
        .collect();

    let step = 1.0 / (0.5 * design_top_eigenvalue(&z) + l2);
    let c = num_classes;
    let mut w = vec![0.0; c * dim];
    let mut b = vec![0.0; c];
    let mut gw = vec![0.0; c * dim];
    let mut gb = vec![0.0; c];
    let mut p = vec![0.0; c];
    for _ in 0..iters {
        gw.iter_mut().for_each(|v| *v = 0.0);
        gb.iter_mut().for_each(|v| *v = 0.0);
        for (x, &y) in z.iter().zip(labels) {
            for k in 0..c {
                p[k] = b[k] + dot(&w[k * dim..(k + 1) * dim], x);
            }
            let lse = log_sum_exp(&p);
            for k in 0..c {
                let r = ((p[k] - lse).exp() - f64::from(u8::from(k == y))) / nf;
                gb[k] += r;
                for (g, xv) in gw[k * dim..(k + 1) * dim].iter_mut().zip(x) {
                    *g += r * xv;
                }
            }
        }
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= step * (g + l2 * *wv);
        }
        for (bv, g) in b.iter_mut().zip(&gb) {
            *bv -= step * g;
        }
    }

    // fold the standardization into the weights
    let mut weight = vec![0.0; c * dim];
    let mut bias = b;
    for k in 0..c {
        for j in 0..dim {
            let wj = w[k * dim + j] / sd[j];
            weight[k * dim + j] = wj;
            bias[k] -= wj * mu[j];
        }
    }
    if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
        return Err(EvalError::NumericFailure("probe weights diverged".into()));
    }
    Ok(LinearProbe {
        weight,
        bias,
        dim,
        trained_on: n,
    })
}

/// Largest eigenvalue of `[Z 1]ᵀ[Z 1] / n` by power iteration.
fn design_top_eigenvalue(z: &[Vec<f64>]) -> f64 {
    let n = z.len() as f64;
    let dim = z[0].len() + 1;
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut lambda = 1.0;
    for _ in 0..100 {
        let mut next = vec![0.0; dim];
        for row in z {
            let proj = dot(&row[..], &v[..dim - 1]) + v[dim - 1];
            for (o, x) in next.iter_mut().zip(row.iter().chain(std::iter::once(&1.0))) {
                *o += proj * x / n;
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm;
        v = next.into_iter().map(|x| x / norm).collect();
    }
    // power iteration approaches from below; pad so the step stays safe
    1.05 * lambda
}

/// Fraction of rows whose predicted class equals the label.
pub fn latent_accuracy(probe: &LinearProbe, latents: &[Vec<f64>], labels: &[usize]) -> Result<f64, EvalError> {
    if latents.is_empty() {
        return Err(EvalError::Empty);
    }
    if labels.len() != latents.len() {
        return Err(EvalError::CountMismatch {
            latents: latents.len(),
            labels: labels.len(),
        });
    }
    let mut hits = 0usize;
    for (x, &y) in latents.iter().zip(labels) {
        if x.len() != probe.dim {
            return Err(EvalError::DimMismatch {
                expected: probe.dim,
                got: x.len(),
            });
        }
        hits += usize::from(probe.predict(x) == y);
    }
    Ok(hits as f64 / latents.len() as f64)
}

/// Aggregated-posterior means over `subset` for the given examples (prior
/// component of powerset mixtures excluded).
pub fn latent_means(
    vae: &MultimodalVae,
    data: &MultimodalDataset,
    indices: &[usize],
    subset: SubsetIndex,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(GENERATION_CHUNK) {
        let batch = data.batch(chunk);
        out.extend(vae.observed_posteriors(&batch, subset)?.iter().map(|p| p.mean()));
    }
    Ok(out)
}

/// Reference classifiers on raw modality data, one per modality.
pub fn fit_reference_classifiers(
    data: &MultimodalDataset,
    l2: f64,
    iters: usize,
) -> Result<Vec<LinearProbe>, EvalError> {
    (0..data.num_modalities())
        .map(|m| {
            let rows: Vec<Vec<f64>> = (0..data.len()).map(|i| data.example(m, i).to_vec()).collect();
            fit_linear_probe(&rows, &data.labels, data.num_classes, l2, iters)
        })
        .collect()
}

/// Deterministic choice of up to `count` example indices.
fn pick_examples(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if count < len {
        SplitRng::new(seed).split(0).shuffle(&mut idx);
        idx.truncate(count);
        idx.sort_unstable();
    }
    idx
}

/// Fraction of `target` generations from `source` classified as the label of
/// the source example.
pub fn coherence(
    vae: &MultimodalVae,
    references: &[LinearProbe],
    data: &MultimodalDataset,
    source: SubsetIndex,
    target: usize,
    num_samples: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    let reference = references.get(target).ok_or(EvalError::MissingClassifier(target))?;
    let picked = pick_examples(data.len(), num_samples, seed);
    if picked.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut rng = SplitRng::new(seed).split(1);
    let mut hits = 0usize;
    for chunk in picked.chunks(GENERATION_CHUNK) {
        let batch = data.batch(chunk);
        let noise = GenerationNoise::draw(&mut rng, chunk.len(), vae.latent_dim());
        let generated = vae.conditional_generate(&batch, source, target, &noise)?;
        for (r, &y) in batch.labels.iter().enumerate() {
            hits += usize::from(reference.predict(generated.row_slice(r)) == y);
        }
    }
    Ok(hits as f64 / picked.len() as f64)
}

/// Importance-sampled `log p(X)` per example (mean, nats), with the proposal
/// aggregated over `subset` and the likelihood taken over every modality.
pub fn test_log_likelihood(
    vae: &MultimodalVae,
    data: &MultimodalDataset,
    indices: &[usize],
    subset: SubsetIndex,
    k: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::NoSamples);
    }
    if indices.is_empty() {
        return Err(EvalError::Empty);
    }
    let batch = data.batch(indices);
    let posts = vae.joint_posteriors(&batch, subset)?;
    let prior = vae.prior();
    let d = vae.latent_dim();
    let mut rng = SplitRng::new(seed);
    let mut total = 0.0;
    for (i, q) in posts.iter().enumerate() {
        let comps = q.components();
        let mut log_w = Vec::with_capacity(k);
        let mut start = 0;
        while start < k {
            let rows = (k - start).min(IS_CHUNK_ROWS);
            let mut zdata = Vec::with_capacity(rows * d);
            let mut base = Vec::with_capacity(rows);
            for _ in 0..rows {
                let u = rng.uniform();
                let eps = rng.normals(d);
                let c = pick_component(&comps, u);
                let z = c.sample(&eps)?;
                base.push(prior.log_density(&z)? - q.log_density(&z)?);
                zdata.extend(z);
            }
            let z = Tensor::new(rows, d, zdata).map_err(MmvaeError::from)?;
            for m in 0..vae.num_modalities() {
                let x = Tensor::new(rows, data.dims()[m], data.example(m, indices[i]).repeat(rows))
                    .map_err(MmvaeError::from)?;
                for (b, ll) in base.iter_mut().zip(vae.log_likelihood_rows(m, &z, &x)?) {
                    *b += ll;
                }
            }
            log_w.extend(base);
            start += rows;
        }
        let est = log_sum_exp(&log_w) - (k as f64).ln();
        if !est.is_finite() {
            return Err(EvalError::NumericFailure(format!(
                "log-likelihood estimate for example {} is {est}",
                indices[i]
            )));
        }
        total += est;
    }
    Ok(total / posts.len() as f64)
}

fn pick_component<'a>(comps: &[(f64, &'a DiagGaussian)], u: f64) -> &'a DiagGaussian {
    let mut acc = 0.0;
    for (w, c) in comps {
        acc += w;
        if u < acc {
            return c;
        }
    }
    comps[comps.len() - 1].1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Training examples for each latent probe.
    pub probe_samples: usize,
    pub probe_l2: f64,
    pub probe_iters: usize,
    /// Test examples per coherence cell.
    pub coherence_samples: usize,
    /// Importance samples `K` per example.
    pub ll_samples: usize,
    /// Test examples for the log-likelihood; 0 skips it.
    pub ll_examples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            probe_samples: PROBE_TRAIN_SAMPLES,
            probe_l2: PROBE_L2,
            probe_iters: PROBE_ITERS,
            coherence_samples: 1000,
            ll_samples: DEFAULT_IS_SAMPLES,
            ll_examples: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub subset: String,
    pub mask: u32,
    pub size: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceScore {
    pub source: String,
    pub mask: u32,
    pub size: usize,
    pub target: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: String,
    pub probe_train_count: usize,
    pub latent_accuracy: Vec<SubsetScore>,
    pub coherence: Vec<CoherenceScore>,
    pub log_likelihood_k: usize,
    pub log_likelihood: Vec<SubsetScore>,
}

impl EvalReport {
    /// Mean latent accuracy per subset size, ascending in size.
    pub fn accuracy_by_size(&self) -> Vec<(usize, f64)> {
        mean_by_size(self.latent_accuracy.iter().map(|s| (s.size, s.value)))
    }

    /// Mean coherence per source-subset size, ascending in size.
    pub fn coherence_by_size(&self) -> Vec<(usize, f64)> {
        mean_by_size(self.coherence.iter().map(|s| (s.size, s.value)))
    }
}

fn mean_by_size(items: impl Iterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut acc: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for (size, v) in items {
        let e = acc.entry(size).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect()
}

/// Full sweep over the non-empty modality subsets.
///
/// Latent accuracy uses one probe per subset, fit on up to
/// `probe_samples` training latents. Coherence is reported for every source
/// subset and every target outside it.
pub fn evaluate(
    vae: &MultimodalVae,
    train: &MultimodalDataset,
    test: &MultimodalDataset,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if train.is_empty() || test.is_empty() {
        return Err(EvalError::Empty);
    }
    let m = vae.num_modalities();
    let references = fit_reference_classifiers(train, cfg.probe_l2, cfg.probe_iters)?;
    let probe_idx = pick_examples(train.len(), cfg.probe_samples, cfg.seed);
    let probe_labels: Vec<usize> = probe_idx.iter().map(|&i| train.labels[i]).collect();
    let test_idx: Vec<usize> = (0..test.len()).collect();
    let ll_idx = pick_examples(test.len(), cfg.ll_examples, cfg.seed.wrapping_add(1));

    let mut accuracy_scores = Vec::new();
    let mut coherence_scores = Vec::new();
    let mut log_likelihood = Vec::new();
    for s in subsets(m)?.into_iter().filter(|s| !s.is_empty()) {
        let train_latents = latent_means(vae, train, &probe_idx, s)?;
        let probe = fit_linear_probe(
            &train_latents,
            &probe_labels,
            train.num_classes,
            cfg.probe_l2,
            cfg.probe_iters,
        )?;
        let test_latents = latent_means(vae, test, &test_idx, s)?;
        accuracy_scores.push(SubsetScore {
            subset: s.to_string(),
            mask: s.0,
            size: s.len(),
            value: latent_accuracy(&probe, &test_latents, &test.labels)?,
        });

        for t in (0..m).filter(|t| !s.contains(*t)) {
            coherence_scores.push(CoherenceScore {
                source: s.to_string(),
                mask: s.0,
                size: s.len(),
                target: t,
                value: coherence(vae, &references, test, s, t, cfg.coherence_samples, cfg.seed)?,
            });
        }

        if cfg.ll_examples > 0 {
            log_likelihood.push(SubsetScore {
                subset: s.to_string(),
                mask: s.0,
                size: s.len(),
                value: test_log_likelihood(vae, test, &ll_idx, s, cfg.ll_samples, cfg.seed)?,
            });
        }
    }
    Ok(EvalReport {
        aggregation: vae.config.aggregation.to_string(),
        probe_train_count: probe_idx.len(),
        latent_accuracy: accuracy_scores,
        coherence: coherence_scores,
        log_likelihood_k: if cfg.ll_examples > 0 { cfg.ll_samples } else { 0 },
        log_likelihood,
    })
}
