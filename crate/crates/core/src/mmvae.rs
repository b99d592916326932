//! Multimodal VAE with pluggable barycentric aggregation.
//!
//! One Gaussian encoder and one decoder per modality. The unimodal posteriors
//! are combined by one of the barycenter aggregators, a latent is drawn with
//! the reparameterization trick, and every observed modality is decoded from
//! it. For mixture posteriors the KL term is replaced by its Jensen upper bound
//! `Σ_k λ_k KL(q_k ‖ p)`, and reconstruction is estimated with one sample per
//! mixture component (stratified), weighted by `λ_k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barycenter::{self, subsets_within, BarycenterError, SubsetIndex, WeightedFamily};
use crate::data::{MultimodalBatch, MultimodalDataset};
use crate::diffgraph::{adam_step, AdamConfig, Graph, GraphError, ParamStore, Tensor, Var};
use crate::gaussian::{DiagGaussian, GaussianError, GaussianMixture, Posterior, SIGMA_FLOOR};
use crate::rng::{RngState, SplitRng};

/// Observation noise of the fixed-variance Gaussian likelihood.
pub const GAUSSIAN_LIKELIHOOD_SIGMA: f64 = 0.75;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum MmvaeError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("modality {modality}: expected input dim {expected}, got {got}")]
    DimMismatch {
        modality: usize,
        expected: usize,
        got: usize,
    },
    #[error("aggregation {0} needs a non-empty subset")]
    EmptySubset(Aggregation),
    #[error("modality {0} is not part of the model")]
    UnknownModality(usize),
    #[error("expected {expected} noise tensors of shape {rows}x{cols}, got {got}")]
    NoiseShape {
        expected: usize,
        rows: usize,
        cols: usize,
        got: String,
    },
    #[error("numeric failure in {term}{context}")]
    NumericFailure { term: String, context: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Barycenter(#[from] BarycenterError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

/// How unimodal posteriors are combined into the joint posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Poe,
    Moe,
    Mopoe,
    Wb,
    Mwb,
}

impl Aggregation {
    pub const ALL: [Aggregation; 5] = [
        Aggregation::Poe,
        Aggregation::Moe,
        Aggregation::Mopoe,
        Aggregation::Wb,
        Aggregation::Mwb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Poe => "poe",
            Aggregation::Moe => "moe",
            Aggregation::Mopoe => "mopoe",
            Aggregation::Wb => "wb",
            Aggregation::Mwb => "mwb",
        }
    }

    /// True when the joint posterior is a mixture.
    pub fn is_mixture(self) -> bool {
        matches!(self, Aggregation::Moe | Aggregation::Mopoe | Aggregation::Mwb)
    }

    /// Number of joint-posterior components over `subset`.
    pub fn num_components(self, subset: SubsetIndex) -> usize {
        match self {
            Aggregation::Poe | Aggregation::Wb => 1,
            Aggregation::Moe => subset.len(),
            Aggregation::Mopoe | Aggregation::Mwb => 1 << subset.len(),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Aggregation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown aggregation `{s}` (expected poe, moe, mopoe, wb or mwb)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Likelihood {
    /// Bernoulli with logits; targets in `[0, 1]`.
    Bernoulli,
    /// Gaussian with fixed standard deviation [`GAUSSIAN_LIKELIHOOD_SIGMA`].
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dims: Vec<usize>,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub likelihood: Likelihood,
    pub aggregation: Aggregation,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults for the given modality input sizes.
    pub fn new(input_dims: Vec<usize>, aggregation: Aggregation) -> Self {
        Self {
            input_dims,
            latent_dim: 16,
            hidden: vec![128, 128],
            likelihood: Likelihood::Bernoulli,
            aggregation,
            beta: 2.5,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            seed: 0,
        }
    }

    pub fn num_modalities(&self) -> usize {
        self.input_dims.len()
    }

    pub fn validate(&self) -> Result<(), MmvaeError> {
        let m = self.num_modalities();
        if m == 0 || m > barycenter::MAX_MODALITIES {
            return Err(MmvaeError::Config(format!(
                "need between 1 and {} modalities, got {m}",
                barycenter::MAX_MODALITIES
            )));
        }
        if self.input_dims.contains(&0) {
            return Err(MmvaeError::Config("input dims must be positive".into()));
        }
        if self.latent_dim == 0 {
            return Err(MmvaeError::Config("latent_dim must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(MmvaeError::Config("hidden sizes must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(MmvaeError::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MmvaeError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(MmvaeError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// The model: parameters plus the configuration that shaped them.
#[derive(Debug, Clone)]
pub struct MultimodalVae {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Position of the training noise stream when training stopped.
    pub rng_state: Option<RngState>,
}

/// One component of a joint posterior inside a graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphComponent {
    pub weight: f64,
    pub mean: Var,
    pub sigma: Var,
    /// The component is the fixed prior (empty subset of a powerset mixture).
    pub is_prior: bool,
}

/// Joint posterior built from graph nodes; one component for poe/wb.
#[derive(Debug, Clone)]
pub struct GraphPosterior {
    pub components: Vec<GraphComponent>,
}

/// Graph nodes of one ELBO evaluation.
#[derive(Debug, Clone)]
pub struct ElboNodes {
    /// Batch-mean loss (negative ELBO).
    pub loss: Var,
    /// Batch-mean reconstruction log-likelihood, per observed modality.
    pub recon: Vec<(usize, Var)>,
    /// Batch-mean KL term (upper bound for mixtures).
    pub kl: Var,
}

/// Scalar values of one ELBO evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboTerms {
    pub loss: f64,
    /// `(modality, mean log-likelihood)` for the observed modalities.
    pub recon: Vec<(usize, f64)>,
    pub kl: f64,
}

/// Standard-normal draws, one `B x d` tensor per joint-posterior component.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    pub per_component: Vec<Tensor>,
}

impl ElboNoise {
    pub fn draw(rng: &mut SplitRng, components: usize, batch: usize, latent: usize) -> Self {
        Self {
            per_component: (0..components)
                .map(|_| Tensor::new(batch, latent, rng.normals(batch * latent)).expect("sized"))
                .collect(),
        }
    }

    pub fn zeros(components: usize, batch: usize, latent: usize) -> Self {
        Self {
            per_component: vec![Tensor::zeros(batch, latent); components],
        }
    }
}

/// Noise for conditional generation: a standard-normal `B x d` tensor and one
/// uniform per example that picks the mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationNoise {
    pub normal: Tensor,
    pub uniform: Vec<f64>,
}

impl GenerationNoise {
    /// Normal draws plus stratified uniforms `(π(i) + U_i) / B`.
    pub fn draw(rng: &mut SplitRng, batch: usize, latent: usize) -> Self {
        let normal = Tensor::new(batch, latent, rng.normals(batch * latent)).expect("sized");
        let mut strata: Vec<usize> = (0..batch).collect();
        rng.shuffle(&mut strata);
        let uniform = strata
            .into_iter()
            .map(|s| (s as f64 + rng.uniform()) / batch as f64)
            .collect();
        Self { normal, uniform }
    }

    pub fn zeros(batch: usize, latent: usize) -> Self {
        Self {
            normal: Tensor::zeros(batch, latent),
            uniform: vec![0.0; batch],
        }
    }
}

/// Per-epoch training metrics (batch-size weighted means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub recon: Vec<f64>,
    pub kl: f64,
}

fn enc_name(m: usize, layer: &str) -> String {
    format!("enc{m}.{layer}")
}

fn dec_name(m: usize, layer: &str) -> String {
    format!("dec{m}.{layer}")
}

impl MultimodalVae {
    /// Fresh model with Glorot-uniform weights drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, MmvaeError> {
        config.validate()?;
        let mut rng = SplitRng::new(config.seed).split(0);
        let mut params = ParamStore::new();
        let d = config.latent_dim;
        for (m, &dim) in config.input_dims.iter().enumerate() {
            let mut width = dim;
            for (k, &h) in config.hidden.iter().enumerate() {
                params.insert_dense(&enc_name(m, &format!("h{k}")), width, h, rng.inner())?;
                width = h;
            }
            params.insert_dense(&enc_name(m, "mu"), width, d, rng.inner())?;
            params.insert_dense(&enc_name(m, "sigma"), width, d, rng.inner())?;

            let mut width = d;
            for (k, &h) in config.hidden.iter().enumerate() {
                params.insert_dense(&dec_name(m, &format!("h{k}")), width, h, rng.inner())?;
                width = h;
            }
            params.insert_dense(&dec_name(m, "out"), width, dim, rng.inner())?;
        }
        Ok(Self {
            config,
            params,
            rng_state: None,
        })
    }

    pub fn num_modalities(&self) -> usize {
        self.config.num_modalities()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn prior(&self) -> DiagGaussian {
        DiagGaussian::standard(self.config.latent_dim)
    }

    fn check_subset(&self, subset: SubsetIndex) -> Result<(), MmvaeError> {
        subset.check(self.num_modalities())?;
        Ok(())
    }

    fn check_input(&self, m: usize, x: &Tensor) -> Result<(), MmvaeError> {
        let expected = *self.config.input_dims.get(m).ok_or(MmvaeError::UnknownModality(m))?;
        if x.cols() != expected {
            return Err(MmvaeError::DimMismatch {
                modality: m,
                expected,
                got: x.cols(),
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &MultimodalBatch, subset: SubsetIndex) -> Result<(), MmvaeError> {
        self.check_subset(subset)?;
        for m in subset.members() {
            let x = batch.inputs.get(m).ok_or(MmvaeError::UnknownModality(m))?;
            self.check_input(m, x)?;
            if x.rows() != batch.len() {
                return Err(MmvaeError::Config(format!(
                    "modality {m} has {} rows for {} labels",
                    x.rows(),
                    batch.len()
                )));
            }
        }
        Ok(())
    }

    /// Encoder `m` inside a graph: `(μ, σ)` with `σ = softplus(·) + σ_floor`.
    pub fn encoder_graph(&self, g: &mut Graph<'_>, m: usize, x: Var) -> Result<(Var, Var), GraphError> {
        let mut h = x;
        for k in 0..self.config.hidden.len() {
            let w = g.param(&enc_name(m, &format!("h{k}.w")))?;
            let b = g.param(&enc_name(m, &format!("h{k}.b")))?;
            let pre = g.linear(h, w, b)?;
            h = g.relu(pre);
        }
        let (wm, bm) = (g.param(&enc_name(m, "mu.w"))?, g.param(&enc_name(m, "mu.b"))?);
        let mean = g.linear(h, wm, bm)?;
        let (ws, bs) = (g.param(&enc_name(m, "sigma.w"))?, g.param(&enc_name(m, "sigma.b"))?);
        let pre = g.linear(h, ws, bs)?;
        let sp = g.softplus(pre);
        let sigma = g.add_scalar(sp, SIGMA_FLOOR);
        Ok((mean, sigma))
    }

    /// Decoder `m` inside a graph: logits (bernoulli) or means (gaussian).
    pub fn decoder_graph(&self, g: &mut Graph<'_>, m: usize, z: Var) -> Result<Var, GraphError> {
        let mut h = z;
        for k in 0..self.config.hidden.len() {
            let w = g.param(&dec_name(m, &format!("h{k}.w")))?;
            let b = g.param(&dec_name(m, &format!("h{k}.b")))?;
            let pre = g.linear(h, w, b)?;
            h = g.relu(pre);
        }
        let (w, b) = (g.param(&dec_name(m, "out.w"))?, g.param(&dec_name(m, "out.b"))?);
        g.linear(h, w, b)
    }

    /// Elementwise `log p(x | decoder output)`.
    pub fn log_likelihood_graph(&self, g: &mut Graph<'_>, out: Var, x: Var) -> Result<Var, GraphError> {
        match self.config.likelihood {
            Likelihood::Bernoulli => {
                // x·l − softplus(l)
                let xl = g.mul(x, out)?;
                let sp = g.softplus(out);
                g.sub(xl, sp)
            }
            Likelihood::Gaussian => {
                let s = GAUSSIAN_LIKELIHOOD_SIGMA;
                let diff = g.sub(x, out)?;
                let sq = g.square(diff);
                let scaled = g.scale(sq, -0.5 / (s * s));
                Ok(g.add_scalar(scaled, -s.ln() - 0.5 * LN_2PI))
            }
        }
    }

    /// Combines per-modality `(μ, σ)` nodes over `subset`.
    ///
    /// `posts[m]` must be present for every `m` in `subset`. With
    /// `include_prior`, powerset mixtures keep the empty-subset prior component.
    pub fn aggregate_graph(
        &self,
        g: &mut Graph<'_>,
        posts: &[Option<(Var, Var)>],
        subset: SubsetIndex,
        rows: usize,
        include_prior: bool,
    ) -> Result<GraphPosterior, MmvaeError> {
        let method = self.config.aggregation;
        if subset.is_empty() {
            return Err(MmvaeError::EmptySubset(method));
        }
        let d = self.config.latent_dim;
        let pick = |m: usize| posts.get(m).copied().flatten().ok_or(MmvaeError::UnknownModality(m));
        let members: Vec<(Var, Var)> = subset.members().map(pick).collect::<Result<_, _>>()?;

        let components = match method {
            Aggregation::Poe => {
                let (mean, sigma) = poe_graph(g, &members)?;
                vec![single(mean, sigma)]
            }
            Aggregation::Wb => {
                let (mean, sigma) = wb_graph(g, &members)?;
                vec![single(mean, sigma)]
            }
            Aggregation::Moe => {
                let w = 1.0 / members.len() as f64;
                members
                    .iter()
                    .map(|&(mean, sigma)| GraphComponent {
                        weight: w,
                        mean,
                        sigma,
                        is_prior: false,
                    })
                    .collect()
            }
            Aggregation::Mopoe | Aggregation::Mwb => {
                let all = subsets_within(SubsetIndex(((1u64 << members.len()) - 1) as u32));
                let kept: Vec<SubsetIndex> = all.into_iter().filter(|s| include_prior || !s.is_empty()).collect();
                let w = 1.0 / kept.len() as f64;
                let mut out = Vec::with_capacity(kept.len());
                for s in kept {
                    if s.is_empty() {
                        let mean = g.constant(rows, d, 0.0);
                        let sigma = g.constant(rows, d, 1.0);
                        out.push(GraphComponent {
                            weight: w,
                            mean,
                            sigma,
                            is_prior: true,
                        });
                        continue;
                    }
                    let sub: Vec<(Var, Var)> = s.members().map(|k| members[k]).collect();
                    let (mean, sigma) = if method == Aggregation::Mopoe {
                        poe_graph(g, &sub)?
                    } else {
                        wb_graph(g, &sub)?
                    };
                    out.push(GraphComponent {
                        weight: w,
                        mean,
                        sigma,
                        is_prior: false,
                    });
                }
                out
            }
        };
        Ok(GraphPosterior { components })
    }

    /// Number of noise tensors [`MultimodalVae::elbo`] needs for `subset`.
    pub fn noise_components(&self, subset: SubsetIndex) -> usize {
        self.config.aggregation.num_components(subset)
    }

    fn check_noise(&self, noise: &ElboNoise, subset: SubsetIndex, rows: usize) -> Result<(), MmvaeError> {
        let expected = self.noise_components(subset);
        let d = self.config.latent_dim;
        let ok = noise.per_component.len() == expected && noise.per_component.iter().all(|t| t.shape() == [rows, d]);
        if !ok {
            return Err(MmvaeError::NoiseShape {
                expected,
                rows,
                cols: d,
                got: format!(
                    "{:?}",
                    noise.per_component.iter().map(Tensor::shape).collect::<Vec<_>>()
                ),
            });
        }
        Ok(())
    }

    /// Builds the negative ELBO over the observed `subset` into `g`.
    ///
    /// Only modalities in `subset` are encoded and reconstructed.
    pub fn elbo_graph(
        &self,
        g: &mut Graph<'_>,
        batch: &MultimodalBatch,
        subset: SubsetIndex,
        noise: &ElboNoise,
    ) -> Result<ElboNodes, MmvaeError> {
        self.check_batch(batch, subset)?;
        let rows = batch.len();
        self.check_noise(noise, subset, rows)?;
        let m_total = self.num_modalities();

        let mut inputs = vec![None; m_total];
        let mut posts = vec![None; m_total];
        for m in subset.members() {
            let x = g.input(batch.inputs[m].clone());
            inputs[m] = Some(x);
            posts[m] = Some(self.encoder_graph(g, m, x)?);
        }
        let joint = self.aggregate_graph(g, &posts, subset, rows, true)?;

        // KL term: Σ_k λ_k KL(q_k ‖ N(0, I)), summed over latent dims
        let mut kl_terms = Vec::with_capacity(joint.components.len());
        for c in &joint.components {
            if c.is_prior {
                continue;
            }
            let kl = kl_to_standard_graph(g, c.mean, c.sigma)?;
            kl_terms.push((c.weight, kl));
        }
        let kl_total = if kl_terms.is_empty() {
            g.constant(1, 1, 0.0)
        } else {
            g.weighted_sum(&kl_terms)?
        };
        let kl = g.scale(kl_total, 1.0 / rows as f64);

        // one reparameterized sample per component, decoded in a single stacked pass
        let mut zs = Vec::with_capacity(joint.components.len());
        for (c, eps) in joint.components.iter().zip(&noise.per_component) {
            let e = g.input(eps.clone());
            let se = g.mul(c.sigma, e)?;
            zs.push(g.add(c.mean, se)?);
        }
        let z = if zs.len() == 1 { zs[0] } else { g.concat_rows(&zs)? };
        let row_weights: Vec<f64> = joint
            .components
            .iter()
            .flat_map(|c| std::iter::repeat_n(c.weight / rows as f64, rows))
            .collect();

        let mut recon = Vec::with_capacity(subset.len());
        let mut recon_sum: Option<Var> = None;
        for m in subset.members() {
            let out = self.decoder_graph(g, m, z)?;
            let x = &batch.inputs[m];
            let target = if joint.components.len() == 1 {
                inputs[m].expect("encoded above")
            } else {
                let stacked: Vec<usize> = (0..joint.components.len()).flat_map(|_| 0..rows).collect();
                g.input(x.select_rows(&stacked))
            };
            let ll = self.log_likelihood_graph(g, out, target)?;
            let weights = Tensor::new(
                ll_rows(g, ll),
                x.cols(),
                row_weights
                    .iter()
                    .flat_map(|w| std::iter::repeat_n(*w, x.cols()))
                    .collect(),
            )?;
            let wi = g.input(weights);
            let weighted = g.mul(ll, wi)?;
            let r = g.sum(weighted);
            recon.push((m, r));
            recon_sum = Some(match recon_sum {
                None => r,
                Some(acc) => g.add(acc, r)?,
            });
        }
        let recon_total = recon_sum.expect("subset is non-empty");
        let neg_recon = g.neg(recon_total);
        let beta_kl = g.scale(kl, self.config.beta);
        let loss = g.add(neg_recon, beta_kl)?;
        Ok(ElboNodes { loss, recon, kl })
    }

    /// Negative ELBO and its terms for one batch.
    pub fn elbo(
        &self,
        batch: &MultimodalBatch,
        subset: SubsetIndex,
        noise: &ElboNoise,
    ) -> Result<ElboTerms, MmvaeError> {
        let mut g = Graph::with_params(&self.params);
        let nodes = self.elbo_graph(&mut g, batch, subset, noise)?;
        let terms = read_terms(&g, &nodes);
        check_terms(&terms, "")?;
        Ok(terms)
    }

    /// Unimodal posteriors `[modality][example]` for the modalities in `subset`
    /// (`None` for the others).
    pub fn encode_subset(
        &self,
        batch: &MultimodalBatch,
        subset: SubsetIndex,
    ) -> Result<Vec<Option<Vec<DiagGaussian>>>, MmvaeError> {
        self.check_batch(batch, subset)?;
        let mut g = Graph::with_params(&self.params);
        let mut out = vec![None; self.num_modalities()];
        for m in subset.members() {
            let x = g.input(batch.inputs[m].clone());
            let (mean, sigma) = self.encoder_graph(&mut g, m, x)?;
            let (mv, sv) = (g.value(mean), g.value(sigma));
            let posts = (0..batch.len())
                .map(|i| DiagGaussian::new(mv.row_slice(i).to_vec(), sv.row_slice(i).to_vec()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| MmvaeError::NumericFailure {
                    term: format!("encoder {m}"),
                    context: format!(": {e}"),
                })?;
            out[m] = Some(posts);
        }
        Ok(out)
    }

    /// Unimodal posteriors for every modality, `[modality][example]`.
    pub fn encode(&self, batch: &MultimodalBatch) -> Result<Vec<Vec<DiagGaussian>>, MmvaeError> {
        let all = SubsetIndex::full(self.num_modalities());
        Ok(self
            .encode_subset(batch, all)?
            .into_iter()
            .map(|p| p.expect("full subset"))
            .collect())
    }

    /// Joint posterior per example over the observed `subset`, including the
    /// prior component of powerset mixtures.
    pub fn joint_posteriors(&self, batch: &MultimodalBatch, subset: SubsetIndex) -> Result<Vec<Posterior>, MmvaeError> {
        let enc = self.encode_subset(batch, subset)?;
        (0..batch.len())
            .map(|i| {
                let per_modality: Vec<Option<DiagGaussian>> =
                    enc.iter().map(|p| p.as_ref().map(|v| v[i].clone())).collect();
                aggregate(&per_modality, self.config.aggregation, subset, &self.prior())
            })
            .collect()
    }

    /// Joint posterior per example restricted to data-conditioned components:
    /// the prior component of powerset mixtures is dropped and the remaining
    /// weights renormalized. Used for conditional generation and latent probes.
    pub fn observed_posteriors(
        &self,
        batch: &MultimodalBatch,
        subset: SubsetIndex,
    ) -> Result<Vec<Posterior>, MmvaeError> {
        let joint = self.joint_posteriors(batch, subset)?;
        let method = self.config.aggregation;
        if !matches!(method, Aggregation::Mopoe | Aggregation::Mwb) {
            return Ok(joint);
        }
        joint
            .into_iter()
            .map(|p| match p {
                Posterior::Mixture(mix) => {
                    // ascending-mask order puts the empty subset first
                    let comps = mix.components()[1..].to_vec();
                    let w = 1.0 / comps.len() as f64;
                    let n = comps.len();
                    Ok(Posterior::Mixture(GaussianMixture::new(comps, vec![w; n])?))
                }
                other => Ok(other),
            })
            .collect()
    }

    /// Decodes latents for modality `m`; returns the likelihood mean
    /// (`sigmoid(logits)` or the Gaussian mean).
    pub fn decode_mean(&self, m: usize, z: &Tensor) -> Result<Tensor, MmvaeError> {
        if m >= self.num_modalities() {
            return Err(MmvaeError::UnknownModality(m));
        }
        let mut g = Graph::with_params(&self.params);
        let zi = g.input(z.clone());
        let out = self.decoder_graph(&mut g, m, zi)?;
        let v = g.value(out);
        Ok(match self.config.likelihood {
            Likelihood::Bernoulli => v.map(crate::diffgraph::sigmoid),
            Likelihood::Gaussian => v.clone(),
        })
    }

    /// Row-wise `log p(x_m | z)` summed over the dimensions of modality `m`.
    pub fn log_likelihood_rows(&self, m: usize, z: &Tensor, x: &Tensor) -> Result<Vec<f64>, MmvaeError> {
        self.check_input(m, x)?;
        let mut g = Graph::with_params(&self.params);
        let zi = g.input(z.clone());
        let out = self.decoder_graph(&mut g, m, zi)?;
        let xi = g.input(x.clone());
        let ll = self.log_likelihood_graph(&mut g, out, xi)?;
        let v = g.value(ll);
        Ok((0..v.rows()).map(|r| v.row_slice(r).iter().sum()).collect())
    }

    /// Cross-modal generation of `target` from the `available` modalities.
    pub fn conditional_generate(
        &self,
        inputs: &MultimodalBatch,
        available: SubsetIndex,
        target: usize,
        noise: &GenerationNoise,
    ) -> Result<Tensor, MmvaeError> {
        if target >= self.num_modalities() {
            return Err(MmvaeError::UnknownModality(target));
        }
        if available.is_empty() {
            return Err(MmvaeError::EmptySubset(self.config.aggregation));
        }
        let rows = inputs.len();
        let d = self.latent_dim();
        if noise.normal.shape() != [rows, d] || noise.uniform.len() != rows {
            return Err(MmvaeError::NoiseShape {
                expected: 1,
                rows,
                cols: d,
                got: format!("{:?} + {} uniforms", noise.normal.shape(), noise.uniform.len()),
            });
        }
        let posts = self.observed_posteriors(inputs, available)?;
        let z = sample_posteriors(&posts, noise)?;
        self.decode_mean(target, &z)
    }

    /// Trains a fresh model; deterministic in `config.seed`.
    pub fn train(config: ModelConfig, dataset: &MultimodalDataset) -> Result<(Self, Vec<EpochMetrics>), MmvaeError> {
        let mut vae = Self::new(config)?;
        let history = vae.fit(dataset)?;
        Ok((vae, history))
    }

    /// Runs `config.epochs` epochs of Adam on `dataset`.
    pub fn fit(&mut self, dataset: &MultimodalDataset) -> Result<Vec<EpochMetrics>, MmvaeError> {
        if dataset.dims() != self.config.input_dims {
            return Err(MmvaeError::Config(format!(
                "dataset dims {:?} do not match model input dims {:?}",
                dataset.dims(),
                self.config.input_dims
            )));
        }
        if dataset.is_empty() {
            return Err(MmvaeError::Config("dataset is empty".into()));
        }
        let root = SplitRng::new(self.config.seed);
        let mut order_rng = root.split(1);
        let mut noise_rng = match self.rng_state {
            Some(state) => SplitRng::from_state(state),
            None => root.split(2),
        };
        let adam = AdamConfig {
            lr: self.config.learning_rate,
            ..AdamConfig::default()
        };
        let subset = SubsetIndex::full(self.num_modalities());
        let components = self.noise_components(subset);
        let (m_total, d) = (self.num_modalities(), self.latent_dim());

        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 1..=self.config.epochs {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order_rng.shuffle(&mut order);
            let mut sums = (0.0, vec![0.0; m_total], 0.0);
            for (step, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let batch = dataset.batch(chunk);
                let noise = ElboNoise::draw(&mut noise_rng, components, chunk.len(), d);
                let (terms, grads) = {
                    let mut g = Graph::with_params(&self.params);
                    let nodes = self.elbo_graph(&mut g, &batch, subset, &noise)?;
                    let terms = read_terms(&g, &nodes);
                    check_terms(&terms, &format!(" (epoch {epoch}, step {step})"))?;
                    let back = g.backward(nodes.loss)?;
                    (terms, back.param_grads(&self.params))
                };
                adam_step(&mut self.params, &grads, &adam)?;
                let n = chunk.len() as f64;
                sums.0 += n * terms.loss;
                for (m, r) in &terms.recon {
                    sums.1[*m] += n * r;
                }
                sums.2 += n * terms.kl;
            }
            let n = dataset.len() as f64;
            history.push(EpochMetrics {
                epoch,
                loss: sums.0 / n,
                recon: sums.1.iter().map(|r| r / n).collect(),
                kl: sums.2 / n,
            });
        }
        self.rng_state = Some(noise_rng.state());
        Ok(history)
    }
}

fn single(mean: Var, sigma: Var) -> GraphComponent {
    GraphComponent {
        weight: 1.0,
        mean,
        sigma,
        is_prior: false,
    }
}

fn ll_rows(g: &Graph<'_>, v: Var) -> usize {
    g.shape(v)[0]
}

/// Precision-weighted product with unit exponents.
pub fn poe_graph(g: &mut Graph<'_>, members: &[(Var, Var)]) -> Result<(Var, Var), GraphError> {
    let mut precision: Option<Var> = None;
    let mut weighted: Option<Var> = None;
    for &(mean, sigma) in members {
        let var = g.square(sigma);
        let [r, c] = g.shape(var);
        let one = g.constant(r, c, 1.0);
        let p = g.div(one, var)?;
        let pm = g.mul(p, mean)?;
        precision = Some(match precision {
            None => p,
            Some(acc) => g.add(acc, p)?,
        });
        weighted = Some(match weighted {
            None => pm,
            Some(acc) => g.add(acc, pm)?,
        });
    }
    let precision = precision.ok_or_else(|| GraphError::Shape("product of no experts".into()))?;
    let weighted = weighted.expect("same length as precision");
    let mean = g.div(weighted, precision)?;
    let [r, c] = g.shape(precision);
    let one = g.constant(r, c, 1.0);
    let var = g.div(one, precision)?;
    let sigma = g.sqrt(var);
    Ok((mean, sigma))
}

/// Diagonal Wasserstein barycenter with uniform weights.
pub fn wb_graph(g: &mut Graph<'_>, members: &[(Var, Var)]) -> Result<(Var, Var), GraphError> {
    let w = 1.0 / members.len() as f64;
    let means: Vec<(f64, Var)> = members.iter().map(|&(m, _)| (w, m)).collect();
    let sigmas: Vec<(f64, Var)> = members.iter().map(|&(_, s)| (w, s)).collect();
    Ok((g.weighted_sum(&means)?, g.weighted_sum(&sigmas)?))
}

/// `Σ ½(μ² + σ² − 1) − log σ` over all entries (batch total).
pub fn kl_to_standard_graph(g: &mut Graph<'_>, mean: Var, sigma: Var) -> Result<Var, GraphError> {
    let m2 = g.square(mean);
    let s2 = g.square(sigma);
    let a = g.add(m2, s2)?;
    let a = g.add_scalar(a, -1.0);
    let a = g.scale(a, 0.5);
    let ls = g.log(sigma);
    let t = g.sub(a, ls)?;
    Ok(g.sum(t))
}

fn read_terms(g: &Graph<'_>, nodes: &ElboNodes) -> ElboTerms {
    ElboTerms {
        loss: g.value(nodes.loss).item(),
        recon: nodes.recon.iter().map(|(m, v)| (*m, g.value(*v).item())).collect(),
        kl: g.value(nodes.kl).item(),
    }
}

fn check_terms(terms: &ElboTerms, context: &str) -> Result<(), MmvaeError> {
    let fail = |term: String| MmvaeError::NumericFailure {
        term,
        context: context.to_string(),
    };
    if let Some((m, _)) = terms.recon.iter().find(|(_, r)| !r.is_finite()) {
        return Err(fail(format!("reconstruction of modality {m}")));
    }
    if !terms.kl.is_finite() {
        return Err(fail("KL term".into()));
    }
    if !terms.loss.is_finite() {
        return Err(fail("loss".into()));
    }
    Ok(())
}

/// Aggregates per-modality posteriors over `subset` with the given method.
///
/// `posteriors[m]` must be `Some` for every `m` in `subset`; the others are
/// never touched. Powerset mixtures are taken within `subset`.
pub fn aggregate(
    posteriors: &[Option<DiagGaussian>],
    method: Aggregation,
    subset: SubsetIndex,
    prior: &DiagGaussian,
) -> Result<Posterior, MmvaeError> {
    if subset.is_empty() {
        return Err(MmvaeError::EmptySubset(method));
    }
    let members = subset
        .members()
        .map(|m| {
            posteriors
                .get(m)
                .cloned()
                .flatten()
                .ok_or(MmvaeError::UnknownModality(m))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let family = WeightedFamily::uniform(members)?;
    Ok(match method {
        Aggregation::Poe => Posterior::Gaussian(barycenter::poe(&family, &vec![1.0; family.len()])?),
        Aggregation::Wb => Posterior::Gaussian(barycenter::wb_diag(&family)?),
        Aggregation::Moe => Posterior::Mixture(barycenter::moe(&family)?),
        Aggregation::Mopoe => Posterior::Mixture(barycenter::mopoe(&family, prior)?),
        Aggregation::Mwb => Posterior::Mixture(barycenter::mwb(&family, prior)?),
    })
}

/// Draws one latent per posterior: the component is picked by inverse CDF on
/// `noise.uniform[i]`, then `z = μ + σ ⊙ ε` with `ε = noise.normal[i]`.
pub fn sample_posteriors(posts: &[Posterior], noise: &GenerationNoise) -> Result<Tensor, MmvaeError> {
    let d = posts.first().map_or(0, Posterior::dim);
    let mut data = Vec::with_capacity(posts.len() * d);
    for (i, p) in posts.iter().enumerate() {
        let comps = p.components();
        let u = noise.uniform[i];
        let mut acc = 0.0;
        let mut chosen = comps[comps.len() - 1].1;
        for (w, c) in &comps {
            acc += w;
            if u < acc {
                chosen = *c;
                break;
            }
        }
        data.extend(chosen.sample(noise.normal.row_slice(i))?);
    }
    Ok(Tensor::new(posts.len(), d, data)?)
}
