//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use baryvae::barycenter::{SubsetIndex, WeightedFamily};
use baryvae::data::{gen_toy, Modality, MultimodalBatch, MultimodalDataset, ToyConfig};
use baryvae::diffgraph::{grad_check, Graph, GraphError, ParamStore, Tensor, Var};
use baryvae::eval::test_log_likelihood;
use baryvae::gaussian::{DiagGaussian, FullGaussian, GaussianMixture, SIGMA_FLOOR};
use baryvae::linalg::SymMatrix;
use baryvae::mmvae::{Aggregation, ElboNoise, Likelihood, ModelConfig, MultimodalVae, GAUSSIAN_LIKELIHOOD_SIGMA};
use baryvae::rng::SplitRng;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Mean in [-3, 3], sigma in [e^-1, e].
pub fn rand_diag(r: &mut ChaCha8Rng, d: usize) -> DiagGaussian {
    let mean = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
    let sigma = (0..d).map(|_| r.random_range(-1.0f64..1.0).exp()).collect();
    DiagGaussian::new(mean, sigma).unwrap()
}

pub fn rand_weights(r: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

pub fn rand_family(r: &mut ChaCha8Rng, d: usize, m: usize) -> WeightedFamily {
    let members = (0..m).map(|_| rand_diag(r, d)).collect();
    let weights = rand_weights(r, m);
    WeightedFamily::new(members, weights).unwrap()
}

/// `B Bᵀ / d + 0.1 I` with standard-normal `B`.
pub fn rand_spd(r: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    let b: Vec<f64> = (0..d * d).map(|_| normal(r)).collect();
    spd_from(&b, d)
}

pub fn spd_from(b: &[f64], d: usize) -> SymMatrix {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let dot: f64 = (0..d).map(|k| b[i * d + k] * b[j * d + k]).sum();
            a[i * d + j] = dot / d as f64 + if i == j { 0.1 } else { 0.0 };
        }
    }
    SymMatrix::new(d, a).unwrap()
}

pub fn rand_full(r: &mut ChaCha8Rng, d: usize) -> FullGaussian {
    let mean = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
    FullGaussian::new(mean, rand_spd(r, d)).unwrap()
}

/// Random orthogonal matrix (row-major) by Gram-Schmidt.
pub fn rand_orthogonal(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut ok = true;
        for _ in 0..d {
            let mut v: Vec<f64> = (0..d).map(|_| normal(r)).collect();
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(c) {
                    *x -= dot * y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            cols.push(v.iter().map(|x| x / norm).collect());
        }
        if ok {
            let mut q = vec![0.0; d * d];
            for (j, c) in cols.iter().enumerate() {
                for i in 0..d {
                    q[i * d + j] = c[i];
                }
            }
            return q;
        }
    }
}

pub fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[j * d + i] = a[i * d + j];
        }
    }
    out
}

/// `Q A Qᵀ`.
pub fn conjugate(q: &[f64], a: &[f64], d: usize) -> Vec<f64> {
    matmul(&matmul(q, a, d), &transpose(q, d), d)
}

pub fn frobenius_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Trapezoid nodes covering every listed 1-D Gaussian out to 14 sigma.
pub fn quadrature_window(gs: &[&DiagGaussian]) -> (f64, f64) {
    gs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| {
        (
            lo.min(g.mean()[0] - 14.0 * g.sigma()[0]),
            hi.max(g.mean()[0] + 14.0 * g.sigma()[0]),
        )
    })
}

/// `∫ p (log p − log q)` by the trapezoid rule with `n` nodes on `[lo, hi]`.
pub fn quad_kl(log_p: impl Fn(f64) -> f64, log_q: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / (n - 1) as f64;
    let mut acc = 0.0;
    for k in 0..n {
        let x = lo + k as f64 * h;
        let lp = log_p(x);
        let p = lp.exp();
        if p == 0.0 {
            continue;
        }
        let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        acc += w * p * (lp - log_q(x));
    }
    acc * h
}

/// `∫ f` by the trapezoid rule.
pub fn quad(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| {
            let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            w * f(lo + k as f64 * h)
        })
        .sum::<f64>()
        * h
}

pub fn log_pdf_1d(g: &DiagGaussian) -> impl Fn(f64) -> f64 + '_ {
    move |x| g.log_density(&[x]).unwrap()
}

pub fn log_pdf_mix(g: &GaussianMixture) -> impl Fn(f64) -> f64 + '_ {
    move |x| g.log_density(&[x]).unwrap()
}

/// Forward KL `KL(p ‖ q)` between 1-D Gaussians by quadrature.
pub fn quad_kl_gauss(p: &DiagGaussian, q: &DiagGaussian) -> f64 {
    let (lo, hi) = quadrature_window(&[p, q]);
    quad_kl(log_pdf_1d(p), log_pdf_1d(q), lo, hi, 40_001)
}

/// Small toy dataset: `m` modalities, `per_class` examples per digit.
pub fn toy(m: usize, per_class: usize, seed: u64) -> MultimodalDataset {
    gen_toy(&ToyConfig {
        num_modalities: m,
        examples_per_class: per_class,
        noise: 0.05,
        seed,
        ..ToyConfig::default()
    })
    .unwrap()
}

/// Parameters `a` (3x4), `b` (3x4), `c` (4x2) and `r` (1x4), with entries
/// bounded away from zero so relu and division stay smooth under the probe step.
pub fn grad_store(seed: u64) -> ParamStore {
    let mut r = rng(seed);
    let mut s = ParamStore::new();
    for (name, rows, cols) in [("a", 3, 4), ("b", 3, 4), ("c", 4, 2), ("r", 1, 4)] {
        let data = (0..rows * cols)
            .map(|_| {
                let x: f64 = r.random_range(0.2..1.5);
                if r.random_bool(0.5) {
                    -x
                } else {
                    x
                }
            })
            .collect();
        s.insert(name, Tensor::new(rows, cols, data).unwrap()).unwrap();
    }
    s
}

/// Reduces any node to a scalar with fixed, non-uniform weights.
pub fn project(g: &mut Graph<'_>, v: Var) -> Result<Var, GraphError> {
    let [r, c] = g.shape(v);
    let w = Tensor::new(r, c, (0..r * c).map(|k| 0.3 + 0.1 * k as f64).collect())?;
    let wi = g.input(w);
    let p = g.mul(v, wi)?;
    Ok(g.sum(p))
}

/// Three modalities of widths 6, 5 and 4, one hidden layer, latent 3.
pub fn small_vae(aggregation: Aggregation, likelihood: Likelihood) -> MultimodalVae {
    let mut cfg = ModelConfig::new(vec![6, 5, 4], aggregation);
    cfg.hidden = vec![7];
    cfg.latent_dim = 3;
    cfg.likelihood = likelihood;
    cfg.seed = 5;
    MultimodalVae::new(cfg).unwrap()
}

pub fn elbo_batch() -> MultimodalBatch {
    let mut r = rng(21);
    let rows = 4;
    let inputs = [6, 5, 4]
        .iter()
        .map(|&d| Tensor::new(rows, d, (0..rows * d).map(|_| r.random_range(0.0..1.0)).collect()).unwrap())
        .collect();
    MultimodalBatch {
        inputs,
        labels: vec![0; rows],
    }
}

/// Gradient-check error of the ELBO of `vae` on [`elbo_batch`] with frozen noise.
pub fn elbo_grad_error(vae: &MultimodalVae, subset: SubsetIndex, step: f64) -> f64 {
    let batch = elbo_batch();
    let mut r = SplitRng::new(4);
    let noise = ElboNoise::draw(&mut r, vae.noise_components(subset), batch.len(), vae.latent_dim());
    let build = |g: &mut Graph<'_>| {
        vae.elbo_graph(g, &batch, subset, &noise)
            .map(|n| n.loss)
            .map_err(|e| GraphError::Shape(e.to_string()))
    };
    grad_check(&vae.params, build, step).unwrap()
}

fn set_param(vae: &mut MultimodalVae, name: &str, v: f64) {
    vae.params.get_mut(name).unwrap().data_mut()[0] = v;
}

/// One 1-D modality decoded linearly with Gaussian noise, so `p(x)` is exact.
pub struct Conjugate {
    pub vae: MultimodalVae,
    pub data: MultimodalDataset,
    pub w: f64,
    pub b: f64,
}

impl Conjugate {
    /// With `exact_proposal` the encoder outputs the true posterior; otherwise
    /// a shifted and widened one.
    pub fn new(exact_proposal: bool) -> Self {
        let (w, b) = (1.3, 0.4);
        let s2 = GAUSSIAN_LIKELIHOOD_SIGMA.powi(2);
        let mut cfg = ModelConfig::new(vec![1], Aggregation::Wb);
        cfg.hidden = vec![];
        cfg.latent_dim = 1;
        cfg.likelihood = Likelihood::Gaussian;
        let mut vae = MultimodalVae::new(cfg).unwrap();
        set_param(&mut vae, "dec0.out.w", w);
        set_param(&mut vae, "dec0.out.b", b);
        // exact posterior: mean w (x - b) / (w² + s²), variance s² / (w² + s²)
        let gain = w / (w * w + s2);
        let post_sigma = (s2 / (w * w + s2)).sqrt();
        let (mw, mb, sig) = if exact_proposal {
            (gain, -gain * b, post_sigma)
        } else {
            (0.5 * gain, 0.3, 1.6 * post_sigma)
        };
        set_param(&mut vae, "enc0.mu.w", mw);
        set_param(&mut vae, "enc0.mu.b", mb);
        set_param(&mut vae, "enc0.sigma.w", 0.0);
        // softplus(b) + floor = sig
        set_param(&mut vae, "enc0.sigma.b", (sig - SIGMA_FLOOR).exp_m1().ln());
        let xs = vec![-1.5, -0.2, 0.4, 1.1, 2.7];
        let n = xs.len();
        let modality = Modality {
            name: "x".into(),
            dim: 1,
            data: xs,
        };
        let data = MultimodalDataset::new(vec![modality], vec![0; n], 1).unwrap();
        Self { vae, data, w, b }
    }

    /// Mean closed-form `log p(x)` with `x ~ N(b, w² + s²)`.
    pub fn exact(&self) -> f64 {
        let var = self.w * self.w + GAUSSIAN_LIKELIHOOD_SIGMA.powi(2);
        let xs = &self.data.modalities[0].data;
        xs.iter()
            .map(|x| -0.5 * ((x - self.b).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln()))
            .sum::<f64>()
            / xs.len() as f64
    }

    pub fn estimate(&self, k: usize, seed: u64) -> f64 {
        let idx: Vec<usize> = (0..self.data.len()).collect();
        test_log_likelihood(&self.vae, &self.data, &idx, SubsetIndex::full(1), k, seed).unwrap()
    }
}
