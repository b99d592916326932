//! Gaussian posteriors and the divergences between them.

use std::f64::consts::PI;

use thiserror::Error;

use crate::linalg::{self, LinalgError, SymMatrix};

/// Smallest admissible standard deviation of a diagonal posterior.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Smallest admissible covariance eigenvalue of a full posterior.
pub const COV_EIG_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaussianError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("gaussian must have at least one dimension")]
    Empty,
    #[error("non-finite {field} at index {index}")]
    NonFinite { field: &'static str, index: usize },
    #[error("sigma[{index}] = {value:e} is below the floor {SIGMA_FLOOR:e}")]
    SigmaBelowFloor { index: usize, value: f64 },
    #[error("covariance is not positive definite (smallest eigenvalue {eigenvalue:e})")]
    NotSpd { eigenvalue: f64 },
    #[error("mixture needs at least one component")]
    EmptyMixture,
    #[error("got {weights} weights for {components} components")]
    WeightCount { weights: usize, components: usize },
    #[error("invalid mixture weights: {0}")]
    BadWeights(String),
    #[error("quantile oracle failure: {0}")]
    Oracle(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Diagonal Gaussian `N(mean, diag(sigma²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    sigma: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, sigma: Vec<f64>) -> Result<Self, GaussianError> {
        check_vec("mean", &mean)?;
        check_vec("sigma", &sigma)?;
        if mean.len() != sigma.len() {
            return Err(GaussianError::DimMismatch(mean.len(), sigma.len()));
        }
        if let Some((index, &value)) = sigma.iter().enumerate().find(|(_, s)| **s < SIGMA_FLOOR) {
            return Err(GaussianError::SigmaBelowFloor { index, value });
        }
        Ok(Self { mean, sigma })
    }

    /// Like [`DiagGaussian::new`] but raises sigmas below the floor up to it.
    pub fn floored(mean: Vec<f64>, sigma: Vec<f64>) -> Result<Self, GaussianError> {
        let sigma = sigma.into_iter().map(|s| s.max(SIGMA_FLOOR)).collect();
        Self::new(mean, sigma)
    }

    /// `N(0, I_dim)`.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            sigma: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn variance(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * s).collect()
    }

    pub fn to_full(&self) -> FullGaussian {
        FullGaussian {
            mean: self.mean.clone(),
            cov: SymMatrix::from_diag(&self.variance()).expect("diagonal of a valid gaussian"),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, GaussianError> {
        check_dims(self.dim(), x.len())?;
        Ok(self.log_density_unchecked(x))
    }

    fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = -0.5 * LN_2PI * self.dim() as f64;
        for ((xi, mu), s) in x.iter().zip(&self.mean).zip(&self.sigma) {
            let z = (xi - mu) / s;
            acc -= 0.5 * z * z + s.ln();
        }
        acc
    }

    /// Reparameterized draw `mean + sigma ⊙ noise`.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>, GaussianError> {
        check_dims(self.dim(), noise.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.sigma)
            .zip(noise)
            .map(|((mu, s), e)| mu + s * e)
            .collect())
    }

    /// Differential entropy in nats.
    pub fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (1.0 + LN_2PI) + self.sigma.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Free-function form of [`DiagGaussian::entropy`].
pub fn entropy_diag(g: &DiagGaussian) -> f64 {
    g.entropy()
}

/// Full-covariance Gaussian `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGaussian {
    mean: Vec<f64>,
    cov: SymMatrix,
}

impl FullGaussian {
    pub fn new(mean: Vec<f64>, cov: SymMatrix) -> Result<Self, GaussianError> {
        check_vec("mean", &mean)?;
        if cov.dim() != mean.len() {
            return Err(GaussianError::DimMismatch(mean.len(), cov.dim()));
        }
        let eig = linalg::sym_eig(&cov)?;
        let smallest = eig.values[0];
        if smallest < COV_EIG_FLOOR {
            return Err(GaussianError::NotSpd { eigenvalue: smallest });
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }
}

/// Weighted mixture of diagonal Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<DiagGaussian>,
    weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(components: Vec<DiagGaussian>, weights: Vec<f64>) -> Result<Self, GaussianError> {
        if components.is_empty() {
            return Err(GaussianError::EmptyMixture);
        }
        if weights.len() != components.len() {
            return Err(GaussianError::WeightCount {
                weights: weights.len(),
                components: components.len(),
            });
        }
        check_simplex(&weights)?;
        let dim = components[0].dim();
        for c in &components {
            check_dims(dim, c.dim())?;
        }
        Ok(Self { components, weights })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Weight-averaged component means.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (c, w) in self.components.iter().zip(&self.weights) {
            for (o, m) in out.iter_mut().zip(c.mean()) {
                *o += w * m;
            }
        }
        out
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, GaussianError> {
        check_dims(self.dim(), x.len())?;
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(c, w)| w.ln() + c.log_density_unchecked(x))
            .collect();
        Ok(log_sum_exp(&terms))
    }
}

/// Stable `log Σ exp(v)`; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn check_simplex(weights: &[f64]) -> Result<(), GaussianError> {
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(GaussianError::BadWeights(format!(
            "weight {w} is not a nonnegative finite number"
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(GaussianError::BadWeights(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

fn check_vec(field: &'static str, v: &[f64]) -> Result<(), GaussianError> {
    if v.is_empty() {
        return Err(GaussianError::Empty);
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(GaussianError::NonFinite { field, index });
    }
    Ok(())
}

fn check_dims(a: usize, b: usize) -> Result<(), GaussianError> {
    if a != b {
        return Err(GaussianError::DimMismatch(a, b));
    }
    Ok(())
}

/// Either a single diagonal Gaussian or a mixture of them.
#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    Gaussian(DiagGaussian),
    Mixture(GaussianMixture),
}

impl Posterior {
    pub fn dim(&self) -> usize {
        match self {
            Posterior::Gaussian(g) => g.dim(),
            Posterior::Mixture(m) => m.dim(),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, GaussianError> {
        match self {
            Posterior::Gaussian(g) => g.log_density(x),
            Posterior::Mixture(m) => m.log_density(x),
        }
    }

    /// Mean of the distribution (weighted mean of component means for mixtures).
    pub fn mean(&self) -> Vec<f64> {
        match self {
            Posterior::Gaussian(g) => g.mean().to_vec(),
            Posterior::Mixture(m) => m.mean(),
        }
    }

    /// Components with their weights; a single Gaussian has weight 1.
    pub fn components(&self) -> Vec<(f64, &DiagGaussian)> {
        match self {
            Posterior::Gaussian(g) => vec![(1.0, g)],
            Posterior::Mixture(m) => m.weights().iter().copied().zip(m.components()).collect(),
        }
    }
}

/// `KL(p ‖ q)` between diagonal Gaussians.
pub fn kl_diag(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64, GaussianError> {
    check_dims(p.dim(), q.dim())?;
    let mut acc = 0.0;
    for i in 0..p.dim() {
        let (mp, sp) = (p.mean[i], p.sigma[i]);
        let (mq, sq) = (q.mean[i], q.sigma[i]);
        let d = mp - mq;
        acc += (sq / sp).ln() + (sp * sp + d * d) / (2.0 * sq * sq) - 0.5;
    }
    Ok(acc.max(0.0))
}

/// Squared 2-Wasserstein distance between diagonal Gaussians.
pub fn w2sq_diag(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64, GaussianError> {
    check_dims(p.dim(), q.dim())?;
    let mut acc = 0.0;
    for i in 0..p.dim() {
        let dm = p.mean[i] - q.mean[i];
        let ds = p.sigma[i] - q.sigma[i];
        acc += dm * dm + ds * ds;
    }
    Ok(acc)
}

/// Squared 2-Wasserstein distance between full-covariance Gaussians.
pub fn w2sq_full(p: &FullGaussian, q: &FullGaussian) -> Result<f64, GaussianError> {
    check_dims(p.dim(), q.dim())?;
    let mean_term: f64 = p.mean.iter().zip(&q.mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let root_p = linalg::sqrtm_psd(&p.cov)?;
    let cross = linalg::sqrtm_psd(&SymMatrix::congruence(&root_p, &q.cov)?)?;
    let bures = p.cov.trace() + q.cov.trace() - 2.0 * cross.trace();
    let total = mean_term + bures;
    // rounding in the trace difference can dip just below zero
    Ok(if total < 0.0 && total > -1e-10 {
        0.0
    } else {
        total.max(0.0)
    })
}

/// A univariate distribution with an evaluable CDF, for the quantile oracle.
pub trait Cdf1d {
    fn cdf(&self, x: f64) -> f64;
    /// `1 - cdf(x)`, computed without cancellation in the upper tail.
    fn sf(&self, x: f64) -> f64;
    /// A window containing all but a negligible amount of mass.
    fn support(&self) -> (f64, f64);
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl Cdf1d for DiagGaussian {
    fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf((x - self.mean[0]) / self.sigma[0])
    }

    fn sf(&self, x: f64) -> f64 {
        std_normal_cdf((self.mean[0] - x) / self.sigma[0])
    }

    fn support(&self) -> (f64, f64) {
        (self.mean[0] - 40.0 * self.sigma[0], self.mean[0] + 40.0 * self.sigma[0])
    }
}

impl Cdf1d for GaussianMixture {
    fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.cdf(x))
            .sum()
    }

    fn sf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.sf(x))
            .sum()
    }

    fn support(&self) -> (f64, f64) {
        self.components
            .iter()
            .map(Cdf1d::support)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                (lo.min(a), hi.max(b))
            })
    }
}

/// Number of nodes in the quantile oracle grid.
pub const QUANTILE_GRID: usize = 20001;
/// Probit range covered by the quantile grid; mass outside is below 1e-17.
const PROBIT_RANGE: f64 = 8.5;
const BISECTION_TOL: f64 = 1e-10;

/// Brute-force `W₂² = ∫₀¹ (F_p⁻¹(u) − F_q⁻¹(u))² du` for 1-D distributions.
///
/// Quantile levels are placed at `u = Φ(t)` for `t` on a uniform grid over
/// `[-8.5, 8.5]` and integrated with the trapezoid rule in `t` (weight `φ(t) dt`),
/// so the tails are resolved without truncation bias. Each quantile is found by
/// bisection on the CDF (lower half) or survival function (upper half), starting
/// from the previous node's quantile since quantiles increase along the grid.
pub fn w2sq_1d_quantile<P: Cdf1d + ?Sized, Q: Cdf1d + ?Sized>(p: &P, q: &Q) -> Result<f64, GaussianError> {
    let n = QUANTILE_GRID;
    let h = 2.0 * PROBIT_RANGE / (n - 1) as f64;
    let mut qp = QuantileWalk::new(p);
    let mut qq = QuantileWalk::new(q);
    let mut acc = 0.0;
    for k in 0..n {
        let t = -PROBIT_RANGE + k as f64 * h;
        let xp = qp.next(t)?;
        let xq = qq.next(t)?;
        let weight = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        acc += weight * std_normal_pdf(t) * (xp - xq) * (xp - xq);
    }
    let total = acc * h;
    if !total.is_finite() {
        return Err(GaussianError::Oracle("non-finite quadrature".into()));
    }
    Ok(total)
}

/// Quantiles at increasing levels `Φ(t)`, each bracketed from the last one.
struct QuantileWalk<'a, D: Cdf1d + ?Sized> {
    dist: &'a D,
    window: (f64, f64),
    prev: Option<f64>,
    gap: f64,
}

impl<'a, D: Cdf1d + ?Sized> QuantileWalk<'a, D> {
    fn new(dist: &'a D) -> Self {
        let window = dist.support();
        Self {
            dist,
            window,
            prev: None,
            gap: (window.1 - window.0) * 1e-6,
        }
    }

    fn next(&mut self, t: f64) -> Result<f64, GaussianError> {
        let d = self.dist;
        let (wlo, whi) = self.window;
        // lower half: solve cdf(x) = Φ(t); upper half: solve sf(x) = Φ(-t)
        let upper = t > 0.0;
        let target = std_normal_cdf(if upper { -t } else { t });
        // g is increasing in x in both branches
        let g = |x: f64| if upper { target - d.sf(x) } else { d.cdf(x) - target };

        let mut lo = self.prev.unwrap_or(wlo);
        let mut glo = g(lo);
        if glo > 0.0 {
            lo = wlo;
            glo = g(lo);
        }
        // gallop upward from the previous quantile
        let mut step = 2.0 * self.gap;
        let mut hi = (lo + step).min(whi);
        let mut ghi = g(hi);
        while ghi < 0.0 && hi < whi {
            lo = hi;
            glo = ghi;
            step *= 2.0;
            hi = (hi + step).min(whi);
            ghi = g(hi);
        }
        if glo > 0.0 || ghi < 0.0 {
            return Err(GaussianError::Oracle(format!(
                "quantile level not bracketed by support window [{wlo}, {whi}]"
            )));
        }
        let mut prev = glo;
        while hi - lo > BISECTION_TOL * (1.0 + lo.abs().max(hi.abs())) {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm < prev - 1e-12 {
                return Err(GaussianError::Oracle(format!("CDF is not monotone near x = {mid}")));
            }
            if gm < 0.0 {
                lo = mid;
                prev = gm;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        if let Some(p) = self.prev {
            self.gap = (x - p).max(BISECTION_TOL * (1.0 + x.abs()));
        }
        self.prev = Some(x);
        Ok(x)
    }
}
