//! Posterior aggregation as barycenters of a weighted family of Gaussians.
//!
//! Every aggregator here minimizes `Σ_m λ_m d(q_m, q)` for some divergence `d`:
//!
//! | aggregator | divergence                     | result                       |
//! |------------|--------------------------------|------------------------------|
//! | [`poe`]    | reverse KL, `KL(q ‖ q_m)`      | precision-weighted Gaussian  |
//! | [`moe`]    | forward KL, `KL(q_m ‖ q)`      | the mixture `Σ λ_m q_m`      |
//! | [`wb_diag`], [`wb_full`] | squared 2-Wasserstein | Bures-Wasserstein barycenter |
//! | [`mopoe`], [`mwb`] | forward KL over subset barycenters | mixture over the powerset |

use thiserror::Error;

use crate::gaussian::{self, DiagGaussian, FullGaussian, GaussianError, GaussianMixture};
use crate::linalg::{self, LinalgError, SymMatrix};

pub const WB_FULL_DEFAULT_TOL: f64 = 1e-9;
pub const WB_FULL_DEFAULT_MAX_ITER: usize = 200;
/// Largest modality count accepted by [`subsets`].
pub const MAX_MODALITIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BarycenterError {
    #[error("family must have at least one member")]
    EmptyFamily,
    #[error("got {weights} weights for {members} members")]
    WeightCount { weights: usize, members: usize },
    #[error("all PoE exponents are zero")]
    ZeroExponents,
    #[error("invalid exponent {0}: exponents must be finite and nonnegative")]
    BadExponent(f64),
    #[error("PoE precision vanishes in dimension {0}")]
    ZeroPrecision(usize),
    #[error("modality count {0} outside 1..={MAX_MODALITIES}")]
    ModalityCount(usize),
    #[error("subset is empty")]
    EmptySubset,
    #[error("subset mask {mask:#b} references modalities beyond {modalities}")]
    SubsetOutOfRange { mask: u32, modalities: usize },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Anything with a latent dimension.
pub trait Dimensioned {
    fn dim(&self) -> usize;
}

impl Dimensioned for DiagGaussian {
    fn dim(&self) -> usize {
        DiagGaussian::dim(self)
    }
}

impl Dimensioned for FullGaussian {
    fn dim(&self) -> usize {
        FullGaussian::dim(self)
    }
}

/// Unimodal posteriors together with barycenter weights on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFamily<G = DiagGaussian> {
    members: Vec<G>,
    weights: Vec<f64>,
}

impl<G: Dimensioned + Clone> WeightedFamily<G> {
    pub fn new(members: Vec<G>, weights: Vec<f64>) -> Result<Self, BarycenterError> {
        if members.is_empty() {
            return Err(BarycenterError::EmptyFamily);
        }
        if weights.len() != members.len() {
            return Err(BarycenterError::WeightCount {
                weights: weights.len(),
                members: members.len(),
            });
        }
        gaussian::check_simplex(&weights)?;
        let dim = members[0].dim();
        if let Some(m) = members.iter().find(|m| m.dim() != dim) {
            return Err(GaussianError::DimMismatch(dim, m.dim()).into());
        }
        Ok(Self { members, weights })
    }

    /// Equal weights `1/M`.
    pub fn uniform(members: Vec<G>) -> Result<Self, BarycenterError> {
        let w = 1.0 / members.len().max(1) as f64;
        let mut weights = vec![w; members.len()];
        // make the simplex sum exact for awkward M
        if let Some(last) = weights.last_mut() {
            *last = 1.0 - w * (members.len() - 1) as f64;
        }
        Self::new(members, weights)
    }

    pub fn members(&self) -> &[G] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    /// The members selected by `subset`, reweighted uniformly.
    pub fn restrict(&self, subset: SubsetIndex) -> Result<Self, BarycenterError> {
        subset.check(self.len())?;
        if subset.is_empty() {
            return Err(BarycenterError::EmptySubset);
        }
        Self::uniform(subset.members().map(|m| self.members[m].clone()).collect())
    }
}

/// Bitmask over modalities; bit `m` set means modality `m` is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubsetIndex(pub u32);

impl SubsetIndex {
    pub const EMPTY: SubsetIndex = SubsetIndex(0);

    pub fn full(modalities: usize) -> Self {
        SubsetIndex(((1u64 << modalities) - 1) as u32)
    }

    pub fn single(m: usize) -> Self {
        SubsetIndex(1 << m)
    }

    pub fn from_members(members: &[usize]) -> Self {
        SubsetIndex(members.iter().fold(0, |acc, m| acc | (1 << m)))
    }

    pub fn contains(self, m: usize) -> bool {
        m < 32 && self.0 & (1 << m) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Modality indices in ascending order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |m| self.contains(*m))
    }

    pub fn is_subset_of(self, other: SubsetIndex) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn check(self, modalities: usize) -> Result<(), BarycenterError> {
        if modalities < 32 && (self.0 >> modalities) != 0 {
            return Err(BarycenterError::SubsetOutOfRange {
                mask: self.0,
                modalities,
            });
        }
        Ok(())
    }
}

/// Formats as `{0,2}` with 0-based modality indices.
impl std::fmt::Display for SubsetIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (k, m) in self.members().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, "}}")
    }
}

/// The powerset of `m` modalities in ascending bitmask order, empty set first.
pub fn subsets(m: usize) -> Result<Vec<SubsetIndex>, BarycenterError> {
    if !(1..=MAX_MODALITIES).contains(&m) {
        return Err(BarycenterError::ModalityCount(m));
    }
    Ok((0..(1u32 << m)).map(SubsetIndex).collect())
}

/// All subsets of `within`, ascending by mask, empty set first.
pub fn subsets_within(within: SubsetIndex) -> Vec<SubsetIndex> {
    // standard submask enumeration, collected then sorted ascending
    let mut out = Vec::with_capacity(1 << within.len());
    let mut s = within.0;
    loop {
        out.push(SubsetIndex(s));
        if s == 0 {
            break;
        }
        s = (s - 1) & within.0;
    }
    out.reverse();
    out
}

/// Normalized product of experts `∝ Π q_m^{α_m}`.
pub fn poe(family: &WeightedFamily, exponents: &[f64]) -> Result<DiagGaussian, BarycenterError> {
    if exponents.len() != family.len() {
        return Err(BarycenterError::WeightCount {
            weights: exponents.len(),
            members: family.len(),
        });
    }
    if let Some(a) = exponents.iter().find(|a| !a.is_finite() || **a < 0.0) {
        return Err(BarycenterError::BadExponent(*a));
    }
    if exponents.iter().all(|a| *a == 0.0) {
        return Err(BarycenterError::ZeroExponents);
    }
    let dim = family.dim();
    let mut mean = Vec::with_capacity(dim);
    let mut sigma = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut precision = 0.0;
        let mut weighted = 0.0;
        for (q, a) in family.members.iter().zip(exponents) {
            let p = a / (q.sigma()[i] * q.sigma()[i]);
            precision += p;
            weighted += p * q.mean()[i];
        }
        if precision <= 0.0 {
            return Err(BarycenterError::ZeroPrecision(i));
        }
        mean.push(weighted / precision);
        sigma.push((1.0 / precision).sqrt());
    }
    Ok(DiagGaussian::floored(mean, sigma)?)
}

/// Mixture of experts with the family's own weights.
pub fn moe(family: &WeightedFamily) -> Result<GaussianMixture, BarycenterError> {
    Ok(GaussianMixture::new(family.members.clone(), family.weights.clone())?)
}

/// Diagonal Bures-Wasserstein barycenter: weighted means of `μ` and `σ`.
pub fn wb_diag(family: &WeightedFamily) -> Result<DiagGaussian, BarycenterError> {
    let dim = family.dim();
    let mut mean = vec![0.0; dim];
    let mut sigma = vec![0.0; dim];
    for (q, w) in family.members.iter().zip(&family.weights) {
        for i in 0..dim {
            mean[i] += w * q.mean()[i];
            sigma[i] += w * q.sigma()[i];
        }
    }
    Ok(DiagGaussian::floored(mean, sigma)?)
}

/// Full-covariance Bures-Wasserstein barycenter via the fixed-point iteration
/// `Σ ← Σ_m λ_m (Σ^{1/2} Σ_m Σ^{1/2})^{1/2}`, started from `Σ_m λ_m Σ_m`.
///
/// Returns an iterate whose residual
/// `‖Σ − Σ_m λ_m (Σ^{1/2} Σ_m Σ^{1/2})^{1/2}‖_F` is at most `tol·(1 + ‖Σ‖_F)`.
pub fn wb_full(
    family: &WeightedFamily<FullGaussian>,
    tol: f64,
    max_iter: usize,
) -> Result<FullGaussian, BarycenterError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(BarycenterError::BadTolerance(tol));
    }
    let dim = family.dim();
    let mut mean = vec![0.0; dim];
    let mut cov = SymMatrix::zeros(dim);
    for (q, w) in family.members.iter().zip(&family.weights) {
        for (m, x) in mean.iter_mut().zip(q.mean()) {
            *m += w * x;
        }
        cov.add_scaled(*w, q.cov())?;
    }

    // Once an iterate passes, its image is usually closer still; return the
    // image when its own residual also passes, else the first passing iterate.
    let mut residual = f64::INFINITY;
    let mut passed: Option<SymMatrix> = None;
    for _ in 0..max_iter {
        let next = fixed_point_map(family, &cov)?;
        residual = next.sub(&cov)?.frobenius_norm();
        if residual <= tol * (1.0 + cov.frobenius_norm()) {
            if passed.is_some() {
                return Ok(FullGaussian::new(mean, cov)?);
            }
            passed = Some(cov);
        } else if let Some(prev) = passed.take() {
            return Ok(FullGaussian::new(mean, prev)?);
        }
        cov = next;
    }
    if let Some(prev) = passed {
        return Ok(FullGaussian::new(mean, prev)?);
    }
    Err(BarycenterError::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// One application of the Bures-Wasserstein fixed-point map.
pub fn fixed_point_map(family: &WeightedFamily<FullGaussian>, cov: &SymMatrix) -> Result<SymMatrix, BarycenterError> {
    let root = linalg::sqrtm_psd(cov)?;
    let mut next = SymMatrix::zeros(cov.dim());
    for (q, w) in family.members.iter().zip(&family.weights) {
        let inner = linalg::sqrtm_psd(&SymMatrix::congruence(&root, q.cov())?)?;
        next.add_scaled(*w, &inner)?;
    }
    Ok(next)
}

/// Fixed-point residual `‖Σ − T(Σ)‖_F`.
pub fn fixed_point_residual(family: &WeightedFamily<FullGaussian>, cov: &SymMatrix) -> Result<f64, BarycenterError> {
    Ok(fixed_point_map(family, cov)?.sub(cov)?.frobenius_norm())
}

/// Mixture over the powerset of per-subset products (unit exponents); the empty
/// subset contributes `prior`. Components follow ascending mask order.
pub fn mopoe(family: &WeightedFamily, prior: &DiagGaussian) -> Result<GaussianMixture, BarycenterError> {
    powerset_mixture(family, prior, |sub| {
        let ones = vec![1.0; sub.len()];
        poe(sub, &ones)
    })
}

/// Mixture over the powerset of per-subset Wasserstein barycenters (uniform
/// within-subset weights); the empty subset contributes `prior`.
pub fn mwb(family: &WeightedFamily, prior: &DiagGaussian) -> Result<GaussianMixture, BarycenterError> {
    powerset_mixture(family, prior, wb_diag)
}

fn powerset_mixture(
    family: &WeightedFamily,
    prior: &DiagGaussian,
    lower: impl Fn(&WeightedFamily) -> Result<DiagGaussian, BarycenterError>,
) -> Result<GaussianMixture, BarycenterError> {
    if prior.dim() != family.dim() {
        return Err(GaussianError::DimMismatch(family.dim(), prior.dim()).into());
    }
    let all = subsets(family.len())?;
    let weight = 1.0 / all.len() as f64;
    let mut components = Vec::with_capacity(all.len());
    for s in &all {
        if s.is_empty() {
            components.push(prior.clone());
        } else {
            components.push(lower(&family.restrict(*s)?)?);
        }
    }
    Ok(GaussianMixture::new(components, vec![weight; all.len()])?)
}

/// Which divergence, and in which argument order, a barycenter objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    /// `KL(q_m ‖ q)`
    ForwardKl,
    /// `KL(q ‖ q_m)`
    ReverseKl,
    /// `W₂²(q_m, q)`
    W2Squared,
}

/// `Σ_m λ_m d(q_m, q)`.
pub fn barycenter_objective(
    family: &WeightedFamily,
    q: &DiagGaussian,
    divergence: Divergence,
) -> Result<f64, BarycenterError> {
    let mut acc = 0.0;
    for (m, w) in family.members.iter().zip(&family.weights) {
        let d = match divergence {
            Divergence::ForwardKl => gaussian::kl_diag(m, q)?,
            Divergence::ReverseKl => gaussian::kl_diag(q, m)?,
            Divergence::W2Squared => gaussian::w2sq_diag(m, q)?,
        };
        acc += w * d;
    }
    Ok(acc)
}
