//! Reverse-mode differentiation over dense 2-D tensors, Adam, and a
//! finite-difference gradient checker.

mod graph;
mod params;
mod tensor;

pub use graph::{sigmoid, softplus, Backward, Graph, Var};
pub use params::{adam_step, AdamConfig, Gradients, ParamStore};
pub use tensor::Tensor;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("no gradient supplied for parameter `{0}`")]
    MissingGradient(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

/// Above this many coordinates, [`grad_check`] samples instead of sweeping.
pub const GRAD_CHECK_FULL_LIMIT: usize = 10_000;
pub const GRAD_CHECK_SAMPLES: usize = 256;
/// Denominator floor for the relative error, so near-zero gradients are
/// compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// Builds the graph, runs backward, and returns the loss with per-parameter gradients.
pub fn forward_backward<F>(store: &ParamStore, build: F) -> Result<(f64, Gradients), GraphError>
where
    F: FnOnce(&mut Graph<'_>) -> Result<Var, GraphError>,
{
    let mut g = Graph::with_params(store);
    let loss = build(&mut g)?;
    let back = g.backward(loss)?;
    let value = g.value(loss).item();
    Ok((value, back.param_grads(store)))
}

/// Evaluates the loss only.
pub fn forward<F>(store: &ParamStore, build: F) -> Result<f64, GraphError>
where
    F: FnOnce(&mut Graph<'_>) -> Result<Var, GraphError>,
{
    let mut g = Graph::with_params(store);
    let loss = build(&mut g)?;
    let shape = g.shape(loss);
    if shape != [1, 1] {
        return Err(GraphError::NonScalarLoss(shape));
    }
    Ok(g.value(loss).item())
}

/// Maximum relative error between reverse-mode and central-difference gradients.
pub fn grad_check<F>(store: &ParamStore, build: F, step: f64) -> Result<f64, GraphError>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, GraphError>,
{
    let (loss, grads) = forward_backward(store, &build)?;
    if !loss.is_finite() {
        return Err(GraphError::NonFinite(format!("loss {loss}")));
    }
    grad_check_against(store, build, &grads, step, 0)
}

/// Like [`grad_check`] but against caller-supplied gradients.
///
/// Every coordinate is checked up to [`GRAD_CHECK_FULL_LIMIT`]; beyond that a
/// seeded sample of [`GRAD_CHECK_SAMPLES`] coordinates.
pub fn grad_check_against<F>(
    store: &ParamStore,
    build: F,
    grads: &Gradients,
    step: f64,
    seed: u64,
) -> Result<f64, GraphError>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, GraphError>,
{
    let n = store.num_coords();
    let coords: Vec<usize> = if n <= GRAD_CHECK_FULL_LIMIT {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, n, GRAD_CHECK_SAMPLES).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for k in coords {
        let original = probe.coord(k);
        probe.set_coord(k, original + step);
        let up = forward(&probe, &build)?;
        probe.set_coord(k, original - step);
        let down = forward(&probe, &build)?;
        probe.set_coord(k, original);
        if !up.is_finite() || !down.is_finite() {
            let (name, off) = store.coord_name(k);
            return Err(GraphError::NonFinite(format!("loss while perturbing {name}[{off}]")));
        }
        let numeric = (up - down) / (2.0 * step);
        let analytic = grads.coord(store, k);
        if !analytic.is_finite() {
            let (name, off) = store.coord_name(k);
            return Err(GraphError::NonFinite(format!("gradient {name}[{off}]")));
        }
        let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}
