use serde::{Deserialize, Serialize};
use serde_json::json;

use super::CliError;
use crate::barycenter::{self, BarycenterError, WeightedFamily};
use crate::gaussian::{DiagGaussian, FullGaussian, GaussianError, GaussianMixture};
use crate::linalg::{LinalgError, SymMatrix};
use crate::mmvae::Aggregation;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AggregateInput {
    posteriors: Vec<PosteriorDoc>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PosteriorDoc {
    mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cov: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateOptions {
    pub method: String,
    /// Overrides the document's weights.
    pub weights: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
}

enum Family {
    Diag(Vec<DiagGaussian>),
    Full(Vec<FullGaussian>),
}

fn numeric_or_input(e: BarycenterError) -> CliError {
    let numeric = matches!(
        e,
        BarycenterError::NoConvergence { .. }
            | BarycenterError::ZeroPrecision(_)
            | BarycenterError::Linalg(LinalgError::NoConvergence { .. })
            | BarycenterError::Gaussian(GaussianError::NonFinite { .. })
    );
    if numeric {
        CliError::numeric(e.to_string())
    } else {
        CliError::input(e.to_string())
    }
}

fn parse_family(docs: Vec<PosteriorDoc>) -> Result<Family, CliError> {
    if docs.is_empty() {
        return Err(CliError::input("posteriors: at least one posterior is required"));
    }
    let full = docs[0].cov.is_some();
    let mut diag = Vec::new();
    let mut fulls = Vec::new();
    for (i, doc) in docs.into_iter().enumerate() {
        let at = |msg: String| CliError::input(format!("posteriors[{i}]: {msg}"));
        match (doc.sigma, doc.cov) {
            (Some(sigma), None) if !full => {
                diag.push(DiagGaussian::new(doc.mean, sigma).map_err(|e| at(e.to_string()))?);
            }
            (None, Some(rows)) if full => {
                let d = rows.len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(at("cov must be a square array of rows".into()));
                }
                let cov = SymMatrix::new(d, rows.concat()).map_err(|e| at(format!("cov: {e}")))?;
                fulls.push(FullGaussian::new(doc.mean, cov).map_err(|e| at(e.to_string()))?);
            }
            (Some(_), Some(_)) | (None, None) => return Err(at("needs exactly one of `sigma` or `cov`".into())),
            _ => return Err(at("cannot mix `sigma` and `cov` posteriors in one document".into())),
        }
    }
    Ok(if full { Family::Full(fulls) } else { Family::Diag(diag) })
}

fn diag_doc(g: &DiagGaussian) -> serde_json::Value {
    json!({ "mean": g.mean(), "sigma": g.sigma() })
}

fn mixture_doc(method: Aggregation, m: &GaussianMixture) -> serde_json::Value {
    let components: Vec<_> = m.components().iter().map(diag_doc).collect();
    json!({ "method": method.name(), "weights": m.weights(), "components": components })
}

/// Runs one aggregation over a JSON input document and returns the output document.
///
/// `poe` uses the weights as exponents when given and unit exponents otherwise.
/// `mopoe` and `mwb` always use uniform subset weights.
pub fn aggregate_document(text: &str, opts: &AggregateOptions) -> Result<String, CliError> {
    let method: Aggregation = opts.method.parse().map_err(CliError::input)?;
    let input: AggregateInput = serde_json::from_str(text).map_err(|e| CliError::input(format!("input: {e}")))?;
    let weights = opts.weights.clone().or(input.weights);
    let family = parse_family(input.posteriors)?;

    let value = match family {
        Family::Full(members) => {
            if method != Aggregation::Wb {
                return Err(CliError::input(format!(
                    "method {method} needs `sigma` posteriors; full covariances support wb only"
                )));
            }
            let fam = match weights {
                Some(w) => WeightedFamily::new(members, w),
                None => WeightedFamily::uniform(members),
            }
            .map_err(|e| CliError::input(format!("weights: {e}")))?;
            let g = barycenter::wb_full(&fam, opts.tol, opts.max_iter).map_err(numeric_or_input)?;
            let d = g.dim();
            let rows: Vec<Vec<f64>> = (0..d).map(|r| (0..d).map(|c| g.cov().get(r, c)).collect()).collect();
            json!({ "method": method.name(), "mean": g.mean(), "cov": rows })
        }
        Family::Diag(members) => {
            let n = members.len();
            if matches!(method, Aggregation::Mopoe | Aggregation::Mwb) && weights.is_some() {
                return Err(CliError::input(format!(
                    "method {method} uses uniform subset weights; drop the weights"
                )));
            }
            let exponents = weights.clone().unwrap_or_else(|| vec![1.0; n]);
            let fam = match (method, weights) {
                // poe exponents are free; the family itself stays uniform
                (Aggregation::Poe, _) | (_, None) => WeightedFamily::uniform(members),
                (_, Some(w)) => WeightedFamily::new(members, w),
            }
            .map_err(|e| CliError::input(format!("weights: {e}")))?;
            if exponents.len() != n {
                return Err(CliError::input(format!(
                    "weights: {} weights for {n} posteriors",
                    exponents.len()
                )));
            }
            let prior = DiagGaussian::standard(fam.dim());
            match method {
                Aggregation::Poe => {
                    let g = barycenter::poe(&fam, &exponents).map_err(numeric_or_input)?;
                    json!({ "method": method.name(), "mean": g.mean(), "sigma": g.sigma() })
                }
                Aggregation::Wb => {
                    let g = barycenter::wb_diag(&fam).map_err(numeric_or_input)?;
                    json!({ "method": method.name(), "mean": g.mean(), "sigma": g.sigma() })
                }
                Aggregation::Moe => mixture_doc(method, &barycenter::moe(&fam).map_err(numeric_or_input)?),
                Aggregation::Mopoe => mixture_doc(method, &barycenter::mopoe(&fam, &prior).map_err(numeric_or_input)?),
                Aggregation::Mwb => mixture_doc(method, &barycenter::mwb(&fam, &prior).map_err(numeric_or_input)?),
            }
        }
    };
    let mut out = serde_json::to_string_pretty(&value).map_err(|e| CliError::numeric(e.to_string()))?;
    out.push('\n');
    Ok(out)
}
