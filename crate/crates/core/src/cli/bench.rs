use std::hint::black_box;
use std::time::Instant;

use super::CliError;
use crate::barycenter::{self, WeightedFamily, WB_FULL_DEFAULT_MAX_ITER, WB_FULL_DEFAULT_TOL};
use crate::gaussian::{DiagGaussian, FullGaussian};
use crate::linalg::SymMatrix;
use crate::rng::SplitRng;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSizes {
    pub full_dims: Vec<usize>,
    pub full_modalities: Vec<usize>,
    pub diag_dims: Vec<usize>,
    pub diag_modalities: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub op: &'static str,
    pub dim: usize,
    pub modalities: usize,
    pub reps: usize,
    pub mean_us: f64,
    pub min_us: f64,
}

fn random_spd(rng: &mut SplitRng, d: usize) -> SymMatrix {
    let a = rng.normals(d * d);
    let mut data = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let dot: f64 = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum();
            data[i * d + j] = dot / d as f64 + if i == j { 0.5 } else { 0.0 };
        }
    }
    SymMatrix::new(d, data).expect("square by construction")
}

fn time<T>(reps: usize, mut f: impl FnMut() -> T) -> (f64, f64) {
    let mut total = 0.0;
    let mut min = f64::INFINITY;
    for _ in 0..reps {
        let t = Instant::now();
        black_box(f());
        let us = t.elapsed().as_secs_f64() * 1e6;
        total += us;
        min = min.min(us);
    }
    (total / reps as f64, min)
}

/// Times `wb_full` over the full grid, then `poe`, `moe` and `wb_diag` over the
/// diagonal grid. One row per cell, in grid order.
pub fn run_bench(sizes: &BenchSizes) -> Result<Vec<BenchRow>, CliError> {
    if sizes.reps == 0 {
        return Err(CliError::input("reps must be >= 1"));
    }
    let bad = |d: &usize| *d == 0;
    if sizes.full_dims.iter().any(bad) || sizes.diag_dims.iter().any(bad) {
        return Err(CliError::input("dimensions must be >= 1"));
    }
    let mut rng = SplitRng::new(sizes.seed);
    let mut rows = Vec::new();
    for &d in &sizes.full_dims {
        for &m in &sizes.full_modalities {
            let members = (0..m)
                .map(|_| FullGaussian::new(rng.normals(d), random_spd(&mut rng, d)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::numeric(e.to_string()))?;
            let fam = WeightedFamily::uniform(members).map_err(|e| CliError::input(e.to_string()))?;
            barycenter::wb_full(&fam, WB_FULL_DEFAULT_TOL, WB_FULL_DEFAULT_MAX_ITER)
                .map_err(|e| CliError::numeric(format!("wb_full d={d} M={m}: {e}")))?;
            let (mean_us, min_us) = time(sizes.reps, || {
                barycenter::wb_full(&fam, WB_FULL_DEFAULT_TOL, WB_FULL_DEFAULT_MAX_ITER)
            });
            rows.push(BenchRow {
                op: "wb_full",
                dim: d,
                modalities: m,
                reps: sizes.reps,
                mean_us,
                min_us,
            });
        }
    }
    for &d in &sizes.diag_dims {
        for &m in &sizes.diag_modalities {
            let members = (0..m)
                .map(|_| {
                    let sigma = rng.normals(d).into_iter().map(|z| (0.5 * z).exp()).collect();
                    DiagGaussian::new(rng.normals(d), sigma)
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::numeric(e.to_string()))?;
            let fam = WeightedFamily::uniform(members).map_err(|e| CliError::input(e.to_string()))?;
            let ones = vec![1.0; m];
            let cells: [(&'static str, (f64, f64)); 3] = [
                ("poe", time(sizes.reps, || barycenter::poe(&fam, &ones))),
                ("moe", time(sizes.reps, || barycenter::moe(&fam))),
                ("wb_diag", time(sizes.reps, || barycenter::wb_diag(&fam))),
            ];
            for (op, (mean_us, min_us)) in cells {
                rows.push(BenchRow {
                    op,
                    dim: d,
                    modalities: m,
                    reps: sizes.reps,
                    mean_us,
                    min_us,
                });
            }
        }
    }
    Ok(rows)
}

pub fn table(rows: &[BenchRow]) -> String {
    let mut out = String::from("op,dim,modalities,reps,mean_us,min_us\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.3},{:.3}\n",
            r.op, r.dim, r.modalities, r.reps, r.mean_us, r.min_us
        ));
    }
    out
}
