//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! Runs without the libtest harness so the lines print in order and the
//! trained-model criteria share one training run per config.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use baryvae::barycenter::*;
use baryvae::cli::{cmd_train, RunConfig, TrainArgs};
use baryvae::data::MultimodalDataset;
use baryvae::diffgraph::{grad_check, Graph, GraphError, Var};
use baryvae::eval::{coherence, evaluate, fit_reference_classifiers, EvalConfig, EvalReport};
use baryvae::gaussian::*;
use baryvae::linalg::SymMatrix;
use baryvae::mmvae::{Aggregation, Likelihood, MultimodalVae};
use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    measured: String,
}

fn outcome(pass: bool, measured: String) -> Outcome {
    Outcome { pass, measured }
}

fn rel_err(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs()
}

fn between(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

fn c1_divergence_oracles() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let (mut kl_worst, mut w2_worst) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let p = rand_diag(&mut r, 1);
        let q = rand_diag(&mut r, 1);
        kl_worst = kl_worst.max(rel_err(kl_diag(&p, &q).unwrap(), quad_kl_gauss(&p, &q)));
        let oracle = w2sq_1d_quantile(&GaussianMixture::new(vec![p.clone()], vec![1.0]).unwrap(), &q).unwrap();
        w2_worst = w2_worst.max(rel_err(w2sq_diag(&p, &q).unwrap(), oracle));
    }
    let (mut asym, mut commuting) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let d = between(&mut r, 1, 8);
        let (a, b) = (rand_full(&mut r, d), rand_full(&mut r, d));
        asym = asym.max((w2sq_full(&a, &b).unwrap() - w2sq_full(&b, &a).unwrap()).abs());
        // commuting pair: both diagonal in the same rotated basis
        let (p, q) = (rand_diag(&mut r, d), rand_diag(&mut r, d));
        let rot = rand_orthogonal(&mut r, d);
        let turn = |g: &DiagGaussian| {
            let cov = conjugate(&rot, g.to_full().cov().as_slice(), d);
            let mean = (0..d)
                .map(|i| (0..d).map(|k| rot[i * d + k] * g.mean()[k]).sum())
                .collect();
            FullGaussian::new(mean, SymMatrix::new(d, cov).unwrap()).unwrap()
        };
        let reference = w2sq_diag(&p, &q).unwrap();
        commuting = commuting
            .max((w2sq_full(&turn(&p), &turn(&q)).unwrap() - reference).abs())
            .max((w2sq_full(&p.to_full(), &q.to_full()).unwrap() - reference).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        kl_worst <= 1e-4 && w2_worst <= 1e-4 && asym <= 1e-8 && commuting <= 1e-8 && secs < 30.0,
        format!(
            "KL rel {kl_worst:.2e}, W2 rel {w2_worst:.2e} over 200 pairs; full asymmetry {asym:.2e}, \
             commuting reduction {commuting:.2e}; {secs:.1} s"
        ),
    )
}

/// Σ λ_m E_{q_m}[log moe − log q] by stratified sampling with common draws.
///
/// Its expectation equals the forward-KL objective at `q` minus the objective
/// at the mixture, so a negative value would be a counterexample.
struct ForwardGap {
    draws: Vec<(f64, Vec<Vec<f64>>, Vec<f64>)>,
}

impl ForwardGap {
    fn new(family: &WeightedFamily, mix: &GaussianMixture, r: &mut ChaCha8Rng, per_member: usize) -> Self {
        let draws = family
            .members()
            .iter()
            .zip(family.weights())
            .map(|(m, w)| {
                let xs: Vec<Vec<f64>> = (0..per_member)
                    .map(|_| m.sample(&(0..m.dim()).map(|_| normal(r)).collect::<Vec<_>>()).unwrap())
                    .collect();
                let log_mix = xs.iter().map(|x| mix.log_density(x).unwrap()).collect();
                (*w, xs, log_mix)
            })
            .collect();
        Self { draws }
    }

    fn at(&self, q: &DiagGaussian) -> f64 {
        self.draws
            .iter()
            .map(|(w, xs, log_mix)| {
                let n = xs.len() as f64;
                w * xs
                    .iter()
                    .zip(log_mix)
                    .map(|(x, lm)| lm - q.log_density(x).unwrap())
                    .sum::<f64>()
                    / n
            })
            .sum()
    }
}

fn moment_match(mix: &GaussianMixture) -> DiagGaussian {
    let d = mix.components()[0].dim();
    let mean = mix.mean();
    let sigma = (0..d)
        .map(|i| {
            let second: f64 = mix
                .components()
                .iter()
                .zip(mix.weights())
                .map(|(c, w)| w * (c.sigma()[i].powi(2) + c.mean()[i].powi(2)))
                .sum();
            (second - mean[i] * mean[i]).sqrt()
        })
        .collect();
    DiagGaussian::new(mean, sigma).unwrap()
}

fn perturb(r: &mut ChaCha8Rng, g: &DiagGaussian, scale: f64) -> DiagGaussian {
    let mean = g
        .mean()
        .iter()
        .zip(g.sigma())
        .map(|(m, s)| m + scale * s * normal(r))
        .collect();
    let sigma = g.sigma().iter().map(|s| s * (scale * normal(r)).exp()).collect();
    DiagGaussian::new(mean, sigma).unwrap()
}

fn c2_optimality() -> Outcome {
    let start = Instant::now();
    let mut r = rng(202);
    let (mut reverse_violations, mut forward_violations) = (0usize, 0usize);
    let (mut reverse_min_gap, mut forward_min_gap) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..200 {
        let d = between(&mut r, 1, 8);
        let m = between(&mut r, 1, 5);
        let family = rand_family(&mut r, d, m);

        let best = poe(&family, family.weights()).unwrap();
        let at_best = barycenter_objective(&family, &best, Divergence::ReverseKl).unwrap();
        for k in 0..100 {
            let q = if k % 5 == 4 {
                rand_diag(&mut r, d)
            } else {
                perturb(&mut r, &best, [1e-3, 1e-2, 1e-1, 1.0][k % 5])
            };
            let gap = barycenter_objective(&family, &q, Divergence::ReverseKl).unwrap() - at_best;
            reverse_min_gap = reverse_min_gap.min(gap);
            reverse_violations += usize::from(gap < 0.0);
        }

        let mix = moe(&family).unwrap();
        let gap = ForwardGap::new(&family, &mix, &mut r, 4000);
        let mm = moment_match(&mix);
        for k in 0..100 {
            let q = if k % 2 == 1 {
                rand_diag(&mut r, d)
            } else {
                perturb(&mut r, &mm, [0.25, 0.5, 1.0][k % 3])
            };
            let g = gap.at(&q);
            forward_min_gap = forward_min_gap.min(g);
            forward_violations += usize::from(g < 0.0);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        reverse_violations == 0 && forward_violations == 0 && secs < 60.0,
        format!(
            "reverse KL: {reverse_violations} counterexamples, min gap {reverse_min_gap:.2e}; \
             forward KL: {forward_violations} counterexamples, min gap {forward_min_gap:.2e}; {secs:.1} s"
        ),
    )
}

fn c3_stationarity() -> Outcome {
    let mut r = rng(303);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (d, m) = (between(&mut r, 1, 16), between(&mut r, 1, 5));
        let family = rand_family(&mut r, d, m);
        let wb = wb_diag(&family).unwrap();
        let mut x: Vec<f64> = wb.mean().iter().chain(wb.sigma()).copied().collect();
        let objective = |x: &[f64]| {
            let q = DiagGaussian::new(x[..d].to_vec(), x[d..].to_vec()).unwrap();
            barycenter_objective(&family, &q, Divergence::W2Squared).unwrap()
        };
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + h;
            let up = objective(&x);
            x[i] = orig - h;
            let down = objective(&x);
            x[i] = orig;
            worst = worst.max(((up - down) / (2.0 * h)).abs());
        }
    }
    outcome(
        worst < 1e-6,
        format!("max |finite-difference gradient| {worst:.2e} over 200 families"),
    )
}

fn c4_fixed_point() -> Outcome {
    let mut r = rng(404);
    let (mut worst_ratio, mut max_iters_ok) = (0.0f64, true);
    for _ in 0..100 {
        let d = between(&mut r, 1, 8);
        let m = between(&mut r, 1, 5);
        let members = (0..m).map(|_| rand_full(&mut r, d)).collect();
        let family = WeightedFamily::new(members, rand_weights(&mut r, m)).unwrap();
        match wb_full(&family, WB_FULL_DEFAULT_TOL, WB_FULL_DEFAULT_MAX_ITER) {
            Ok(out) => {
                let residual = fixed_point_residual(&family, out.cov()).unwrap();
                worst_ratio = worst_ratio.max(residual / (1.0 + out.cov().frobenius_norm()));
            }
            Err(_) => max_iters_ok = false,
        }
    }
    // diagonal families at the same scale: variances from the corpus diagonals
    let (mut mean_err, mut sigma_err, mut var_err, mut off_diag) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = between(&mut r, 1, 8);
        let m = between(&mut r, 1, 5);
        let members: Vec<DiagGaussian> = (0..m)
            .map(|_| {
                let g = rand_full(&mut r, d);
                let sigma = g.cov().diag().iter().map(|v| v.sqrt()).collect();
                DiagGaussian::new(g.mean().to_vec(), sigma).unwrap()
            })
            .collect();
        let weights = rand_weights(&mut r, m);
        let diag = WeightedFamily::new(members.clone(), weights.clone()).unwrap();
        let full = WeightedFamily::new(members.iter().map(DiagGaussian::to_full).collect(), weights).unwrap();
        let Ok(out) = wb_full(&full, WB_FULL_DEFAULT_TOL, WB_FULL_DEFAULT_MAX_ITER) else {
            max_iters_ok = false;
            continue;
        };
        let wb = wb_diag(&diag).unwrap();
        for i in 0..d {
            mean_err = mean_err.max((out.mean()[i] - wb.mean()[i]).abs());
            sigma_err = sigma_err.max((out.cov().get(i, i).sqrt() - wb.sigma()[i]).abs());
            var_err = var_err.max((out.cov().get(i, i) - wb.sigma()[i].powi(2)).abs());
            for j in (0..d).filter(|j| *j != i) {
                off_diag = off_diag.max(out.cov().get(i, j).abs());
            }
        }
    }
    outcome(
        max_iters_ok && worst_ratio <= 1e-9 && mean_err <= 1e-8 && sigma_err <= 1e-8 && off_diag <= 1e-8,
        format!(
            "converged within {WB_FULL_DEFAULT_MAX_ITER} iterations: {max_iters_ok}; max residual/(1+|S|_F) \
             {worst_ratio:.2e}; diagonal families: mean {mean_err:.2e}, sigma {sigma_err:.2e}, \
             off-diagonal {off_diag:.2e} (variance {var_err:.2e})"
        ),
    )
}

fn c5_jensen() -> Outcome {
    let start = Instant::now();
    let mut r = rng(505);
    let (mut kl_slack, mut w2_slack) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..200 {
        let m = between(&mut r, 1, 5);
        let family = rand_family(&mut r, 1, m);
        let q = rand_diag(&mut r, 1);
        let mix = moe(&family).unwrap();
        let mut members: Vec<&DiagGaussian> = family.members().iter().collect();
        members.push(&q);
        let (lo, hi) = quadrature_window(&members);
        let lhs = quad_kl(log_pdf_mix(&mix), log_pdf_1d(&q), lo, hi, 40_001);
        let rhs = barycenter_objective(&family, &q, Divergence::ForwardKl).unwrap();
        kl_slack = kl_slack.max(lhs - rhs);
        let lhs = w2sq_1d_quantile(&mix, &q).unwrap();
        let rhs = barycenter_objective(&family, &q, Divergence::W2Squared).unwrap();
        w2_slack = w2_slack.max(lhs - rhs);
    }
    outcome(
        kl_slack <= 1e-6 && w2_slack <= 1e-6,
        format!(
            "max(lhs - rhs): forward KL {kl_slack:.2e}, W2 {w2_slack:.2e} over 200 instances; {:.1} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c6_sandwich() -> Outcome {
    let mut r = rng(606);
    let (mut violations, mut checked) = (0usize, 0usize);
    for _ in 0..10_000 {
        let d = between(&mut r, 1, 16);
        let m = between(&mut r, 1, 8);
        let members = (0..m)
            .map(|_| {
                let mean = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
                let sigma = (0..d).map(|_| r.random_range(-6.0f64..6.0).exp()).collect();
                DiagGaussian::new(mean, sigma).unwrap()
            })
            .collect();
        let family = WeightedFamily::new(members, rand_weights(&mut r, m)).unwrap();
        let wb = wb_diag(&family).unwrap();
        for i in 0..d {
            let s = family.members().iter().map(|g| g.sigma()[i]);
            let lo = s.clone().fold(f64::INFINITY, f64::min);
            let hi = s.fold(f64::NEG_INFINITY, f64::max);
            violations += usize::from(!(lo <= wb.sigma()[i] && wb.sigma()[i] <= hi));
            checked += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations in {checked} coordinates over 10000 families"),
    )
}

type Build = Box<dyn Fn(&mut Graph<'_>) -> Result<Var, GraphError>>;

fn unary(op: fn(&mut Graph<'_>, Var) -> Var, positive: bool) -> Build {
    Box::new(move |g| {
        let mut a = g.param("a")?;
        if positive {
            let sq = g.square(a);
            a = g.add_scalar(sq, 0.5);
        }
        let y = op(g, a);
        project(g, y)
    })
}

fn binary(op: fn(&mut Graph<'_>, Var, Var) -> Result<Var, GraphError>) -> Build {
    Box::new(move |g| {
        let a = g.param("a")?;
        let b = g.param("b")?;
        let y = op(g, a, b)?;
        let sq = g.square(y);
        project(g, sq)
    })
}

fn primitive_checks() -> Vec<(&'static str, Build)> {
    vec![
        ("tanh", unary(|g, a| g.tanh(a), false)),
        ("relu", unary(|g, a| g.relu(a), false)),
        ("softplus", unary(|g, a| g.softplus(a), false)),
        ("sigmoid", unary(|g, a| g.sigmoid(a), false)),
        ("exp", unary(|g, a| g.exp(a), false)),
        ("square", unary(|g, a| g.square(a), false)),
        ("neg", unary(|g, a| g.neg(a), false)),
        ("log", unary(|g, a| g.log(a), true)),
        ("sqrt", unary(|g, a| g.sqrt(a), true)),
        ("scale", unary(|g, a| g.scale(a, -2.5), false)),
        (
            "add_scalar",
            unary(
                |g, a| {
                    let s = g.add_scalar(a, 0.7);
                    g.square(s)
                },
                false,
            ),
        ),
        (
            "sum",
            unary(
                |g, a| {
                    let s = g.sum(a);
                    g.square(s)
                },
                false,
            ),
        ),
        (
            "mean",
            unary(
                |g, a| {
                    let s = g.mean(a);
                    g.square(s)
                },
                false,
            ),
        ),
        ("add", binary(|g, a, b| g.add(a, b))),
        ("sub", binary(|g, a, b| g.sub(a, b))),
        ("mul", binary(|g, a, b| g.mul(a, b))),
        ("div", binary(|g, a, b| g.div(a, b))),
        ("concat_cols", binary(|g, a, b| g.concat_cols(&[a, b]))),
        ("concat_rows", binary(|g, a, b| g.concat_rows(&[a, b, a]))),
        (
            "weighted_sum",
            binary(|g, a, b| g.weighted_sum(&[(0.25, a), (0.75, b)])),
        ),
        (
            "matmul",
            Box::new(|g| {
                let a = g.param("a")?;
                let c = g.param("c")?;
                let y = g.matmul(a, c)?;
                let t = g.tanh(y);
                project(g, t)
            }),
        ),
        (
            "add_row",
            Box::new(|g| {
                let a = g.param("a")?;
                let r = g.param("r")?;
                let y = g.add_row(a, r)?;
                let t = g.tanh(y);
                project(g, t)
            }),
        ),
        (
            "linear",
            Box::new(|g| {
                let a = g.param("a")?;
                let c = g.param("c")?;
                let r = g.param("r")?;
                let bias = g.matmul(r, c)?;
                let y = g.linear(a, c, bias)?;
                let s = g.softplus(y);
                project(g, s)
            }),
        ),
    ]
}

fn c7_autodiff() -> Outcome {
    let step = 1e-5;
    let (mut worst, mut worst_name) = (0.0f64, String::new());
    let checks = primitive_checks();
    for (name, build) in &checks {
        for seed in 0..3 {
            let err = grad_check(&grad_store(seed), build.as_ref(), step).unwrap();
            if err > worst {
                (worst, worst_name) = (err, name.to_string());
            }
        }
    }
    let mut elbo_worst = 0.0f64;
    for agg in Aggregation::ALL {
        for lik in [Likelihood::Bernoulli, Likelihood::Gaussian] {
            let vae = small_vae(agg, lik);
            for subset in [SubsetIndex::full(3), SubsetIndex::from_members(&[0, 2])] {
                elbo_worst = elbo_worst.max(elbo_grad_error(&vae, subset, step));
            }
        }
    }
    outcome(
        worst < 1e-5 && elbo_worst < 1e-5,
        format!(
            "{} primitives: max rel error {worst:.2e} ({worst_name}); ELBO for all 5 aggregators: {elbo_worst:.2e}",
            checks.len()
        ),
    )
}

fn c8_analytic_likelihood() -> Outcome {
    let model = Conjugate::new(false);
    let exact = model.exact();
    let est = model.estimate(10_000, 1);
    outcome(
        (est - exact).abs() <= 0.05,
        format!(
            "K=10^4 estimate {est:.4} vs closed form {exact:.4} (|diff| {:.4})",
            (est - exact).abs()
        ),
    )
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

struct ToyRun {
    name: &'static str,
    train_secs: f64,
    report: EvalReport,
    untrained: MultimodalVae,
    train: MultimodalDataset,
    test: MultimodalDataset,
    eval: EvalConfig,
}

fn toy_run(name: &'static str, file: &str) -> ToyRun {
    let cfg = RunConfig::load(&config_path(file)).unwrap();
    let (train, test) = cfg.datasets().unwrap();
    let model_cfg = cfg.model_config(train.dims());
    let start = Instant::now();
    let (vae, _) = MultimodalVae::train(model_cfg.clone(), &train).unwrap();
    let train_secs = start.elapsed().as_secs_f64();
    let eval = EvalConfig {
        ll_examples: 0,
        ..cfg.eval.clone()
    };
    let report = evaluate(&vae, &train, &test, &eval).unwrap();
    ToyRun {
        name,
        train_secs,
        report,
        untrained: MultimodalVae::new(model_cfg).unwrap(),
        train,
        test,
        eval,
    }
}

fn c9_trend(runs: &[ToyRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        let full = run.report.latent_accuracy.iter().max_by_key(|s| s.size).unwrap();
        let by_size = run.report.accuracy_by_size();
        let monotone = by_size.windows(2).all(|w| w[1].1 >= w[0].1 - 0.02);
        let ok = full.size == 5 && full.value >= 0.90 && monotone && run.train_secs <= 600.0;
        pass &= ok;
        let curve: Vec<String> = by_size.iter().map(|(_, a)| format!("{a:.3}")).collect();
        parts.push(format!(
            "{}: all-5 accuracy {:.3}, by size [{}], trained in {:.0} s",
            run.name,
            full.value,
            curve.join(", "),
            run.train_secs
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c10_coherence(run: &ToyRun) -> Outcome {
    let single: Vec<f64> = run
        .report
        .coherence
        .iter()
        .filter(|c| c.size == 1)
        .map(|c| c.value)
        .collect();
    let trained = single.iter().sum::<f64>() / single.len() as f64;
    let worst = single.iter().copied().fold(f64::INFINITY, f64::min);
    let refs = fit_reference_classifiers(&run.train, run.eval.probe_l2, run.eval.probe_iters).unwrap();
    let m = run.test.num_modalities();
    let mut baseline = Vec::new();
    for s in 0..m {
        for t in (0..m).filter(|t| *t != s) {
            let c = coherence(
                &run.untrained,
                &refs,
                &run.test,
                SubsetIndex::single(s),
                t,
                run.eval.coherence_samples,
                run.eval.seed,
            )
            .unwrap();
            baseline.push(c);
        }
    }
    let untrained = baseline.iter().sum::<f64>() / baseline.len() as f64;
    outcome(
        trained >= 0.70 && (untrained - 0.1).abs() <= 0.07,
        format!(
            "{} single-source coherence {trained:.3} (worst pair {worst:.3}, {} pairs); untrained {untrained:.3}",
            run.name,
            single.len()
        ),
    )
}

const DETERMINISM_CONFIG: &str = r#"
seed = 9

[model]
aggregation = "mwb"
latent_dim = 6
hidden = [24]
epochs = 3
batch_size = 32

[data.toy]
num_modalities = 3
examples_per_class = 8
noise = 0.1
seed = 2
"#;

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let outs: Vec<PathBuf> = ["a", "b"]
        .iter()
        .map(|name| {
            cmd_train(&TrainArgs {
                config: config.clone(),
                out: Some(dir.path().join(name)),
                seed: None,
            })
            .unwrap()
        })
        .collect();
    let read = |dir: &Path, f: &str| std::fs::read(dir.join(f)).unwrap();
    let metrics = read(&outs[0], "metrics.csv") == read(&outs[1], "metrics.csv");
    let checkpoint = read(&outs[0], "checkpoint.json") == read(&outs[1], "checkpoint.json");
    outcome(
        metrics,
        format!(
            "metrics.csv byte-identical: {metrics} ({} bytes); checkpoint.json byte-identical: {checkpoint}",
            read(&outs[0], "metrics.csv").len()
        ),
    )
}

fn report(n: usize, what: &str, run: impl FnOnce() -> Outcome) -> bool {
    let (pass, measured) = match catch_unwind(AssertUnwindSafe(run)) {
        Ok(o) => (o.pass, o.measured),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    println!(
        "{} criterion {n}: {what} (measured: {measured})",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn main() {
    let mut all = true;
    all &= report(
        1,
        "closed-form divergences match numeric oracles",
        c1_divergence_oracles,
    );
    all &= report(
        2,
        "weighted product and mixture minimize their KL objectives",
        c2_optimality,
    );
    all &= report(3, "diagonal W2 barycenter is stationary", c3_stationarity);
    all &= report(
        4,
        "full-covariance fixed point converges and matches the diagonal case",
        c4_fixed_point,
    );
    all &= report(5, "Jensen bound for forward KL and W2", c5_jensen);
    all &= report(6, "barycenter sigma lies between member sigmas", c6_sandwich);
    all &= report(7, "gradient checks for primitives and the full ELBO", c7_autodiff);
    all &= report(
        8,
        "importance-sampled log-likelihood matches the conjugate model",
        c8_analytic_likelihood,
    );

    let runs = catch_unwind(|| vec![toy_run("wb", "toy_wb.toml"), toy_run("mwb", "toy_mwb.toml")]);
    match &runs {
        Ok(runs) => {
            all &= report(9, "toy latent accuracy and its trend in subset size", || c9_trend(runs));
            all &= report(10, "toy cross-modal coherence and untrained baseline", || {
                c10_coherence(&runs[1])
            });
        }
        Err(_) => {
            all &= report(9, "toy latent accuracy and its trend in subset size", || {
                panic!("toy training failed")
            });
            all &= report(10, "toy cross-modal coherence and untrained baseline", || {
                panic!("toy training failed")
            });
        }
    }
    all &= report(11, "training writes byte-identical metrics", c11_determinism);
    if !all {
        std::process::exit(1);
    }
}
