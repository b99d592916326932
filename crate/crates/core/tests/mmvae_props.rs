mod common;

use baryvae::barycenter::{subsets, SubsetIndex};
use baryvae::data::{Modality, MultimodalBatch, MultimodalDataset};
use baryvae::diffgraph::Tensor;
use baryvae::eval::test_log_likelihood;
use baryvae::gaussian::{DiagGaussian, Posterior};
use baryvae::mmvae::*;
use baryvae::rng::SplitRng;
use common::*;

/// Two 1-D modalities, latent 2, Gaussian likelihood.
fn tiny_model(agg: Aggregation, seed: u64) -> MultimodalVae {
    let mut cfg = ModelConfig::new(vec![1, 1], agg);
    cfg.latent_dim = 2;
    cfg.hidden = vec![6];
    cfg.likelihood = Likelihood::Gaussian;
    cfg.beta = 1.0;
    cfg.seed = seed;
    MultimodalVae::new(cfg).unwrap()
}

fn tiny_data(n: usize, seed: u64) -> MultimodalDataset {
    let mut r = rng(seed);
    let base: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let modalities = (0..2)
        .map(|m| Modality {
            name: format!("x{m}"),
            dim: 1,
            data: base
                .iter()
                .map(|b| 0.8 * b + 0.3 * normal(&mut r) + m as f64 * 0.5)
                .collect(),
        })
        .collect();
    MultimodalDataset::new(modalities, vec![0; n], 1).unwrap()
}

#[test]
fn negative_elbo_upper_bounds_the_importance_sampled_likelihood() {
    let data = tiny_data(8, 1);
    let idx: Vec<usize> = (0..data.len()).collect();
    let batch = data.all();
    for agg in Aggregation::ALL {
        let vae = tiny_model(agg, 2);
        // the likelihood estimate scores every modality, so the ELBO must too
        let subset = SubsetIndex::full(2);
        let mut r = SplitRng::new(3);
        let draws = 400;
        let losses: Vec<f64> = (0..draws)
            .map(|_| {
                let noise = ElboNoise::draw(&mut r, vae.noise_components(subset), batch.len(), vae.latent_dim());
                vae.elbo(&batch, subset, &noise).unwrap().loss
            })
            .collect();
        let mean = losses.iter().sum::<f64>() / draws as f64;
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let ll = test_log_likelihood(&vae, &data, &idx, subset, 10_000, 4).unwrap();
        assert!(mean >= -ll - 4.0 * se - 0.01, "{agg}: loss {mean} vs -log p {}", -ll);
    }
}

#[test]
fn mixture_kl_term_bounds_the_exact_kl_from_above() {
    let data = tiny_data(6, 5);
    for agg in [Aggregation::Moe, Aggregation::Mopoe, Aggregation::Mwb] {
        let mut cfg = ModelConfig::new(vec![1, 1], agg);
        cfg.latent_dim = 1;
        cfg.hidden = vec![5];
        cfg.likelihood = Likelihood::Gaussian;
        cfg.seed = 6;
        let vae = MultimodalVae::new(cfg).unwrap();
        for i in 0..data.len() {
            let batch = data.batch(&[i]);
            let subset = SubsetIndex::full(2);
            let noise = ElboNoise::zeros(vae.noise_components(subset), 1, 1);
            let kl_term = vae.elbo(&batch, subset, &noise).unwrap().kl;
            let joint = vae.joint_posteriors(&batch, subset).unwrap();
            let Posterior::Mixture(mix) = &joint[0] else {
                panic!("{agg} should give a mixture")
            };
            let prior = DiagGaussian::standard(1);
            let comps: Vec<&DiagGaussian> = mix.components().iter().chain([&prior]).collect();
            let (lo, hi) = quadrature_window(&comps);
            let exact = quad_kl(log_pdf_mix(mix), log_pdf_1d(&prior), lo, hi, 40_001);
            assert!(kl_term >= exact - 1e-9, "{agg}: bound {kl_term} < exact {exact}");
        }
    }
}

#[test]
fn absent_modalities_are_never_read() {
    let data = toy(3, 2, 0);
    let batch = data.batch(&[0, 5, 11]);
    for agg in Aggregation::ALL {
        let mut cfg = ModelConfig::new(data.dims(), agg);
        cfg.hidden = vec![8];
        cfg.latent_dim = 4;
        let vae = MultimodalVae::new(cfg).unwrap();
        for subset in subsets(3).unwrap().into_iter().filter(|s| !s.is_empty()) {
            let mut poisoned = batch.clone();
            for m in (0..3).filter(|m| !subset.contains(*m)) {
                // wrong width and NaN content
                poisoned.inputs[m] = Tensor::filled(3, 1, f64::NAN);
            }
            let noise = ElboNoise::draw(&mut SplitRng::new(1), vae.noise_components(subset), 3, 4);
            let clean = vae.elbo(&batch, subset, &noise).unwrap();
            let dirty = vae.elbo(&poisoned, subset, &noise).unwrap();
            assert_eq!(clean, dirty, "{agg} {subset}");
            assert_eq!(
                clean.recon.iter().map(|(m, _)| *m).collect::<Vec<_>>(),
                subset.members().collect::<Vec<_>>()
            );
            assert_eq!(
                vae.joint_posteriors(&batch, subset).unwrap(),
                vae.joint_posteriors(&poisoned, subset).unwrap()
            );
            let gen = GenerationNoise::zeros(3, 4);
            let target = (subset.members().next().unwrap() + 1) % 3;
            assert_eq!(
                vae.conditional_generate(&batch, subset, target, &gen).unwrap(),
                vae.conditional_generate(&poisoned, subset, target, &gen).unwrap()
            );
        }
    }
}

#[test]
fn aggregate_examples_through_the_model_api() {
    let g = |m: f64, s: f64| DiagGaussian::new(vec![m], vec![s]).unwrap();
    let prior = DiagGaussian::standard(1);
    let posts = vec![Some(g(0.0, 1.0)), Some(g(2.0, 1.0))];
    let wb_one = aggregate(&posts, Aggregation::Wb, SubsetIndex::single(1), &prior).unwrap();
    assert_eq!(wb_one, Posterior::Gaussian(g(2.0, 1.0)));
    let Posterior::Gaussian(p) = aggregate(&posts, Aggregation::Poe, SubsetIndex::full(2), &prior).unwrap() else {
        panic!()
    };
    assert_eq!(p.mean(), &[1.0]);
    assert!((p.sigma()[0] - 0.5f64.sqrt()).abs() < 1e-15);
    let mwb = aggregate(&posts, Aggregation::Mwb, SubsetIndex::full(2), &prior).unwrap();
    assert_eq!(mwb.components().len(), 4);
    for agg in [Aggregation::Poe, Aggregation::Wb, Aggregation::Moe] {
        assert!(matches!(
            aggregate(&posts, agg, SubsetIndex(0), &prior),
            Err(MmvaeError::EmptySubset(_))
        ));
    }
}

#[test]
fn encoder_contract() {
    let mut cfg = ModelConfig::new(vec![64, 64], Aggregation::Wb);
    cfg.hidden = vec![16];
    let vae = MultimodalVae::new(cfg).unwrap();
    let zeros = MultimodalBatch {
        inputs: vec![Tensor::zeros(5, 64), Tensor::zeros(5, 64)],
        labels: vec![0; 5],
    };
    let enc = vae.encode(&zeros).unwrap();
    assert_eq!(enc.len(), 2);
    assert!(enc.iter().all(|per| per.len() == 5));
    for g in enc.iter().flatten() {
        assert!(g.mean().iter().all(|m| m.is_finite()));
        assert!(g.sigma().iter().all(|s| *s >= 1e-6));
    }
    assert_eq!(enc, vae.encode(&zeros).unwrap());
}

#[test]
fn training_reduces_the_loss_and_is_deterministic() {
    let data = toy(3, 20, 1);
    let mut cfg = ModelConfig::new(data.dims(), Aggregation::Mwb);
    cfg.hidden = vec![32];
    cfg.latent_dim = 8;
    cfg.epochs = 20;
    cfg.seed = 3;
    let (vae, history) = MultimodalVae::train(cfg.clone(), &data).unwrap();
    assert_eq!(history.len(), 20);
    assert!(
        history[19].loss < history[0].loss,
        "{} vs {}",
        history[19].loss,
        history[0].loss
    );
    let (again, history2) = MultimodalVae::train(cfg, &data).unwrap();
    assert_eq!(history, history2);
    assert_eq!(vae.params, again.params);
}

#[test]
fn one_epoch_on_thirty_two_examples() {
    let data = toy(2, 4, 2).subset(&(0..32).collect::<Vec<_>>());
    for agg in Aggregation::ALL {
        let mut cfg = ModelConfig::new(data.dims(), agg);
        cfg.hidden = vec![16];
        cfg.epochs = 1;
        let (_, history) = MultimodalVae::train(cfg, &data).unwrap();
        assert_eq!(history.len(), 1);
        assert!(history[0].loss.is_finite());
        assert_eq!(history[0].recon.len(), 2);
    }
}

#[test]
fn stratified_generation_visits_every_component_in_proportion() {
    let g = |m: f64| DiagGaussian::new(vec![m], vec![1e-3]).unwrap();
    let posts: Vec<Posterior> = (0..400)
        .map(|_| {
            Posterior::Mixture(
                baryvae::gaussian::GaussianMixture::new(vec![g(-1.0), g(0.0), g(1.0), g(2.0)], vec![0.25; 4]).unwrap(),
            )
        })
        .collect();
    let noise = GenerationNoise::draw(&mut SplitRng::new(8), 400, 1);
    let z = sample_posteriors(&posts, &noise).unwrap();
    let mut counts = [0usize; 4];
    for r in 0..400 {
        counts[(z.get(r, 0) + 1.0).round() as usize] += 1;
    }
    assert_eq!(counts, [100; 4]);
}

#[test]
fn config_validation() {
    let ok = ModelConfig::new(vec![4], Aggregation::Poe);
    assert!(ok.validate().is_ok());
    for broken in [
        ModelConfig {
            input_dims: vec![],
            ..ok.clone()
        },
        ModelConfig {
            latent_dim: 0,
            ..ok.clone()
        },
        ModelConfig {
            beta: -1.0,
            ..ok.clone()
        },
        ModelConfig {
            batch_size: 0,
            ..ok.clone()
        },
    ] {
        assert!(matches!(MultimodalVae::new(broken), Err(MmvaeError::Config(_))));
    }
}
