mod common;

use common::rigged_spec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use proxyfuse::mcmc::{mcse, run_chain, AdaptConfig, BlockScheme, ChainConfig};
use proxyfuse::model::ParamId;

fn rig_config(seed: u64) -> ChainConfig {
    ChainConfig {
        burn_in: 2000,
        post_burn: 20_000,
        thin: 1,
        latent_stride: 20_000,
        seed,
        hold: vec!["kappa".into(), "sigma2_a".into(), "sigma2_delta".into()],
        keep_latents: false,
        ..ChainConfig::default()
    }
}

#[test]
fn rigged_target_is_standard_normal() {
    let spec = rigged_spec();
    let cfg = rig_config(11);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = run_chain(&spec, &cfg, &mut rng).unwrap();
    let b = out.column("beta1").unwrap();
    let n = b.len() as f64;
    let mean = b.iter().sum::<f64>() / n;
    let var = b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = mcse(&b).unwrap();
    assert!(mean.abs() < 3.0 * se, "mean {mean}, mcse {se}");
    assert!((var - 1.0).abs() < 0.1, "variance {var}");
    let acc = out.post_burn_acceptance[0];
    assert!((0.15..=0.40).contains(&acc), "acceptance {acc}");
}

#[test]
fn chain_is_deterministic_for_a_seed() {
    let spec = rigged_spec();
    let cfg = ChainConfig { burn_in: 200, post_burn: 400, latent_stride: 50, ..rig_config(5) };
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        run_chain(&spec, &cfg, &mut rng).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn held_parameters_never_move() {
    let spec = rigged_spec();
    let cfg = ChainConfig { burn_in: 100, post_burn: 300, ..rig_config(3) };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = run_chain(&spec, &cfg, &mut rng).unwrap();
    let k = out.column("kappa").unwrap();
    assert!(k.iter().all(|v| *v == k[0]));
}

#[test]
fn fixed_variants_remove_parameters() {
    let inst = common::random_instance(3, common::Shape::Full);
    let mut spec = inst.spec.clone();
    spec.variant.fix_beta1 = Some(1.0);
    spec.variant.fix_kappa = Some(1000.0);
    let free = spec.free_params();
    assert!(!free.contains(&ParamId::Beta1));
    assert!(!free.contains(&ParamId::Kappa));
    let cfg = ChainConfig {
        burn_in: 50,
        post_burn: 100,
        thin: 1,
        latent_stride: 25,
        ..ChainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let out = run_chain(&spec, &cfg, &mut rng).unwrap();
    assert!(out.latents.iter().all(|l| l.theta.beta1 == 1.0 && l.theta.kappa == 1000.0));
}

#[test]
fn family_blocks_on_a_full_model() {
    let inst = common::random_instance(8, common::Shape::Full);
    let cfg = ChainConfig {
        burn_in: 1500,
        post_burn: 1500,
        thin: 5,
        latent_stride: 100,
        blocks: BlockScheme::Families,
        adapt: AdaptConfig::default(),
        ..ChainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let out = run_chain(&inst.spec, &cfg, &mut rng).unwrap();
    assert_eq!(out.theta_trace.len(), 300);
    assert!(out.blocks.iter().any(|b| b.contains(&"beta1".to_string()) && b.contains(&"kappa".to_string())));
    for a in &out.post_burn_acceptance {
        assert!((0.05..0.7).contains(a), "{:?}", out.post_burn_acceptance);
    }
}

#[test]
fn thin_must_divide_post_burn() {
    let spec = rigged_spec();
    let cfg = ChainConfig { post_burn: 101, thin: 10, ..ChainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(run_chain(&spec, &cfg, &mut rng).is_err());
}
