mod common;

use common::{dense_sigma_a_inv, max_aligned_error, random_instance, random_theta, Shape};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use proxyfuse::linalg::dense::sorted_eigenvalues;
use proxyfuse::model::{
    coupled_part, delta_conditional, evaluate_with, latent_means, log_marginal_posterior,
    marginalize_joint, marginalize_phi, sample_latents_offline, PosteriorEvaluator,
};

#[test]
fn full_model_matches_dense_integration() {
    for seed in 0..10 {
        let e = max_aligned_error(Shape::Full, seed, 4);
        assert!(e < 1e-8, "seed {seed}: {e:e}");
    }
}

#[test]
fn no_discrepancy_matches_dense_integration() {
    for seed in 100..106 {
        let e = max_aligned_error(Shape::NoDiscrepancy, seed, 4);
        assert!(e < 1e-8, "seed {seed}: {e:e}");
    }
}

#[test]
fn no_proxy_matches_dense_integration() {
    for seed in 200..206 {
        let e = max_aligned_error(Shape::NoProxy, seed, 4);
        assert!(e < 1e-8, "seed {seed}: {e:e}");
    }
}

#[test]
fn joint_fields_match_dense_integration() {
    for seed in 300..306 {
        let e = max_aligned_error(Shape::Joint, seed, 4);
        assert!(e < 1e-8, "seed {seed}: {e:e}");
    }
}

#[test]
fn woodbury_apply_matches_dense() {
    let inst = random_instance(7, Shape::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = random_theta(&inst, &mut rng);
    let f = marginalize_phi(&inst.spec, &t).unwrap();
    let dense = dense_sigma_a_inv(&inst, &t);
    let x: Vec<f64> = (0..inst.a.len()).map(|i| (i as f64 * 0.37).sin()).collect();
    let got = f.apply(&x).unwrap();
    let want = &dense * DVector::from_column_slice(&x);
    for (g, w) in got.iter().zip(want.iter()) {
        assert!((g - w).abs() < 1e-9, "{g} vs {w}");
    }
}

#[test]
fn sigma_a_inverse_has_three_zero_eigenvalues() {
    let inst = random_instance(11, Shape::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = random_theta(&inst, &mut rng);
    let ev = sorted_eigenvalues(&dense_sigma_a_inv(&inst, &t));
    let max = ev.last().unwrap().abs();
    let zeros = ev.iter().filter(|v| v.abs() < 1e-8 * max).count();
    assert_eq!(zeros, 3);
}

#[test]
fn determinant_identity_matches_pseudo_determinant() {
    for seed in 20..25 {
        let inst = random_instance(seed, Shape::Full);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_theta(&inst, &mut rng);
        let f = marginalize_phi(&inst.spec, &t).unwrap();
        let ev = sorted_eigenvalues(&dense_sigma_a_inv(&inst, &t));
        let half_log_pdet: f64 = 0.5 * ev[3..].iter().map(|v| v.ln()).sum::<f64>();
        // constants dropped by the implementation: |Q|₊ and |NᵀPᵀPN|
        let qev = sorted_eigenvalues(&inst.q);
        let log_q_plus: f64 = qev[3..].iter().map(|v| v.ln()).sum();
        let null = proxyfuse::linalg::dense::orthonormal_columns(
            &inst.spec.discrepancy().unwrap().prior.null_matrix(),
        );
        let pn = &inst.p_phi * null;
        let log_pn = (pn.transpose() * pn).determinant().ln();
        let got = f.log_det_half() + 0.5 * log_q_plus + 0.5 * log_pn;
        assert!((got - half_log_pdet).abs() < 1e-8 * half_log_pdet.abs().max(1.0), "{got} vs {half_log_pdet}");
    }
}

#[test]
fn joint_with_zero_beta1_factorizes() {
    let inst = random_instance(31, Shape::Joint);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = random_theta(&inst, &mut rng);
    t.beta1 = 0.0;
    let joint = marginalize_joint(&inst.spec, &t).unwrap();
    let phi = marginalize_phi(&inst.spec, &t).unwrap();
    // g only sees the observation rows when β₁ = 0
    let n = inst.y.len();
    let var: Vec<f64> = proxyfuse::model::obs_variance(&t, &inst.spec.obs.meta).unwrap();
    let g_field = &inst.spec.fields[0];
    let g_only = proxyfuse::model::MarginalizedField::new(
        &var,
        &[(g_field.obs_map.as_ref().unwrap(), &g_field.prior.q, t.kappa_g, g_field.prior.rank())],
    )
    .unwrap();
    let sum = g_only.log_det_half() + phi.log_det_half();
    assert!((joint.log_det_half() - sum).abs() < 1e-9);
    let x: Vec<f64> = (0..n + inst.a.len()).map(|i| (i as f64).cos()).collect();
    let got = joint.apply(&x).unwrap();
    let top = g_only.apply(&x[..n]).unwrap();
    let bottom = phi.apply(&x[n..]).unwrap();
    for (g, w) in got.iter().zip(top.iter().chain(&bottom)) {
        assert!((g - w).abs() < 1e-10);
    }
}

#[test]
fn delta_conditional_matches_dense() {
    // find an instance with a co-located pair
    let inst = (0..50)
        .map(|s| random_instance(s, Shape::Full))
        .find(|i| i.spec.obs.n_delta == 1)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_theta(&inst, &mut rng);
    let coupled = coupled_part(&inst.spec, &t).unwrap();
    let ev = evaluate_with(&inst.spec, &t, &coupled).unwrap();
    let (mean, chol) = delta_conditional(&ev.b, t.sigma2_delta).unwrap();
    // log posterior is exactly quadratic in δ: recover mean and precision by finite differences
    let f = |d: f64| {
        let mut s = t.clone();
        s.delta = vec![d];
        log_marginal_posterior(&inst.spec, &s).unwrap()
    };
    let (f0, f1, fm) = (f(0.0), f(1.0), f(-1.0));
    let prec = -(f1 - 2.0 * f0 + fm);
    let lin = 0.5 * (f1 - fm);
    let want_mean = lin / prec;
    let got_prec = (chol.l() * chol.l().transpose())[(0, 0)];
    assert!((got_prec - prec).abs() < 1e-7 * prec, "{got_prec} vs {prec}");
    assert!((mean[0] - want_mean).abs() < 1e-7, "{} vs {want_mean}", mean[0]);
}

#[test]
fn phi_conditional_mean_and_covariance() {
    let inst = random_instance(41, Shape::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = random_theta(&inst, &mut rng);
    let coupled = coupled_part(&inst.spec, &t).unwrap();
    let ev = evaluate_with(&inst.spec, &t, &coupled).unwrap();
    let means = latent_means(&inst.spec, &t, &coupled, &ev.b).unwrap();
    let b = DVector::from_vec(means.b.clone());
    let p_y = inst.z_y.ncols();
    let p_l = inst.z_l_obs.ncols();
    let b_l = b.rows(p_y, p_l);
    let b_a = b.rows(p_y + p_l, inst.z_a.ncols());
    let resid = &inst.a - &inst.z_a * b_a - (&inst.z_l_proxy * b_l) * t.beta1;
    let v = t.sigma2_a;
    let vinv = |i: usize| {
        1.0 / (v + inst
            .proxy_counts
            .as_ref()
            .map_or(0.0, |c| (1.0 / c[i].0 - 1.0 / c[i].1) * t.sigma2_alpha))
    };
    let w = DMatrix::from_fn(inst.a.len(), inst.a.len(), |i, j| if i == j { vinv(i) } else { 0.0 });
    let prec = inst.p_phi.transpose() * &w * &inst.p_phi + &inst.q * t.kappa;
    let cov = prec.clone().try_inverse().unwrap();
    let mean = &cov * inst.p_phi.transpose() * &w * resid;
    let got = means.phi.unwrap();
    for (g, m) in got.iter().zip(mean.iter()) {
        assert!((g - m).abs() < 1e-8, "{g} vs {m}");
    }

    // Monte Carlo check of the draw covariance, holding b at its mean via a degenerate prior
    let mut draws = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in 0..4000 {
        let d = sample_latents_offline(&inst.spec, &t, &coupled, &ev.b, k, &mut rng).unwrap();
        draws.push(d.phi.unwrap());
    }
    // the marginal variance of φ includes the b uncertainty, so it must dominate V_φ
    let m = draws[0].len();
    for j in [0, m / 2, m - 1] {
        let mu: f64 = draws.iter().map(|d| d[j]).sum::<f64>() / draws.len() as f64;
        let var: f64 = draws.iter().map(|d| (d[j] - mu).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!(var > 0.9 * cov[(j, j)], "cell {j}: {var} vs {}", cov[(j, j)]);
    }
}

#[test]
fn proxy_only_touches_a_columns_when_beta1_is_zero() {
    let inst = random_instance(51, Shape::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut t = random_theta(&inst, &mut rng);
    t.beta1 = 0.0;
    let coupled = coupled_part(&inst.spec, &t).unwrap();
    let ev = evaluate_with(&inst.spec, &t, &coupled).unwrap();
    let layout = inst.spec.layout();
    let g = &ev.b.reduced;
    for j in 0..layout.p_l {
        for k in 0..layout.p_a {
            let c = 1 + layout.p_y + layout.p_l + k;
            assert_eq!(g[(1 + layout.p_y + j, c)], 0.0);
        }
    }
}

#[test]
fn evaluator_cache_agrees_with_direct_evaluation() {
    let inst = random_instance(61, Shape::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = random_theta(&inst, &mut rng);
    let mut ev = PosteriorEvaluator::new(&inst.spec);
    let a = ev.log_posterior(&t).unwrap();
    let mut t2 = t.clone();
    t2.beta1 += 0.3;
    t2.sigma2_sub *= 1.5;
    let b = ev.log_posterior(&t2).unwrap();
    assert_eq!(ev.cache_stats(), (1, 1));
    assert!((a - log_marginal_posterior(&inst.spec, &t).unwrap()).abs() < 1e-12);
    assert!((b - log_marginal_posterior(&inst.spec, &t2).unwrap()).abs() < 1e-12);
}

#[test]
fn out_of_support_is_negative_infinity() {
    let inst = random_instance(71, Shape::Full);
    let mut t = inst.spec.default_state();
    t.sigma2_a = 1e5;
    assert_eq!(log_marginal_posterior(&inst.spec, &t).unwrap(), f64::NEG_INFINITY);
    t.sigma2_a = -1.0;
    assert_eq!(log_marginal_posterior(&inst.spec, &t).unwrap(), f64::NEG_INFINITY);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn oracle_equivalence_holds_for_random_instances(seed in 1000u64..100_000) {
        let e = max_aligned_error(Shape::Full, seed, 3);
        prop_assert!(e < 1e-7, "relative error {e:e}");
    }
}
