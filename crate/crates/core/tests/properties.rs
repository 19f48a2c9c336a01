//! Randomized invariants: algebraic identities that must hold over whole
//! parameter regions, not just at the worked examples.

use langevin_core::bounds::BoundParams;
use langevin_core::contractivity::{
    continuous_rate, discrete_rate, generalized_eigenvalues, generalized_eigenvalues_quadratic,
    z_continuous, MetricP,
};
use langevin_core::integrators::{Scheme, SchemeStep};
use langevin_core::kernels::{decay_e, integral_f};
use langevin_core::state_space::{
    build_from_skew, check_invariance_relations, make_model, random_psd, random_row, random_skew,
    ModelKind,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn kernel_identity_holds_everywhere(
        gamma in 1e-2f64..20.0,
        gt in 1e-8f64..10.0,
    ) {
        let t = gt / gamma;
        let lhs = gamma * integral_f(gamma, t);
        let rhs = 1.0 - decay_e(gamma, t);
        prop_assert!((lhs - rhs).abs() <= 1e-15);
    }

    #[test]
    fn kernel_semigroup_composition(
        gamma in 0.1f64..10.0,
        a in 1e-6f64..3.0,
        b in 1e-6f64..3.0,
    ) {
        let f_sum = integral_f(gamma, a + b);
        let f_comp = integral_f(gamma, b) + decay_e(gamma, b) * integral_f(gamma, a);
        prop_assert!((f_sum - f_comp).abs() <= 1e-14);
    }

    #[test]
    fn skew_construction_always_satisfies_relations(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 + (seed % 4) as usize;
        let d = random_psd(n, &mut rng);
        let r = random_skew(n, &mut rng);
        let s = random_psd(n, &mut rng);
        let c = random_row(n, &mut rng);
        let model = build_from_skew(&d, &r, &s, &c).unwrap();
        let report = check_invariance_relations(&model, 1e-12);
        prop_assert!(report.relations_pass, "{report:?}");
    }

    #[test]
    fn eigenvalue_routes_agree_on_random_pencils(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p_raw = random_psd(2, &mut rng) + DMatrix::identity(2, 2) * 0.2;
        let metric = MetricP::new(p_raw).unwrap();
        let z = {
            let raw = random_psd(2, &mut rng) - random_psd(2, &mut rng);
            0.5 * (&raw + raw.transpose())
        };
        let [lo, hi] = generalized_eigenvalues_quadratic(&metric, &z).unwrap();
        let solved = generalized_eigenvalues(&metric, &z);
        let scale = lo.abs().max(hi.abs()).max(1.0);
        prop_assert!((solved[0] - lo).abs() <= 1e-12 * scale);
        prop_assert!((solved[1] - hi).abs() <= 1e-12 * scale);
    }

    #[test]
    fn rates_are_metric_scale_invariant(
        alpha in 0.01f64..100.0,
        c in 0.01f64..0.3,
        h in 0.05f64..1.5,
    ) {
        let metric = MetricP::canonical_underdamped();
        let scaled = metric.scaled(alpha).unwrap();
        let model = make_model(ModelKind::Underdamped, 2.0, c).unwrap();
        let lam = continuous_rate(&metric, &model, 1.0, 10.0).unwrap().rate;
        let lam_scaled = continuous_rate(&scaled, &model, 1.0, 10.0).unwrap().rate;
        prop_assert!((lam - lam_scaled).abs() <= 1e-12 * lam.abs().max(1.0));

        let step = SchemeStep::new(Scheme::Ubu, 2.0, c, h).unwrap();
        let rho = discrete_rate(&metric, &step, 1.0, 10.0).unwrap().rate;
        let rho_scaled = discrete_rate(&scaled, &step, 1.0, 10.0).unwrap().rate;
        prop_assert!((rho - rho_scaled).abs() <= 1e-12 * rho.max(1.0));
    }

    #[test]
    fn z_matrix_is_symmetric(c in 0.01f64..1.0, h_eig in 0.0f64..50.0) {
        let metric = MetricP::canonical_underdamped();
        let model = make_model(ModelKind::Underdamped, 2.0, c).unwrap();
        let z = z_continuous(&metric, &model, h_eig);
        prop_assert!((z.clone() - z.transpose()).norm() == 0.0);
    }

    #[test]
    fn effective_rate_never_exceeds_r(
        r in 0.01f64..0.9,
        c0 in 0.0f64..5.0,
        h in 1e-4f64..1.0,
    ) {
        let params = BoundParams { p: 1, c0, c1: 0.0, c2: 0.0, r, h0: 1.0 };
        prop_assume!(r * h < 1.0);
        if let Ok(r_h) = params.r_h(h) {
            prop_assert!(r_h <= r + 1e-13);
            if c0 == 0.0 {
                prop_assert!((r_h - r).abs() <= 1e-12 * r);
            } else {
                prop_assert!(r_h < r);
            }
        } else {
            // rate unavailable only when the cap is genuinely exceeded
            prop_assert!(c0 > 0.0 && h >= 2.0 * r / (c0 + r * r) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn gronwall_envelope_never_violated(
        a in 0.01f64..0.99,
        b in 0.0f64..10.0,
        c in 0.0f64..10.0,
        z0 in 0.0f64..100.0,
    ) {
        let report = langevin_core::bounds::gronwall_recursion_check(a, b, c, z0, 100).unwrap();
        prop_assert!(report.holds, "gap {}", report.max_gap);
    }
}
