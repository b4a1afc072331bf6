//! Property tests for the model primitives.

use ctmdp_core::fixtures::{random_conditioned_model, RandomModelSpec};
use ctmdp_core::model::{ConditionId, TAU_CONS};
use ctmdp_core::rng::Stream;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kernel_rows_are_conservative_with_nonnegative_off_diagonals(seed in any::<u64>()) {
        let mut stream = Stream::from_seed(seed);
        let model = random_conditioned_model(&mut stream, &RandomModelSpec::default());
        let report = model.validate_kernel();
        prop_assert!(report.passed);
        for row in &report.rows {
            prop_assert!(row.residual <= TAU_CONS);
            prop_assert!(row.negative_off_diagonal.is_none());
            prop_assert!(row.total_rate >= 0.0);
        }
    }

    #[test]
    fn truncation_is_idempotent_and_preserves_surviving_rows(seed in any::<u64>(), level in 0u32..4) {
        let mut stream = Stream::from_seed(seed);
        let model = random_conditioned_model(&mut stream, &RandomModelSpec::default());
        let once = model.truncate(level);
        let twice = once.truncate(level);
        for i in 0..model.n_states() {
            for k in 0..model.actions().n_actions(i) {
                prop_assert_eq!(once.kernel().row(i, k), twice.kernel().row(i, k));
                if model.states().nesting()[i] <= level {
                    prop_assert_eq!(once.kernel().row(i, k), model.kernel().row(i, k));
                } else {
                    prop_assert!(once.kernel().row(i, k).is_empty());
                }
            }
        }
        prop_assert!(once.validate_kernel().passed);
    }

    #[test]
    fn fitted_drift_constant_passes_its_own_check(seed in any::<u64>(), b in 0.0f64..2.0) {
        let mut stream = Stream::from_seed(seed);
        let model = random_conditioned_model(&mut stream, &RandomModelSpec::default());
        let weight = model.weights().w.clone();
        let rho_hat = model.fit_drift_rho(&weight, b);
        prop_assert!(rho_hat > 0.0);
        // rebuild with the fitted constant and re-check the drift clause
        let mut ws = model.weights().clone();
        ws.rho = rho_hat;
        ws.b = b;
        let refit = ctmdp_core::model::CtmdpModel::new(
            model.states().clone(),
            model.actions().clone(),
            model.kernel().clone(),
            (0..model.n_states())
                .map(|i| (0..model.actions().n_actions(i)).map(|k| model.cost(i, k)).collect())
                .collect(),
            ws,
            model.alpha(),
            model.gamma().to_vec(),
        )
        .unwrap();
        let rep = refit.check_condition(ConditionId::C1b).unwrap();
        prop_assert!(rep.passed(), "slack {}", rep.slack());
    }

    #[test]
    fn drift_check_passing_bounds_every_weighted_row(seed in any::<u64>()) {
        let mut stream = Stream::from_seed(seed);
        let model = random_conditioned_model(&mut stream, &RandomModelSpec::default());
        let rep = model.check_condition(ConditionId::C1b).unwrap();
        prop_assert!(rep.passed());
        let ws = model.weights();
        for i in 0..model.n_states() {
            for k in 0..model.actions().n_actions(i) {
                let flow = model.kernel().apply_weight(i, k, &ws.w);
                prop_assert!(
                    flow <= ws.rho * ws.w[i] + ws.b + 1e-8 * ws.w[i],
                    "state {} action {}", i, k
                );
            }
        }
    }
}
