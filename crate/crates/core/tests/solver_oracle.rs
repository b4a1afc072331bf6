//! Value iteration against an exhaustive policy-enumeration oracle.
//!
//! The oracle enumerates every deterministic stationary policy of a small
//! instance, solves each policy's resolvent system alpha u = c + Q u with its
//! own Gaussian elimination (independent of the library's linear algebra and
//! of the iteration under test), and takes the pointwise minimum.

use ctmdp_core::fixtures::{random_conditioned_model, RandomModelSpec};
use ctmdp_core::model::CtmdpModel;
use ctmdp_core::rng::Stream;
use ctmdp_core::solver::{
    bellman_iterate, bellman_residual, dlp_check, extract_policy, initial_value, solve, NormTag,
    ValueFunction,
};

/// Plain Gaussian elimination with partial pivoting, local to this oracle.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        assert!(diag.abs() > 0.0, "resolvent system is singular");
        for row in (col + 1)..n {
            let f = a[row][col] / diag;
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in (row + 1)..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Value of one deterministic stationary policy: (alpha I - Q) u = c.
fn policy_value(model: &CtmdpModel, choice: &[usize]) -> Vec<f64> {
    let n = model.n_states();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        a[i][i] = model.alpha();
        for &(j, rate) in model.kernel().row(i, choice[i]) {
            a[i][j] -= rate;
        }
        b[i] = model.cost(i, choice[i]);
    }
    gauss_solve(a, b)
}

/// Pointwise minimum over all deterministic stationary policies, plus one
/// policy attaining that minimum everywhere.
fn enumeration_oracle(model: &CtmdpModel) -> (Vec<f64>, Vec<usize>) {
    let n = model.n_states();
    let counts: Vec<usize> = (0..n).map(|i| model.actions().n_actions(i)).collect();
    let mut choice = vec![0usize; n];
    let mut best = vec![f64::INFINITY; n];
    let mut values: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    loop {
        let v = policy_value(model, &choice);
        for i in 0..n {
            best[i] = best[i].min(v[i]);
        }
        values.push((choice.clone(), v));
        // odometer
        let mut pos = 0;
        loop {
            if pos == n {
                let (opt_choice, _) = values
                    .iter()
                    .find(|(_, v)| {
                        v.iter()
                            .zip(&best)
                            .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + b.abs()))
                    })
                    .expect("a simultaneously optimal policy exists on finite instances");
                return (best, opt_choice.clone());
            }
            choice[pos] += 1;
            if choice[pos] < counts[pos] {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

/// Action indices within tie tolerance of the Bellman minimum at u.
fn argmin_set(model: &CtmdpModel, u: &[f64], state: usize) -> Vec<usize> {
    let mut candidates = Vec::new();
    for k in 0..model.actions().n_actions(state) {
        let mut value = model.cost(state, k);
        for &(j, rate) in model.kernel().row(state, k) {
            value += rate * u[j];
        }
        candidates.push(value);
    }
    let best = candidates.iter().copied().fold(f64::INFINITY, f64::min);
    (0..candidates.len())
        .filter(|&k| candidates[k] - best <= 1e-9 * (1.0 + best.abs()))
        .collect()
}

#[test]
fn solve_matches_the_enumeration_oracle() {
    let mut stream = Stream::from_seed(31);
    let spec = RandomModelSpec::default();
    for round in 0..60 {
        let model = random_conditioned_model(&mut stream, &spec);
        let report = solve(&model, 1e-12, 200_000).unwrap();
        assert!(report.converged, "round {round} did not converge");
        let (oracle, oracle_policy) = enumeration_oracle(&model);
        for (i, (&got, &want)) in report.value.values.iter().zip(&oracle).enumerate() {
            assert!(
                (got - want).abs() <= 1e-8,
                "round {round}, state {i}: {got} vs {want}"
            );
        }
        // the oracle's optimal action is inside the argmin set of u*
        for i in 0..model.n_states() {
            let set = argmin_set(&model, &report.value.values, i);
            assert!(
                set.contains(&oracle_policy[i]),
                "round {round}, state {i}: oracle action {} not in {set:?}",
                oracle_policy[i]
            );
        }
        // extract_policy picks the smallest argmin index
        let policy = extract_policy(&model, &report.value);
        for i in 0..model.n_states() {
            let set = argmin_set(&model, &report.value.values, i);
            assert_eq!(policy.choice[i], set[0]);
        }
    }
}

#[test]
fn iterates_stay_monotone_and_inside_the_envelope() {
    let mut stream = Stream::from_seed(77);
    let spec = RandomModelSpec::default();
    for _ in 0..40 {
        let model = random_conditioned_model(&mut stream, &spec);
        let envelope = initial_value(&model).unwrap();
        let mut u = ValueFunction::new(envelope.values.clone(), NormTag::WPrime);
        for _ in 0..200 {
            let next = bellman_iterate(&model, &u).unwrap();
            for i in 0..model.n_states() {
                let slack = 1e-12 * model.weights().w[i];
                assert!(next.values[i] <= u.values[i] + slack);
                assert!(next.values[i].abs() <= envelope.values[i] + slack);
            }
            u = next;
        }
    }
}

#[test]
fn sup_norm_change_contracts_at_the_uniformization_rate() {
    let spec = RandomModelSpec {
        unit_prime_weight: true,
        ..RandomModelSpec::default()
    };
    let mut stream = Stream::from_seed(5150);
    for _ in 0..25 {
        let model = random_conditioned_model(&mut stream, &spec);
        let report = solve(&model, 1e-13, 100_000).unwrap();
        let qbar_max = (0..model.n_states())
            .map(|i| model.sup_rate(i))
            .fold(0.0, f64::max);
        let coef = (1.0 + qbar_max) / (model.alpha() + 1.0 + qbar_max);
        for pair in report.history.windows(2) {
            // near convergence the changes are pure rounding noise; skip them
            if pair[0].sup_change > 1e-9 {
                let ratio = pair[1].sup_change / pair[0].sup_change;
                assert!(ratio <= coef + 1e-6, "ratio {ratio} vs coefficient {coef}");
            }
        }
    }
}

#[test]
fn cost_scaling_scales_values_and_preserves_argmins() {
    let mut stream = Stream::from_seed(99);
    let spec = RandomModelSpec::default();
    for _ in 0..20 {
        let model = random_conditioned_model(&mut stream, &spec);
        let base = solve(&model, 1e-12, 200_000).unwrap();
        for kappa in [0.5f64, 2.0, 8.0] {
            let scaled_cost: Vec<Vec<f64>> = (0..model.n_states())
                .map(|i| {
                    (0..model.actions().n_actions(i))
                        .map(|k| kappa * model.cost(i, k))
                        .collect()
                })
                .collect();
            let mut ws = model.weights().clone();
            ws.cost_slope *= kappa;
            ws.cost_offset *= kappa;
            ws.cost_slope_prime *= kappa;
            ws.cost_offset_prime *= kappa;
            let scaled = CtmdpModel::new(
                model.states().clone(),
                model.actions().clone(),
                model.kernel().clone(),
                scaled_cost,
                ws,
                model.alpha(),
                model.gamma().to_vec(),
            )
            .unwrap();
            let report = solve(&scaled, 1e-12, 200_000).unwrap();
            for i in 0..model.n_states() {
                let expect = kappa * base.value.values[i];
                assert!(
                    (report.value.values[i] - expect).abs() <= 1e-7 * (1.0 + expect.abs()),
                    "state {i}: {} vs {expect}",
                    report.value.values[i]
                );
                let set_base = argmin_set(&model, &base.value.values, i);
                let scaled_u: Vec<f64> =
                    base.value.values.iter().map(|&v| kappa * v).collect();
                let set_scaled = argmin_set(&scaled, &scaled_u, i);
                assert_eq!(set_base, set_scaled, "argmin set changed at state {i}");
            }
        }
    }
}

#[test]
fn solved_value_is_dlp_feasible_and_dominates_probes() {
    let mut stream = Stream::from_seed(404);
    let spec = RandomModelSpec::default();
    for _ in 0..20 {
        let model = random_conditioned_model(&mut stream, &spec);
        let tol = 1e-12;
        let report = solve(&model, tol, 200_000).unwrap();
        // stopping tolerance -> Bellman residual -> raw DLP slack
        let qbar_max = (0..model.n_states())
            .map(|i| model.sup_rate(i))
            .fold(0.0, f64::max);
        let wp_max = model
            .weights()
            .w_prime
            .iter()
            .copied()
            .fold(0.0, f64::max);
        let k_factor = (model.alpha() + 1.0 + qbar_max) * wp_max / model.alpha();
        let dlp = dlp_check(&model, &report.value, k_factor * tol);
        assert!(dlp.feasible, "slack {}", dlp.feasibility_slack);

        // feasible-by-construction probes never beat the solved objective
        let n = model.n_states();
        for _ in 0..20 {
            let shift = stream.uniform(0.1, 1.0);
            let bump: Vec<f64> = (0..n).map(|_| stream.uniform(0.0, 1.0)).collect();
            let worst_coupling = (0..n)
                .flat_map(|i| (0..model.actions().n_actions(i)).map(move |k| (i, k)))
                .map(|(i, k)| {
                    let mut flow = 0.0;
                    for &(j, rate) in model.kernel().row(i, k) {
                        flow += rate * bump[j];
                    }
                    bump[i] - flow / model.alpha()
                })
                .fold(f64::INFINITY, f64::min);
            let beta = if worst_coupling >= 0.0 {
                1.0
            } else {
                0.99 * shift / (-worst_coupling)
            };
            let probe: Vec<f64> = (0..n)
                .map(|i| report.value.values[i] - shift - beta * bump[i])
                .collect();
            let probe_report = dlp_check(
                &model,
                &ValueFunction::new(probe, NormTag::WPrime),
                k_factor * tol,
            );
            assert!(probe_report.feasible, "constructed probe must stay feasible");
            assert!(probe_report.objective <= dlp.objective + 1e-8);
        }

        // bumping u* up on a charged state breaks feasibility or gains nothing
        let x0 = (0..n)
            .max_by(|&a, &b| model.gamma()[a].partial_cmp(&model.gamma()[b]).unwrap())
            .unwrap();
        let mut bumped = report.value.values.clone();
        bumped[x0] += 0.1;
        let bumped_report = dlp_check(
            &model,
            &ValueFunction::new(bumped, NormTag::WPrime),
            k_factor * tol,
        );
        assert!(
            !bumped_report.feasible || bumped_report.objective <= dlp.objective + 1e-8,
            "a strict improvement over the optimal objective slipped through"
        );
    }
}

#[test]
fn residual_converts_from_the_stopping_tolerance() {
    let mut stream = Stream::from_seed(4242);
    let spec = RandomModelSpec::default();
    for _ in 0..20 {
        let model = random_conditioned_model(&mut stream, &spec);
        let tol = 1e-11;
        let report = solve(&model, tol, 200_000).unwrap();
        let qbar_max = (0..model.n_states())
            .map(|i| model.sup_rate(i))
            .fold(0.0, f64::max);
        let k_factor = model.alpha() + 1.0 + qbar_max;
        assert!(report.final_residual <= k_factor * tol);
        let recomputed = bellman_residual(&model, &report.value);
        assert!((recomputed - report.final_residual).abs() <= 1e-15 + 1e-9 * recomputed);
    }
}
