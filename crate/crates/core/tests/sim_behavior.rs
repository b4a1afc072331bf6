//! Distributional and reproducibility checks for the jump-process sampler.
//!
//! Sojourn laws are tested with Kolmogorov-Smirnov statistics against their
//! analytic CDFs; discounted-cost estimates are tested against exact
//! resolvent solves.

use ctmdp_core::model::{ActionGrid, CtmdpModel, SignedKernel, StateGrid, WeightSystem};
use ctmdp_core::rng::substream_seed;
use ctmdp_core::sim::{
    discounted_cost, estimate_discounted_cost, explosion_probe, horizon_for_tail,
    simulate_episode, simulate_episode_guarded, tail_bound, weight_moment_check, PolicySpec,
    SimError,
};
use ctmdp_core::solver::DeterministicPolicy;

/// One-sample KS critical value at level 0.01.
fn ks_critical(n: usize) -> f64 {
    1.62762 / (n as f64).sqrt()
}

fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

fn two_sample_ks(a: &mut [f64], b: &mut [f64]) -> (f64, f64) {
    a.sort_by(|p, q| p.partial_cmp(q).unwrap());
    b.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (a.len(), b.len());
    let mut d = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let critical = 1.62762 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt();
    (d, critical)
}

fn zero_kernel_model(c: f64, alpha: f64) -> CtmdpModel {
    CtmdpModel::new(
        StateGrid::labeled(2).unwrap(),
        ActionGrid::new(vec![vec![0.0]; 2]).unwrap(),
        SignedKernel::zero(2, &[1, 1]),
        vec![vec![c]; 2],
        WeightSystem::unit(2),
        alpha,
        vec![1.0, 0.0],
    )
    .unwrap()
}

/// Transient state 0 jumping to the absorbing state 1 at rate mu.
fn absorbing_pair(mu: f64) -> CtmdpModel {
    let kernel = SignedKernel::new(
        2,
        vec![vec![vec![(0, -mu), (1, mu)]], vec![vec![]]],
    )
    .unwrap();
    CtmdpModel::new(
        StateGrid::labeled(2).unwrap(),
        ActionGrid::new(vec![vec![1.0], vec![0.0]]).unwrap(),
        kernel,
        vec![vec![1.0], vec![0.0]],
        WeightSystem::unit(2),
        1.0,
        vec![1.0, 0.0],
    )
    .unwrap()
}

/// Two states, two actions each, fully connected.
fn two_state_two_action() -> CtmdpModel {
    let kernel = SignedKernel::new(
        2,
        vec![
            vec![vec![(0, -1.0), (1, 1.0)], vec![(0, -3.0), (1, 3.0)]],
            vec![vec![(0, 2.0), (1, -2.0)], vec![(0, 0.5), (1, -0.5)]],
        ],
    )
    .unwrap();
    CtmdpModel::new(
        StateGrid::labeled(2).unwrap(),
        ActionGrid::new(vec![vec![0.0, 1.0]; 2]).unwrap(),
        kernel,
        vec![vec![1.0, 2.5], vec![-0.5, 0.75]],
        WeightSystem::unit(2),
        0.8,
        vec![0.6, 0.4],
    )
    .unwrap()
}

#[test]
fn zero_kernel_episode_is_a_single_segment() {
    let model = zero_kernel_model(2.0, 1.0);
    let policy = PolicySpec::deterministic(DeterministicPolicy::new(vec![0, 0]));
    let traj = simulate_episode(&model, &policy, 7.5, 11).unwrap();
    assert_eq!(traj.jump_count(), 0);
    assert_eq!(traj.states, vec![0]);
    assert_eq!(traj.times, vec![0.0]);
    assert!(!traj.exploded);
    assert_eq!(traj.state_at(7.4), 0);
}

#[test]
fn zero_kernel_estimate_is_exact_with_zero_variance() {
    let (c, alpha, horizon) = (2.0, 1.0, 5.0);
    let model = zero_kernel_model(c, alpha);
    let policy = PolicySpec::deterministic(DeterministicPolicy::new(vec![0, 0]));
    let est = estimate_discounted_cost(&model, &policy, horizon, 100, 3).unwrap();
    let exact = c * (1.0 - (-alpha * horizon as f64).exp()) / alpha;
    assert!((est.mean - exact).abs() < 1e-14);
    assert_eq!(est.half_width, 0.0);
}

#[test]
fn sojourns_at_a_fixed_rate_state_are_exponential() {
    let mu = 2.5;
    let model = absorbing_pair(mu);
    let policy = PolicySpec::deterministic(DeterministicPolicy::new(vec![0, 0]));
    let n = 100_000;
    let mut sojourns = Vec::with_capacity(n);
    let mut sum = 0.0;
    for ep in 0..n {
        let traj = simulate_episode(&model, &policy, 1e4, substream_seed(9, ep as u64)).unwrap();
        assert_eq!(traj.jump_count(), 1, "exactly one jump to the absorbing state");
        let s = traj.times[1];
        sojourns.push(s);
        sum += s;
    }
    let mean = sum / n as f64;
    let se = (1.0 / mu) / (n as f64).sqrt(); // sd of Exp(mu) is 1/mu
    assert!(
        (mean - 1.0 / mu).abs() < 4.0 * se,
        "mean {mean} vs {}",
        1.0 / mu
    );
    let d = ks_statistic(&mut sojourns, |x| 1.0 - (-mu * x).exp());
    assert!(d < ks_critical(n), "KS statistic {d} at n={n}");
}

#[test]
fn randomized_stationary_mixture_rate_is_the_mixed_total() {
    // two actions with rates 1 and 3 mixed half-half: total rate 2
    let model = two_state_two_action();
    let policy = PolicySpec::randomized_stationary(vec![vec![0.5, 0.5], vec![1.0, 0.0]]);
    let n = 100_000;
    let mut sojourns = Vec::with_capacity(n);
    for ep in 0..n {
        let traj = simulate_episode(&model, &policy, 50.0, substream_seed(21, ep as u64)).unwrap();
        // restrict to episodes starting at state 0
        if traj.states[0] == 0 {
            sojourns.push(traj.times[1]);
        }
    }
    let rate = 0.5 * 1.0 + 0.5 * 3.0;
    let count = sojourns.len();
    let d = ks_statistic(&mut sojourns, |x| 1.0 - (-rate * x).exp());
    assert!(d < ks_critical(count), "KS {d} over {count} samples");
}

#[test]
fn thinning_agrees_with_exact_sampling_for_constant_mixtures() {
    let model = two_state_two_action();
    let exact_policy = PolicySpec::randomized_stationary(vec![vec![0.3, 0.7], vec![0.9, 0.1]]);
    // the same mixture dressed up as time-varying, sampled by thinning
    let thinned_policy = PolicySpec::markov(
        Box::new(|state, _t| {
            if state == 0 {
                vec![0.3, 0.7]
            } else {
                vec![0.9, 0.1]
            }
        }),
        vec![4.0, 4.0],
    );
    let n = 100_000;
    let mut exact = Vec::new();
    let mut thinned = Vec::new();
    for ep in 0..n {
        let t1 = simulate_episode(&model, &exact_policy, 50.0, substream_seed(5, ep as u64)).unwrap();
        if t1.states[0] == 0 {
            exact.push(t1.times[1]);
        }
        let t2 =
            simulate_episode(&model, &thinned_policy, 50.0, substream_seed(1005, ep as u64)).unwrap();
        if t2.states[0] == 0 {
            thinned.push(t2.times[1]);
        }
    }
    let (d, critical) = two_sample_ks(&mut exact, &mut thinned);
    assert!(d < critical, "two-sample KS {d} vs critical {critical}");
}

#[test]
fn piecewise_history_policy_samples_its_piecewise_exponential_law() {
    // at state 0 use the slow action before elapsed time 1, the fast one after
    let model = two_state_two_action();
    let policy = PolicySpec::history_dependent(
        vec![1.0],
        Box::new(|history, u| {
            if history.current_state() == 0 {
                if u < 1.0 {
                    vec![1.0, 0.0] // rate 1
                } else {
                    vec![0.0, 1.0] // rate 3
                }
            } else {
                vec![1.0, 0.0]
            }
        }),
    );
    let n = 100_000;
    let mut sojourns = Vec::new();
    for ep in 0..n {
        let traj = simulate_episode(&model, &policy, 50.0, substream_seed(77, ep as u64)).unwrap();
        if traj.states[0] == 0 {
            sojourns.push(traj.times[1]);
        }
    }
    let count = sojourns.len();
    // survival exp(-min(u,1) - 3 max(u-1, 0))
    let cdf = |u: f64| 1.0 - (-(u.min(1.0) + 3.0 * (u - 1.0).max(0.0))).exp();
    let d = ks_statistic(&mut sojourns, cdf);
    assert!(d < ks_critical(count), "KS {d} over {count}");
}

#[test]
fn majorant_violation_is_detected() {
    let model = two_state_two_action();
    let policy = PolicySpec::markov(
        Box::new(|_state, _t| vec![0.0, 1.0]), // rate 3 at state 0
        vec![1.5, 1.5],                        // declared bound too small
    );
    let mut saw_violation = false;
    for ep in 0..50 {
        match simulate_episode(&model, &policy, 50.0, substream_seed(13, ep)) {
            Err(SimError::MajorantViolated { .. }) => {
                saw_violation = true;
                break;
            }
            Ok(_) => {}
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }
    assert!(saw_violation);
}

#[test]
fn markov_policy_without_majorant_is_rejected() {
    let model = two_state_two_action();
    let mut policy = PolicySpec::markov(Box::new(|_, _| vec![1.0, 0.0]), vec![2.0, 2.0]);
    policy.rate_majorant = None;
    assert!(matches!(
        simulate_episode(&model, &policy, 1.0, 1),
        Err(SimError::MajorantMissing)
    ));
}

#[test]
fn same_seed_reproduces_trajectories_and_estimates_bitwise() {
    let model = two_state_two_action();
    let policy = PolicySpec::randomized_stationary(vec![vec![0.5, 0.5], vec![0.25, 0.75]]);
    let a = simulate_episode(&model, &policy, 25.0, 999).unwrap();
    let b = simulate_episode(&model, &policy, 25.0, 999).unwrap();
    assert_eq!(a, b);
    let ea = estimate_discounted_cost(&model, &policy, 25.0, 500, 1234).unwrap();
    let eb = estimate_discounted_cost(&model, &policy, 25.0, 500, 1234).unwrap();
    assert_eq!(ea.mean.to_bits(), eb.mean.to_bits());
    assert_eq!(ea.half_width.to_bits(), eb.half_width.to_bits());
}

#[test]
fn explosion_guard_flags_runaway_jump_chains() {
    // two states feeding each other at high rate: guard of 16 jumps trips
    let kernel = SignedKernel::new(
        2,
        vec![
            vec![vec![(0, -50.0), (1, 50.0)]],
            vec![vec![(0, 50.0), (1, -50.0)]],
        ],
    )
    .unwrap();
    let model = CtmdpModel::new(
        StateGrid::labeled(2).unwrap(),
        ActionGrid::new(vec![vec![0.0]; 2]).unwrap(),
        kernel,
        vec![vec![0.0]; 2],
        WeightSystem::unit(2),
        1.0,
        vec![1.0, 0.0],
    )
    .unwrap();
    let policy = PolicySpec::deterministic(DeterministicPolicy::new(vec![0, 0]));
    let traj = simulate_episode_guarded(&model, &policy, 1e6, 7, 16).unwrap();
    assert!(traj.exploded);
    assert_eq!(traj.jump_count(), 16);
    assert_eq!(traj.actions.len(), traj.states.len());
}

fn resolvent_value(model: &CtmdpModel, choice: &[usize]) -> Vec<f64> {
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
    // tiny Gaussian elimination, local to the test
    for col in 0..n {
        let p = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, p);
        b.swap(col, p);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
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

#[test]
fn estimates_match_the_resolvent_for_every_deterministic_policy() {
    let model = two_state_two_action();
    let horizon = horizon_for_tail(&model, 1e-6).unwrap();
    for (k0, k1) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let choice = vec![k0, k1];
        let exact_values = resolvent_value(&model, &choice);
        let exact = model.gamma_mean(&exact_values);
        let policy = PolicySpec::deterministic(DeterministicPolicy::new(choice));
        let est = estimate_discounted_cost(&model, &policy, horizon, 20_000, 42).unwrap();
        assert!(
            (est.mean - exact).abs() <= est.half_width + est.tail_bound,
            "policy ({k0},{k1}): {} vs {exact} (hw {})",
            est.mean,
            est.half_width
        );
    }
}

#[test]
fn confidence_intervals_cover_the_exact_value() {
    let model = two_state_two_action();
    let choice = vec![1usize, 0usize];
    let exact = model.gamma_mean(&resolvent_value(&model, &choice));
    let policy = PolicySpec::deterministic(DeterministicPolicy::new(choice));
    let horizon = horizon_for_tail(&model, 1e-7).unwrap();
    let mut covered = 0;
    let reps = 50;
    for rep in 0..reps {
        let est =
            estimate_discounted_cost(&model, &policy, horizon, 2_000, 7_000 + rep as u64).unwrap();
        if (est.mean - exact).abs() <= est.half_width + est.tail_bound {
            covered += 1;
        }
    }
    assert!(covered * 10 >= reps * 9, "coverage {covered}/{reps}");
}

#[test]
fn tail_bound_matches_its_defining_integral() {
    let model = two_state_two_action();
    let horizon = 3.0;
    let got = tail_bound(&model, horizon).unwrap();
    // quadrature of the defining integrand, independent of the closed form
    let ws = model.weights();
    let w0 = model.gamma_mean(&ws.w);
    let alpha = model.alpha();
    let mut acc = 0.0;
    let (mut t, dt) = (horizon, 1e-4);
    while t < horizon + 60.0 {
        let ew = (ws.rho * t).exp() * w0 + ws.b / ws.rho * ((ws.rho * t).exp() - 1.0);
        acc += (-alpha * t).exp() * (ws.cost_slope * ew + ws.cost_offset) * dt;
        t += dt;
    }
    assert!((got - acc).abs() < 1e-3 * (1.0 + acc.abs()), "{got} vs {acc}");
    // horizon_for_tail inverts it
    let target = got * 0.5;
    let h = horizon_for_tail(&model, target).unwrap();
    assert!(h > horizon);
    assert!(tail_bound(&model, h).unwrap() <= target * (1.0 + 1e-9));
}

#[test]
fn moment_check_zero_kernel_is_exact() {
    let model = zero_kernel_model(0.0, 1.0);
    let policy = PolicySpec::deterministic(DeterministicPolicy::new(vec![0, 0]));
    let rep = weight_moment_check(&model, &policy, 1.0, 200, 17).unwrap();
    assert_eq!(rep.mean, 1.0); // w identically 1, no jumps
    assert_eq!(rep.stderr, 0.0);
    assert!(rep.passed);
}

#[test]
fn moment_check_matches_matrix_exponential_expectation() {
    // E[w(xi_t)] = (e^{tQ} w)(x0); build a 2-state chain with distinct weights
    let kernel = SignedKernel::new(
        2,
        vec![
            vec![vec![(0, -1.2), (1, 1.2)]],
            vec![vec![(0, 0.7), (1, -0.7)]],
        ],
    )
    .unwrap();
    let mut ws = WeightSystem::unfitted(vec![1.0, 3.0], vec![1.0, 1.0]);
    ws.rho = f64::NAN; // fitted
    let model = CtmdpModel::new(
        StateGrid::labeled(2).unwrap(),
        ActionGrid::new(vec![vec![0.0]; 2]).unwrap(),
        kernel,
        vec![vec![0.0]; 2],
        ws,
        1.0,
        vec![1.0, 0.0],
    )
    .unwrap();
    let policy = PolicySpec::deterministic(DeterministicPolicy::new(vec![0, 0]));
    let t = 0.8;
    let n = 50_000;
    let rep = weight_moment_check(&model, &policy, t, n, 4242).unwrap();
    // exact: p(t) = (e^{tQ})_{0,.}, expectation = p0 w0 + p1 w1
    let q = [[-1.2, 1.2], [0.7, -0.7]];
    let exact = {
        // 2x2 exponential via eigen-decomposition of a generator:
        // eigenvalues 0 and -(a+b) for [[-a,a],[b,-b]]
        let (a, b) = (q[0][1], q[1][0]);
        let lam = -(a + b);
        let e = (lam * t).exp();
        let p00 = (b + a * e) / (a + b);
        let p01 = (a - a * e) / (a + b);
        p00 * 1.0 + p01 * 3.0
    };
    assert!(
        (rep.mean - exact).abs() <= 4.0 * rep.stderr,
        "{} vs {exact} (se {})",
        rep.mean,
        rep.stderr
    );
    assert!(rep.passed);
}

#[test]
fn explosion_probe_detects_engineered_mass_escape() {
    // state 0 (level 0) drains fast into state 1 (level 1); truncating at
    // level 0 freezes state 1, so the escape frequency approaches
    // 1 - e^{-rt}, here with r = 10 at t = 1: about 0.99995
    let kernel = SignedKernel::new(
        2,
        vec![vec![vec![(0, -10.0), (1, 10.0)]], vec![vec![]]],
    )
    .unwrap();
    let model = CtmdpModel::new(
        StateGrid::new(vec![0.0, 1.0], vec![0, 1]).unwrap(),
        ActionGrid::new(vec![vec![0.0]; 2]).unwrap(),
        kernel,
        vec![vec![0.0]; 2],
        WeightSystem::unit(2),
        1.0,
        vec![1.0, 0.0],
    )
    .unwrap();
    let policy = PolicySpec::deterministic(DeterministicPolicy::new(vec![0, 0]));
    let report = explosion_probe(&model, &policy, 1.0, &[0, 1], 4_000, 88).unwrap();
    let expected = 1.0 - (-10.0f64).exp();
    assert!(
        (report.rows[0].frequency - expected).abs() < 0.02,
        "frequency {} vs {expected}",
        report.rows[0].frequency
    );
    // at level >= max nesting level nothing can escape
    assert_eq!(report.rows[1].frequency, 0.0);
    assert!(report.decreasing_within_ci);
}

#[test]
fn probe_rejects_non_increasing_levels() {
    let model = zero_kernel_model(0.0, 1.0);
    let policy = PolicySpec::deterministic(DeterministicPolicy::new(vec![0, 0]));
    assert!(matches!(
        explosion_probe(&model, &policy, 1.0, &[3, 3], 10, 1),
        Err(SimError::BadArgument(_))
    ));
}

#[test]
fn discounted_cost_integrates_piecewise_policies_in_closed_form() {
    // zero kernel, history policy switching the (only) costly action weights:
    // cost mixes action costs 1 and 5 with a switch at elapsed 2
    let kernel = SignedKernel::zero(1, &[2]);
    let model = CtmdpModel::new(
        StateGrid::labeled(1).unwrap(),
        ActionGrid::new(vec![vec![0.0, 1.0]]).unwrap(),
        kernel,
        vec![vec![1.0, 5.0]],
        WeightSystem::unit(1),
        0.5,
        vec![1.0],
    )
    .unwrap();
    let policy = PolicySpec::history_dependent(
        vec![2.0],
        Box::new(|_h, u| if u < 2.0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }),
    );
    let horizon = 6.0;
    let traj = simulate_episode(&model, &policy, horizon, 3).unwrap();
    let got = discounted_cost(&model, &policy, &traj).unwrap();
    let alpha = 0.5f64;
    let seg = |c: f64, a: f64, b: f64| c * ((-alpha * a).exp() - (-alpha * b).exp()) / alpha;
    let exact = seg(1.0, 0.0, 2.0) + seg(5.0, 2.0, horizon);
    assert!((got - exact).abs() < 1e-12, "{got} vs {exact}");
}
