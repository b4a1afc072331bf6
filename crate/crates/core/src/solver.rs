//! Monotone value iteration for the Bellman equation of a discounted CTMDP,
//! optimal-policy extraction, Bellman residuals and a dual-LP feasibility
//! certificate.
//!
//! The iteration rewrites the generator as a per-state convex combination: at
//! each state it mixes the uniformized transition law `q(.|x,a)/(1+qbar_x) +
//! delta_x` with coefficient `(1+qbar_x)/(alpha+1+qbar_x)`. Started from the
//! explicit upper envelope built out of the drift and cost constants, the
//! sweep produces a pointwise non-increasing sequence whose limit solves the
//! Bellman equation.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::model::{CtmdpModel, TAU_CONS};

/// Which weight a value function's boundedness is measured in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormTag {
    W,
    WPrime,
}

/// A value function over the state grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub norm_tag: NormTag,
}

impl ValueFunction {
    pub fn new(values: Vec<f64>, norm_tag: NormTag) -> Self {
        ValueFunction { values, norm_tag }
    }

    /// Weighted sup norm in the tagged scale.
    pub fn norm(&self, model: &CtmdpModel) -> f64 {
        let weights = match self.norm_tag {
            NormTag::W => &model.weights().w,
            NormTag::WPrime => &model.weights().w_prime,
        };
        weighted_sup(&self.values, weights)
    }
}

/// max over x of |u(x)| / weight(x)
pub fn weighted_sup(values: &[f64], weights: &[f64]) -> f64 {
    values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| fmath::abs(v) / w)
        .fold(0.0, f64::max)
}

/// max over x of |u(x) - v(x)| / weight(x)
pub fn weighted_sup_diff(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(weights)
        .map(|((&x, &y), &w)| fmath::abs(x - y) / w)
        .fold(0.0, f64::max)
}

/// A measurable selector: one action index per state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeterministicPolicy {
    pub choice: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(choice: Vec<usize>) -> Self {
        DeterministicPolicy { choice }
    }

    pub fn validate(&self, model: &CtmdpModel) -> Result<(), SolverError> {
        if self.choice.len() != model.n_states() {
            return Err(SolverError::PolicyShape);
        }
        for (i, &k) in self.choice.iter().enumerate() {
            if k >= model.actions().n_actions(i) {
                return Err(SolverError::PolicyActionOutOfRange { state: i, action: k });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolverError {
    /// alpha <= rho: the initial envelope is undefined.
    DiscountBelowDrift { alpha: f64, rho: f64 },
    /// A uniformized row failed the probability-row verification.
    NonProbabilityRow { state: usize, action: usize },
    /// An iterate rose above its predecessor beyond tolerance, which signals
    /// that the model violates the checked conditions.
    MonotonicityViolated { state: usize, iteration: usize },
    /// An iterate escaped the initial envelope.
    BoundViolated { state: usize, iteration: usize },
    PolicyShape,
    PolicyActionOutOfRange { state: usize, action: usize },
}

impl core::fmt::Display for SolverError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SolverError::DiscountBelowDrift { alpha, rho } => {
                write!(f, "discount {alpha} does not exceed drift constant {rho}")
            }
            SolverError::NonProbabilityRow { state, action } => write!(
                f,
                "uniformized row at state {state}, action {action} is not a probability row"
            ),
            SolverError::MonotonicityViolated { state, iteration } => write!(
                f,
                "iterate {iteration} rose at state {state}; the model violates the drift or cost conditions"
            ),
            SolverError::BoundViolated { state, iteration } => write!(
                f,
                "iterate {iteration} escaped the initial envelope at state {state}"
            ),
            SolverError::PolicyShape => write!(f, "policy length does not match the state grid"),
            SolverError::PolicyActionOutOfRange { state, action } => {
                write!(f, "policy picks action {action} outside the grid of state {state}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SolverError {}

/// Pointwise slack allowed for the monotonicity and envelope assertions,
/// relative to w(x); pure floating-point accumulation headroom.
pub const TAU_MONO: f64 = 1e-12;

/// One recorded sweep.
#[derive(Clone, Copy, Debug)]
pub struct IterationStat {
    pub iteration: usize,
    /// Weighted sup-norm change against the previous iterate (w' scale).
    pub sup_change: f64,
    /// Bellman residual of the new iterate (w' scale).
    pub bellman_residual: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub history: Vec<IterationStat>,
    pub value: ValueFunction,
    pub policy: DeterministicPolicy,
    pub converged: bool,
}

/// The explicit envelope u0(x) = M (alpha w(x) + b) / (alpha (alpha - rho)) + c / alpha,
/// which dominates every iterate in absolute value.
pub fn initial_value(model: &CtmdpModel) -> Result<ValueFunction, SolverError> {
    let ws = model.weights();
    let alpha = model.alpha();
    if alpha <= ws.rho {
        return Err(SolverError::DiscountBelowDrift {
            alpha,
            rho: ws.rho,
        });
    }
    let values = ws
        .w
        .iter()
        .map(|&w| ws.cost_slope * (alpha * w + ws.b) / (alpha * (alpha - ws.rho)) + ws.cost_offset / alpha)
        .collect();
    Ok(ValueFunction::new(values, NormTag::W))
}

/// One sweep of the convex-combination iteration. Verifies along the way that
/// every uniformized row is a probability row.
pub fn bellman_iterate(
    model: &CtmdpModel,
    u: &ValueFunction,
) -> Result<ValueFunction, SolverError> {
    let mut out = vec![0.0; model.n_states()];
    iterate_into(model, &u.values, &mut out)?;
    Ok(ValueFunction::new(out, u.norm_tag))
}

fn iterate_into(model: &CtmdpModel, u: &[f64], out: &mut [f64]) -> Result<(), SolverError> {
    let alpha = model.alpha();
    for i in 0..model.n_states() {
        let qbar = model.sup_rate(i);
        let denom = alpha + 1.0 + qbar;
        let mut best = f64::INFINITY;
        for k in 0..model.actions().n_actions(i) {
            let mut flow = 0.0; // integral of u against the signed row
            let mut row_sum = 0.0;
            let mut bad_sign = false;
            for &(j, rate) in model.kernel().row(i, k) {
                flow += rate * u[j];
                row_sum += rate;
                if j != i && rate < 0.0 {
                    bad_sign = true;
                }
            }
            // The uniformized row q/(1+qbar) + delta_x is a probability row
            // exactly when the signed row is conservative with nonnegative
            // off-diagonal part and q_x(a) <= qbar.
            if bad_sign || fmath::abs(row_sum) > TAU_CONS * (1.0 + qbar) {
                return Err(SolverError::NonProbabilityRow { state: i, action: k });
            }
            let candidate = (model.cost(i, k) + flow + (1.0 + qbar) * u[i]) / denom;
            if candidate < best {
                best = candidate;
            }
        }
        out[i] = best;
    }
    Ok(())
}

/// max over x of |alpha u(x) - min_a { c0(x,a) + integral of u against q }| / w'(x)
pub fn bellman_residual(model: &CtmdpModel, u: &ValueFunction) -> f64 {
    residual_of(model, &u.values)
}

fn residual_of(model: &CtmdpModel, u: &[f64]) -> f64 {
    let alpha = model.alpha();
    let wp = &model.weights().w_prime;
    let mut worst = 0.0f64;
    for i in 0..model.n_states() {
        let mut best = f64::INFINITY;
        for k in 0..model.actions().n_actions(i) {
            let mut flow = 0.0;
            for &(j, rate) in model.kernel().row(i, k) {
                flow += rate * u[j];
            }
            let candidate = model.cost(i, k) + flow;
            if candidate < best {
                best = candidate;
            }
        }
        let r = fmath::abs(alpha * u[i] - best) / wp[i];
        if r > worst {
            worst = r;
        }
    }
    worst
}

/// Smallest action index attaining min_a { c0(x,a) + integral of u against q }.
pub fn extract_policy(model: &CtmdpModel, u: &ValueFunction) -> DeterministicPolicy {
    let mut choice = Vec::with_capacity(model.n_states());
    for i in 0..model.n_states() {
        let mut best = f64::INFINITY;
        let mut best_k = 0usize;
        for k in 0..model.actions().n_actions(i) {
            let mut flow = 0.0;
            for &(j, rate) in model.kernel().row(i, k) {
                flow += rate * u.values[j];
            }
            let candidate = model.cost(i, k) + flow;
            if candidate < best {
                best = candidate;
                best_k = k;
            }
        }
        choice.push(best_k);
    }
    DeterministicPolicy::new(choice)
}

/// Iterates from the initial envelope until the w'-weighted sup-norm change
/// drops to `tol` or `max_iter` sweeps have run. Monotonicity and the
/// envelope bound are asserted on every sweep; either failing is an error,
/// exhausting `max_iter` is a non-converged report.
pub fn solve(model: &CtmdpModel, tol: f64, max_iter: usize) -> Result<SolveReport, SolverError> {
    debug_assert!(tol > 0.0);
    let envelope = initial_value(model)?;
    let w = &model.weights().w;
    let wp = &model.weights().w_prime;

    let mut current = envelope.values.clone();
    let mut next = vec![0.0; current.len()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        iterate_into(model, &current, &mut next)?;
        for i in 0..current.len() {
            let budget = TAU_MONO * w[i];
            if next[i] > current[i] + budget {
                return Err(SolverError::MonotonicityViolated {
                    state: i,
                    iteration: iterations,
                });
            }
            if fmath::abs(next[i]) > envelope.values[i] + budget {
                return Err(SolverError::BoundViolated {
                    state: i,
                    iteration: iterations,
                });
            }
        }
        let sup_change = weighted_sup_diff(&next, &current, wp);
        core::mem::swap(&mut current, &mut next);
        let residual = residual_of(model, &current);
        history.push(IterationStat {
            iteration: iterations,
            sup_change,
            bellman_residual: residual,
        });
        if sup_change <= tol {
            converged = true;
            break;
        }
    }

    let value = ValueFunction::new(current, NormTag::WPrime);
    let final_residual = history.last().map_or(f64::INFINITY, |s| s.bellman_residual);
    let policy = extract_policy(model, &value);
    Ok(SolveReport {
        iterations,
        final_residual,
        history,
        value,
        policy,
        converged,
    })
}

/// Dual-LP feasibility and objective of a candidate value function.
#[derive(Clone, Copy, Debug)]
pub struct DlpReport {
    /// min over (x,a) of (1/alpha) c0(x,a) - v(x) + (1/alpha) integral of v against q.
    pub feasibility_slack: f64,
    /// integral of v against the initial distribution.
    pub objective: f64,
    pub feasible: bool,
}

pub fn dlp_check(model: &CtmdpModel, v: &ValueFunction, tol: f64) -> DlpReport {
    let alpha = model.alpha();
    let mut slack = f64::INFINITY;
    for i in 0..model.n_states() {
        for k in 0..model.actions().n_actions(i) {
            let mut flow = 0.0;
            for &(j, rate) in model.kernel().row(i, k) {
                flow += rate * v.values[j];
            }
            let s = model.cost(i, k) / alpha - v.values[i] + flow / alpha;
            if s < slack {
                slack = s;
            }
        }
    }
    DlpReport {
        feasibility_slack: slack,
        objective: model.gamma_mean(&v.values),
        feasible: slack >= -tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActionGrid, SignedKernel, StateGrid, WeightSystem};

    fn zero_kernel_constant_cost(c: f64, alpha: f64) -> CtmdpModel {
        let n = 3;
        CtmdpModel::new(
            StateGrid::labeled(n).unwrap(),
            ActionGrid::new(vec![vec![0.0, 1.0]; n]).unwrap(),
            SignedKernel::zero(n, &[2, 2, 2]),
            vec![vec![c, c]; n],
            WeightSystem::unit(n),
            alpha,
            vec![1.0, 0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn initial_value_formula() {
        // M=1, c=0, b=0, alpha=1, rho=0.5, w=2 -> u0 = (1*(1*2+0))/(1*(1-0.5)) = 4
        let mut ws = WeightSystem::unfitted(vec![2.0], vec![1.0]);
        ws.rho = 0.5;
        ws.cost_slope = 1.0;
        ws.cost_offset = 0.0;
        let m = CtmdpModel::new(
            StateGrid::labeled(1).unwrap(),
            ActionGrid::new(vec![vec![0.0]]).unwrap(),
            SignedKernel::zero(1, &[1]),
            vec![vec![0.0]],
            ws,
            1.0,
            vec![1.0],
        )
        .unwrap();
        let u0 = initial_value(&m).unwrap();
        assert!((u0.values[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn initial_value_zero_cost_constants() {
        let mut m = zero_kernel_constant_cost(0.0, 1.0);
        m = {
            // force M = 0, c = 0 regardless of fitting
            let mut ws = m.weights().clone();
            ws.cost_slope = 0.0;
            ws.cost_offset = 0.0;
            CtmdpModel::new(
                m.states().clone(),
                m.actions().clone(),
                m.kernel().clone(),
                (0..m.n_states()).map(|i| vec![m.cost(i, 0), m.cost(i, 1)]).collect(),
                ws,
                m.alpha(),
                m.gamma().to_vec(),
            )
            .unwrap()
        };
        let u0 = initial_value(&m).unwrap();
        assert!(u0.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn initial_value_refuses_alpha_below_rho() {
        let mut ws = WeightSystem::unit(1);
        ws.rho = 2.0;
        let m = CtmdpModel::new(
            StateGrid::labeled(1).unwrap(),
            ActionGrid::new(vec![vec![0.0]]).unwrap(),
            SignedKernel::zero(1, &[1]),
            vec![vec![1.0]],
            ws,
            1.0,
            vec![1.0],
        )
        .unwrap();
        assert!(matches!(
            initial_value(&m),
            Err(SolverError::DiscountBelowDrift { .. })
        ));
    }

    #[test]
    fn zero_kernel_iterate_is_the_scalar_recursion() {
        // q = 0: v(x) = c/(alpha+1) + u(x)/(alpha+1), fixed point c/alpha
        let c = 3.0;
        let alpha = 1.0;
        let m = zero_kernel_constant_cost(c, alpha);
        let u = ValueFunction::new(vec![10.0; 3], NormTag::WPrime);
        let v = bellman_iterate(&m, &u).unwrap();
        for &vi in &v.values {
            assert!((vi - (c + 10.0) / (alpha + 1.0)).abs() < 1e-14);
        }
        let report = solve(&m, 1e-12, 10_000).unwrap();
        assert!(report.converged);
        for &vi in &report.value.values {
            assert!((vi - c / alpha).abs() < 1e-10);
        }
        // convergence takes O(log(1/tol)) sweeps at contraction 1/(alpha+1)
        assert!(report.iterations < 60, "{}", report.iterations);
    }

    #[test]
    fn first_iterate_descends_from_the_envelope() {
        let m = zero_kernel_constant_cost(-2.0, 1.5);
        let u0 = initial_value(&m).unwrap();
        let u1 = bellman_iterate(&m, &u0).unwrap();
        for (a, b) in u1.values.iter().zip(&u0.values) {
            assert!(a <= b);
        }
    }

    #[test]
    fn hand_computed_two_state_iterate() {
        // Two states, two actions each.
        // state 0: action 0: rate 1 to state 1, cost 1; action 1: rate 3 to 1, cost 2
        // state 1: action 0: rate 2 to state 0, cost 0; action 1: no jumps, cost 5
        let kernel = SignedKernel::new(
            2,
            vec![
                vec![vec![(0, -1.0), (1, 1.0)], vec![(0, -3.0), (1, 3.0)]],
                vec![vec![(0, 2.0), (1, -2.0)], vec![]],
            ],
        )
        .unwrap();
        let m = CtmdpModel::new(
            StateGrid::labeled(2).unwrap(),
            ActionGrid::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap(),
            kernel,
            vec![vec![1.0, 2.0], vec![0.0, 5.0]],
            WeightSystem::unit(2),
            1.0,
            vec![0.5, 0.5],
        )
        .unwrap();
        let u = ValueFunction::new(vec![2.0, -1.0], NormTag::WPrime);
        // qbar_0 = 3, denom = 5:
        //   a0: (1 + (1*(-1) - 1*2) + 4*2)/5 = (1 - 3 + 8)/5 = 1.2
        //   a1: (2 + (3*(-1) - 3*2) + 4*2)/5 = (2 - 9 + 8)/5 = 0.2  -> min 0.2
        // qbar_1 = 2, denom = 4:
        //   a0: (0 + (2*2 - 2*(-1)) + 3*(-1))/4 = (0 + 6 - 3)/4 = 0.75
        //   a1: (5 + 0 + 3*(-1))/4 = 0.5 -> min 0.5
        let v = bellman_iterate(&m, &u).unwrap();
        assert!((v.values[0] - 0.2).abs() < 1e-14, "{}", v.values[0]);
        assert!((v.values[1] - 0.5).abs() < 1e-14, "{}", v.values[1]);
    }

    #[test]
    fn residual_of_envelope_on_zero_kernel() {
        let c = 2.0;
        let m = zero_kernel_constant_cost(c, 1.0);
        let u0 = initial_value(&m).unwrap();
        let u0 = ValueFunction::new(u0.values, NormTag::WPrime);
        // alpha u0 - c over w' = |u0 - 2| with u0 = M(alpha+b)/... fitted M=2,c=0
        let expected = (m.alpha() * u0.values[0] - c).abs();
        let r = bellman_residual(&m, &u0);
        assert!((r - expected).abs() < 1e-14);
        assert!(r > 0.0);
    }

    #[test]
    fn residual_scales_with_stopping_tolerance() {
        let m = zero_kernel_constant_cost(4.0, 0.7);
        let tol = 1e-10;
        let report = solve(&m, tol, 100_000).unwrap();
        let qmax = (0..m.n_states()).map(|i| m.sup_rate(i)).fold(0.0, f64::max);
        let k = m.alpha() + 1.0 + qmax;
        assert!(report.final_residual <= k * tol, "{}", report.final_residual);
    }

    #[test]
    fn all_actions_tie_yields_first_action() {
        let m = zero_kernel_constant_cost(1.0, 1.0);
        let report = solve(&m, 1e-12, 10_000).unwrap();
        assert!(report.policy.choice.iter().all(|&k| k == 0));
    }

    #[test]
    fn non_convergence_is_flagged_not_aborted() {
        let m = zero_kernel_constant_cost(1.0, 1.0);
        let report = solve(&m, 1e-12, 2).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 2);
    }

    #[test]
    fn dlp_zero_candidate_is_feasible_under_nonnegative_costs() {
        let m = zero_kernel_constant_cost(2.5, 1.0);
        let v = ValueFunction::new(vec![0.0; 3], NormTag::WPrime);
        let rep = dlp_check(&m, &v, 1e-12);
        assert!(rep.feasible);
        assert_eq!(rep.objective, 0.0);
        assert!((rep.feasibility_slack - 2.5).abs() < 1e-15);
    }

    #[test]
    fn dlp_certifies_the_solved_value() {
        let m = zero_kernel_constant_cost(-1.5, 1.2);
        let report = solve(&m, 1e-12, 100_000).unwrap();
        let qmax = (0..m.n_states()).map(|i| m.sup_rate(i)).fold(0.0, f64::max);
        let k = m.alpha() + 1.0 + qmax;
        let rep = dlp_check(&m, &report.value, k * 1e-12);
        assert!(rep.feasible, "slack {}", rep.feasibility_slack);
    }
}
