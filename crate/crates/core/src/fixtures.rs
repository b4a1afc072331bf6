//! Randomly generated finite instances that satisfy the drift and cost
//! conditions by construction. Used by the test suites and the randomized
//! probe batteries.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::{ActionGrid, CtmdpModel, SignedKernel, StateGrid, WeightSystem, RHO_MIN};
use crate::rng::Stream;

/// Shape limits for a random instance.
#[derive(Clone, Copy, Debug)]
pub struct RandomModelSpec {
    pub min_states: usize,
    pub max_states: usize,
    pub max_actions: usize,
    /// Largest off-diagonal rate.
    pub rate_scale: f64,
    /// Costs are drawn uniformly from [-cost_scale, cost_scale].
    pub cost_scale: f64,
    /// Force w' = 1; the per-state convex-combination coefficient then
    /// bounds the sup-norm contraction rate exactly.
    pub unit_prime_weight: bool,
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        RandomModelSpec {
            min_states: 2,
            max_states: 4,
            max_actions: 3,
            rate_scale: 2.0,
            cost_scale: 3.0,
            unit_prime_weight: false,
        }
    }
}

/// Draws a conservative model whose weight-system constants are fitted so
/// every checkable condition holds on the grid: the drift constant is the
/// worst drift quotient, the discount sits strictly above it, and the cost
/// constants are the smallest envelopes.
pub fn random_conditioned_model(stream: &mut Stream, spec: &RandomModelSpec) -> CtmdpModel {
    let n = spec.min_states + stream.below(spec.max_states - spec.min_states + 1);
    let n_actions: Vec<usize> = (0..n).map(|_| 1 + stream.below(spec.max_actions)).collect();

    // distinct state points, all on one nesting level
    let points: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let states = StateGrid::new(points, vec![0; n]).expect("valid grid");

    let actions = ActionGrid::new(
        n_actions
            .iter()
            .map(|&k| (0..k).map(|j| j as f64 / 2.0).collect())
            .collect(),
    )
    .expect("valid actions");

    // conservative rows: random nonnegative off-diagonals, diagonal balances
    let mut rows: Vec<Vec<Vec<(usize, f64)>>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut per_action = Vec::with_capacity(n_actions[i]);
        for _ in 0..n_actions[i] {
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut total = 0.0;
            for j in 0..n {
                if j != i && stream.next_f64() < 0.7 {
                    let rate = stream.uniform(0.0, spec.rate_scale);
                    if rate > 0.0 {
                        row.push((j, rate));
                        total += rate;
                    }
                }
            }
            if total > 0.0 {
                row.push((i, -total));
            }
            per_action.push(row);
        }
        rows.push(per_action);
    }
    let kernel = SignedKernel::new(n, rows).expect("valid kernel");

    let cost: Vec<Vec<f64>> = n_actions
        .iter()
        .map(|&k| {
            (0..k)
                .map(|_| stream.uniform(-spec.cost_scale, spec.cost_scale))
                .collect()
        })
        .collect();

    let w: Vec<f64> = (0..n).map(|_| 1.0 + stream.uniform(0.0, 4.0)).collect();
    let w_prime: Vec<f64> = if spec.unit_prime_weight {
        vec![1.0; n]
    } else {
        (0..n).map(|_| 1.0 + stream.uniform(0.0, 2.0)).collect()
    };

    // drift constants fitted with headroom, discount strictly above them
    let rho = drift_sup(&kernel, &w).max(RHO_MIN) * (1.0 + 1e-9);
    let rho_prime = drift_sup(&kernel, &w_prime).max(0.0) * (1.0 + 1e-9);
    let alpha = rho.max(rho_prime) + stream.uniform(0.3, 1.5);

    let mut ws = WeightSystem::unfitted(w, w_prime);
    ws.rho = rho;
    ws.rho_prime = rho_prime;

    let mut gamma: Vec<f64> = (0..n).map(|_| stream.uniform(0.05, 1.0)).collect();
    let total: f64 = gamma.iter().sum();
    for g in &mut gamma {
        *g /= total;
    }
    let correction: f64 = 1.0 - gamma.iter().sum::<f64>();
    gamma[0] += correction;

    CtmdpModel::new(states, actions, kernel, cost, ws, alpha, gamma).expect("consistent instance")
}

fn drift_sup(kernel: &SignedKernel, weight: &[f64]) -> f64 {
    let mut sup = f64::NEG_INFINITY;
    for i in 0..kernel.n_states() {
        for k in 0..kernel.n_actions(i) {
            let v = kernel.apply_weight(i, k, weight) / weight[i];
            if v > sup {
                sup = v;
            }
        }
    }
    sup
}
