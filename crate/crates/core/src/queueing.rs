//! One-channel queueing system without waiting room, used both as a model
//! builder and as an analytic oracle.
//!
//! State 0 is an idle server; state x in (0,1] is a job of volume x under
//! service. Jobs arrive at rate lambda with volume density 5 x^4; serving a
//! job of volume x at intensity a completes at rate a/x and earns one unit.
//! Running costs are C1 x (holding) plus C2 a^2 (service effort) minus the
//! completion income rate a/x. The optimal value on (0,1] has the closed form
//! [`u_closed_form`] parametrized by a scalar z whose optimal value is the
//! limit of a contracting fixed-point recursion.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::model::{ActionGrid, CtmdpModel, ModelError, SignedKernel, StateGrid, WeightSystem};
use crate::quad;
use crate::solver::DeterministicPolicy;

#[derive(Clone, Debug, PartialEq)]
pub enum QueueError {
    BadParameter(&'static str),
    /// x outside (0, 1].
    VolumeOutOfRange(f64),
    /// The interior-minimizer branch needs C2 > 0.
    ZeroServiceCost,
    /// The recursion did not contract to tolerance; parameters violate the
    /// contraction premise.
    FixedPointDiverged { iterations: usize },
    /// The optimal intensity exceeds the service budget somewhere; the
    /// payload is the smallest budget that would be admissible.
    NotAdmissible { min_budget: f64 },
    /// The closed-form value at zero disagrees with its defining integral,
    /// which flags fixed-point non-convergence.
    ZeroValueInconsistent { direct: f64, integral: f64 },
    Model(ModelError),
}

impl core::fmt::Display for QueueError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            QueueError::BadParameter(what) => write!(f, "bad parameter: {what}"),
            QueueError::VolumeOutOfRange(x) => write!(f, "volume {x} outside (0, 1]"),
            QueueError::ZeroServiceCost => write!(f, "C2 = 0 has no interior minimizer"),
            QueueError::FixedPointDiverged { iterations } => {
                write!(f, "fixed point not reached after {iterations} iterations")
            }
            QueueError::NotAdmissible { min_budget } => write!(
                f,
                "optimal intensity exceeds the budget; need a_budget >= {min_budget}"
            ),
            QueueError::ZeroValueInconsistent { direct, integral } => write!(
                f,
                "value at zero {direct} disagrees with its integral form {integral}"
            ),
            QueueError::Model(e) => write!(f, "model construction failed: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for QueueError {}

impl From<ModelError> for QueueError {
    fn from(e: ModelError) -> Self {
        QueueError::Model(e)
    }
}

#[inline]
fn pow4(x: f64) -> f64 {
    let s = x * x;
    s * s
}

#[inline]
fn pow5(x: f64) -> f64 {
    let s = x * x;
    s * s * x
}

#[inline]
fn pow6(x: f64) -> f64 {
    let s = x * x;
    s * s * s
}

/// Initial law: an optional atom at 0 plus a uniform density on a subinterval
/// of (0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialLaw {
    pub atom_at_zero: f64,
    pub uniform_lo: f64,
    pub uniform_hi: f64,
}

impl InitialLaw {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        InitialLaw {
            atom_at_zero: 0.0,
            uniform_lo: lo,
            uniform_hi: hi,
        }
    }
}

/// Parameters of the example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueueParams {
    /// Arrival rate, > 0.
    pub lambda: f64,
    /// Discount factor, > 4 lambda.
    pub alpha: f64,
    /// Holding-cost coefficient, >= 0.
    pub c1: f64,
    /// Service-cost coefficient, >= 0.
    pub c2: f64,
    /// Service-intensity budget: A(x) = [0, a_budget / x].
    pub a_budget: f64,
    pub initial: InitialLaw,
}

impl QueueParams {
    /// Desk-scale defaults used throughout the tests.
    pub fn desk_default() -> Self {
        QueueParams {
            lambda: 0.1,
            alpha: 1.0,
            c1: 1.0,
            c2: 1.0,
            a_budget: 3.0,
            initial: InitialLaw::uniform(0.5, 1.0),
        }
    }

    pub fn validate(&self) -> Result<(), QueueError> {
        if !(self.lambda > 0.0) {
            return Err(QueueError::BadParameter("lambda must be positive"));
        }
        if !(self.alpha > 4.0 * self.lambda) {
            return Err(QueueError::BadParameter("alpha must exceed 4 lambda"));
        }
        if !(self.c1 >= 0.0) || !(self.c2 >= 0.0) {
            return Err(QueueError::BadParameter("cost coefficients must be nonnegative"));
        }
        if !(self.a_budget >= 0.0) {
            return Err(QueueError::BadParameter("service budget must be nonnegative"));
        }
        let g = &self.initial;
        if !(g.atom_at_zero >= 0.0 && g.atom_at_zero <= 1.0) {
            return Err(QueueError::BadParameter("atom weight must lie in [0,1]"));
        }
        if !(g.uniform_lo >= 0.0 && g.uniform_lo < g.uniform_hi && g.uniform_hi <= 1.0) {
            return Err(QueueError::BadParameter("uniform support must satisfy 0 <= lo < hi <= 1"));
        }
        if g.atom_at_zero < 1.0 && g.uniform_lo == 0.0 {
            // the density part must keep 1/y^4 integrable
            return Err(QueueError::BadParameter("uniform support must stay away from 0"));
        }
        Ok(())
    }
}

/// The closed-form candidate value at volume x for parameter z:
/// -2 alpha C2 x^2 - z + 2 sqrt(alpha^2 C2^2 x^4 + C1 C2 x^3 + alpha C2 x^2 z).
/// Strictly decreasing in z for fixed x.
pub fn u_closed_form(params: &QueueParams, x: f64, z: f64) -> Result<f64, QueueError> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(QueueError::VolumeOutOfRange(x));
    }
    let (a, c1, c2) = (params.alpha, params.c1, params.c2);
    let radicand = a * a * c2 * c2 * pow4(x) + c1 * c2 * x * x * x + a * c2 * x * x * z;
    Ok(-2.0 * a * c2 * x * x - z + 2.0 * fmath::sqrt(radicand))
}


/// Fixed-point trace of the scalar recursion behind the optimal value.
#[derive(Clone, Debug)]
pub struct FixedPointReport {
    /// z^(0) = 0, z^(1), ... up to the accepted iterate.
    pub z_history: Vec<f64>,
    pub z_star: f64,
    pub iterations: usize,
    /// z^(1) exceeds 1 - C1 / (2 alpha), from the contraction proof.
    pub first_step_bound: bool,
    /// z* below (10/7) C2 lambda + (alpha + lambda) / alpha.
    pub limit_bound: bool,
    /// The same bound with alpha in place of lambda in the first term; the
    /// source states both variants, so the looser one is reported alongside
    /// and not enforced.
    pub limit_bound_alpha_variant: bool,
}

fn z_step(params: &QueueParams, z: f64, quad_tol: f64) -> f64 {
    let integral = quad::integrate(
        |y| u_closed_form(params, y, z).unwrap_or(0.0) * pow4(y),
        0.0,
        1.0,
        quad_tol,
    );
    1.0 - 5.0 * params.lambda / (params.alpha + params.lambda) * integral
}

/// Iterates z <- 1 - (5 lambda / (alpha + lambda)) * integral of u(y, z) y^4
/// from z = 0 until successive iterates differ by at most `tol`.
///
/// Requires C1 <= 2 alpha (the regime in which the recursion contracts with
/// factor below lambda / (alpha + lambda)).
pub fn fixed_point_z(
    params: &QueueParams,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointReport, QueueError> {
    params.validate()?;
    if params.c1 > 2.0 * params.alpha {
        return Err(QueueError::BadParameter("requires C1 <= 2 alpha"));
    }
    if !(tol > 0.0) {
        return Err(QueueError::BadParameter("tolerance must be positive"));
    }
    let quad_tol = tol / 10.0;
    let mut history = vec![0.0];
    let mut z = 0.0;
    let mut converged = false;
    for _ in 0..max_iter {
        let next = z_step(params, z, quad_tol);
        history.push(next);
        let done = fmath::abs(next - z) <= tol;
        z = next;
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(QueueError::FixedPointDiverged {
            iterations: history.len() - 1,
        });
    }
    let z1 = history[1];
    let first_step_bound = z1 > 1.0 - params.c1 / (2.0 * params.alpha);
    let lam_bound = 10.0 / 7.0 * params.c2 * params.lambda
        + (params.alpha + params.lambda) / params.alpha;
    let alpha_bound = 10.0 / 7.0 * params.c2 * params.alpha
        + (params.alpha + params.lambda) / params.alpha;
    Ok(FixedPointReport {
        z_star: z,
        iterations: history.len() - 1,
        first_step_bound,
        limit_bound: z < lam_bound,
        limit_bound_alpha_variant: z < alpha_bound,
        z_history: history,
    })
}

/// The value at the idle state: 1 - z*.
pub fn u_star_at_zero(z_star: f64) -> f64 {
    1.0 - z_star
}

/// [`u_star_at_zero`] cross-checked against its defining identity
/// u*(0) = (5 lambda / (alpha + lambda)) * integral of u*(y) y^4 dy;
/// disagreement flags a non-converged fixed point.
pub fn u_star_at_zero_checked(params: &QueueParams, z_star: f64) -> Result<f64, QueueError> {
    if !(z_star >= 0.0) {
        return Err(QueueError::BadParameter("z_star must be nonnegative"));
    }
    let direct = u_star_at_zero(z_star);
    let integral = quad::integrate(
        |y| u_closed_form(params, y, z_star).unwrap_or(0.0) * pow4(y),
        0.0,
        1.0,
        1e-10,
    ) * 5.0
        * params.lambda
        / (params.alpha + params.lambda);
    const IDENTITY_TOL: f64 = 1e-7;
    if fmath::abs(direct - integral) > IDENTITY_TOL {
        return Err(QueueError::ZeroValueInconsistent { direct, integral });
    }
    Ok(direct)
}

/// The optimal service-intensity policy as a function of the job volume.
#[derive(Clone, Copy, Debug)]
pub struct ServicePolicy {
    params: QueueParams,
    z_star: f64,
}

impl ServicePolicy {
    pub fn z_star(&self) -> f64 {
        self.z_star
    }

    /// Optimal intensity at volume x: (u*(x) + z*) / (2 x C2), zero at x = 0.
    pub fn rate(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        let u = u_closed_form(&self.params, x, self.z_star).unwrap_or(0.0);
        (u + self.z_star) / (2.0 * x * self.params.c2)
    }

    /// Snaps the intensity function, scaled by `kappa`, onto the action grid
    /// of a discretized model: per state the nearest admissible action, ties
    /// toward the smaller index.
    pub fn to_grid_policy_scaled(&self, model: &CtmdpModel, kappa: f64) -> DeterministicPolicy {
        let mut choice = Vec::with_capacity(model.n_states());
        for (i, &x) in model.states().points().iter().enumerate() {
            let target = kappa * self.rate(x);
            let actions = model.actions().actions(i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, &a) in actions.iter().enumerate() {
                let d = fmath::abs(a - target);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            choice.push(best);
        }
        DeterministicPolicy::new(choice)
    }

    pub fn to_grid_policy(&self, model: &CtmdpModel) -> DeterministicPolicy {
        self.to_grid_policy_scaled(model, 1.0)
    }
}

const ADMISSIBILITY_SCAN: usize = 10_000;

/// Builds the optimal policy for a converged z*, verifying nonnegativity and
/// the budget constraint x phi(x) <= a_budget over a fine scan of (0, 1].
pub fn optimal_policy(params: &QueueParams, z_star: f64) -> Result<ServicePolicy, QueueError> {
    params.validate()?;
    if params.c2 == 0.0 {
        return Err(QueueError::ZeroServiceCost);
    }
    let policy = ServicePolicy {
        params: *params,
        z_star,
    };
    let mut sup = 0.0f64;
    for i in 1..=ADMISSIBILITY_SCAN {
        let x = i as f64 / ADMISSIBILITY_SCAN as f64;
        let u = u_closed_form(params, x, z_star)?;
        // u*(x) + z* = 2 (sqrt(...) - alpha C2 x^2) >= 0 by the radical bound
        let needed = (u + z_star) / (2.0 * params.c2);
        if needed < -1e-12 {
            return Err(QueueError::BadParameter("negative optimal intensity"));
        }
        if needed > sup {
            sup = needed;
        }
    }
    if sup > params.a_budget {
        return Err(QueueError::NotAdmissible { min_budget: sup });
    }
    Ok(policy)
}

/// Pointwise infimum of the running cost over the admissible intensities:
/// the interior minimizer a = 1/(2 C2 x) applies when 1/(2 C2) < a_budget,
/// otherwise the budget boundary is active.
pub fn inf_cost_closed_form(params: &QueueParams, x: f64) -> Result<f64, QueueError> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(QueueError::VolumeOutOfRange(x));
    }
    let (c1, c2, budget) = (params.c1, params.c2, params.a_budget);
    if c2 > 0.0 && 1.0 / (2.0 * c2) < budget {
        Ok(c1 * x - 1.0 / (4.0 * c2 * x * x))
    } else if c2 == 0.0 && budget > 0.0 {
        // interior branch undefined: the minimum sits on the budget boundary
        Ok(c1 * x - budget / (x * x))
    } else {
        Ok(c1 * x + c2 * budget * budget / (x * x) - budget / (x * x))
    }
}

/// Number of uniformly spaced base actions per state.
const BASE_ACTIONS: usize = 12;
/// Number of refinement actions inserted around the closed-form minimizer.
const BAND_ACTIONS: usize = 11;
/// Relative half-width of the refinement band.
const BAND_WIDTH: f64 = 0.10;
/// Upper edge of the cell adjacent to 0. Its arrival mass is first_edge^5,
/// negligible for every grid size, so refining the grid does not drag the
/// smallest node (and with it the largest rate bound) toward zero.
const FIRST_EDGE: f64 = 0.01;

/// Discretizes the example on n_states grid points: the exact atom at 0 plus
/// geometrically spaced cells toward 0; each positive node sits at the
/// arrival-density centroid of its cell, so cell-mass quadrature of the
/// arrival kernel is second-order accurate.
pub fn build_discrete_model(params: &QueueParams, n_states: usize) -> Result<CtmdpModel, QueueError> {
    params.validate()?;
    if n_states < 2 {
        return Err(QueueError::BadParameter("need at least two states"));
    }
    let n_pos = n_states - 1;

    // cell edges on (0, 1]
    let mut edges = Vec::with_capacity(n_pos + 1);
    edges.push(0.0);
    if n_pos == 1 {
        edges.push(1.0);
    } else {
        for i in 0..n_pos {
            let t = i as f64 / (n_pos - 1) as f64;
            // geometric from FIRST_EDGE to 1
            edges.push(FIRST_EDGE * fmath::exp(t * fmath::ln(1.0 / FIRST_EDGE)));
        }
        let last = edges.len() - 1;
        edges[last] = 1.0;
    }

    // nodes at arrival-density centroids, masses from the exact y^5 primitive
    let mut points = vec![0.0];
    let mut masses = Vec::with_capacity(n_pos);
    for c in edges.windows(2) {
        let (lo, hi) = (c[0], c[1]);
        let m5 = pow5(hi) - pow5(lo);
        let m6 = pow6(hi) - pow6(lo);
        masses.push(m5);
        points.push(5.0 / 6.0 * m6 / m5);
    }

    // nesting: 0 in the root set, x in set l iff x > 1/(l+1)
    let mut nesting = vec![0u32];
    for &x in &points[1..] {
        nesting.push(level_of(x));
    }

    // closed-form candidate used only to concentrate action-grid resolution
    let z_hat = fixed_point_z(params, 1e-10, 200)?.z_star;

    let mut actions: Vec<Vec<f64>> = Vec::with_capacity(n_states);
    actions.push(vec![0.0]); // A(0) = {0}
    for &x in &points[1..] {
        let a_max = params.a_budget / x;
        let mut acts = Vec::with_capacity(BASE_ACTIONS + BAND_ACTIONS);
        for k in 0..BASE_ACTIONS {
            acts.push(a_max * k as f64 / (BASE_ACTIONS - 1) as f64);
        }
        if params.c2 > 0.0 {
            let candidate =
                (u_closed_form(params, x, z_hat)? + z_hat) / (2.0 * x * params.c2);
            for k in 0..BAND_ACTIONS {
                let t = k as f64 / (BAND_ACTIONS - 1) as f64;
                let a = candidate * (1.0 - BAND_WIDTH + 2.0 * BAND_WIDTH * t);
                acts.push(a.clamp(0.0, a_max));
            }
        }
        acts.sort_by(|p, q| p.partial_cmp(q).unwrap());
        acts.dedup();
        actions.push(acts);
    }

    // kernel rows
    let mut rows: Vec<Vec<Vec<(usize, f64)>>> = Vec::with_capacity(n_states);
    {
        // idle state: arrivals at rate lambda into the volume cells
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(n_pos + 1);
        let mut total = 0.0;
        for (j, &m) in masses.iter().enumerate() {
            let r = params.lambda * m;
            row.push((j + 1, r));
            total += r;
        }
        row.push((0, -total));
        rows.push(vec![row]);
    }
    for (i, &x) in points[1..].iter().enumerate() {
        let state = i + 1;
        let mut per_action = Vec::with_capacity(actions[state].len());
        for &a in &actions[state] {
            if a == 0.0 {
                per_action.push(Vec::new());
            } else {
                let r = a / x;
                per_action.push(vec![(0, r), (state, -r)]);
            }
        }
        rows.push(per_action);
    }

    // running costs
    let mut cost: Vec<Vec<f64>> = Vec::with_capacity(n_states);
    cost.push(vec![0.0]);
    for (i, &x) in points[1..].iter().enumerate() {
        let state = i + 1;
        cost.push(
            actions[state]
                .iter()
                .map(|&a| params.c1 * x + params.c2 * a * a - a / x)
                .collect(),
        );
    }

    // weights, with the drift constants from the closed-form verification
    let mut w = vec![1.0];
    let mut wp = vec![1.0];
    for &x in &points[1..] {
        w.push(1.0 / pow4(x));
        wp.push(1.0 / (x * x));
    }
    let mut ws = WeightSystem::unfitted(w, wp);
    ws.rho = 4.0 * params.lambda;
    ws.b = 0.0;
    ws.rho_prime = 2.0 * params.lambda / 3.0;
    ws.b_prime = 0.0;

    // initial distribution
    let mut gamma = vec![params.initial.atom_at_zero];
    let dens_mass = 1.0 - params.initial.atom_at_zero;
    let (lo, hi) = (params.initial.uniform_lo, params.initial.uniform_hi);
    for c in edges.windows(2) {
        let overlap = (c[1].min(hi) - c[0].max(lo)).max(0.0);
        gamma.push(dens_mass * overlap / (hi - lo));
    }
    // exact cell overlaps sum to one analytically; absorb rounding into the
    // heaviest cell so the distribution check is exact
    let sum: f64 = gamma.iter().sum();
    if let Some(heaviest) = gamma
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
    {
        gamma[heaviest] += 1.0 - sum;
    }

    let model = CtmdpModel::new(
        StateGrid::new(points, nesting)?,
        ActionGrid::new(actions)?,
        SignedKernel::new(n_states, rows)?,
        cost,
        ws,
        params.alpha,
        gamma,
    )?;
    Ok(model)
}

/// Smallest l >= 1 with x > 1/(l+1).
fn level_of(x: f64) -> u32 {
    debug_assert!(x > 0.0 && x <= 1.0);
    let mut level = fmath::ceil(1.0 / x - 1.0).max(1.0) as u32;
    while x * (level as f64 + 1.0) <= 1.0 {
        level += 1;
    }
    level
}

