//! Sampling of the controlled jump process, Monte Carlo estimation of the
//! discounted cost, and equation-residual diagnostics.
//!
//! An episode alternates sojourns and jumps: in state x under mixture pi the
//! jump intensity toward y != x is the pi-mixture of the off-diagonal kernel
//! rows, the sojourn survives with the exponential of its integrated total,
//! and the post-jump state is drawn from the normalized mixture. Sojourns are
//! sampled exactly (inverse CDF) whenever the mixture is constant over the
//! sojourn or piecewise constant on declared breakpoints; genuinely
//! time-varying mixtures go through thinning against a per-state rate
//! majorant.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::linalg::{expm, SquareMatrix};
use crate::model::{CtmdpModel, TAU_CONS};
use crate::quad;
use crate::rng::{substream_seed, Stream};
use crate::solver::{DeterministicPolicy, SolverError};

/// Jump-count limit converting a would-be infinite cascade into a flagged,
/// inspectable trajectory.
pub const EXPLOSION_GUARD: usize = 1_000_000;

/// Absolute tolerance of the time quadratures used by the diagnostics.
pub const TIME_QUAD_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum SimError {
    Policy(SolverError),
    /// A mixture evaluator returned something that is not a probability
    /// vector over the admissible actions.
    BadMixture { state: usize },
    /// Thinning requested without a per-state rate majorant.
    MajorantMissing,
    /// A realized mixed rate exceeded the declared majorant.
    MajorantViolated { state: usize, rate: f64, majorant: f64 },
    /// The mixed off-diagonal row carried no mass although the total rate was
    /// positive; the kernel is corrupted.
    EmptyJumpDistribution { state: usize },
    /// alpha <= rho: the horizon-truncation tail bound is undefined.
    TailBoundUndefined { alpha: f64, rho: f64 },
    BadArgument(&'static str),
}

impl core::fmt::Display for SimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SimError::Policy(e) => write!(f, "invalid policy: {e}"),
            SimError::BadMixture { state } => {
                write!(f, "mixture at state {state} is not a probability vector")
            }
            SimError::MajorantMissing => write!(f, "time-varying policy needs a rate majorant"),
            SimError::MajorantViolated { state, rate, majorant } => write!(
                f,
                "realized rate {rate} at state {state} exceeds the majorant {majorant}"
            ),
            SimError::EmptyJumpDistribution { state } => {
                write!(f, "no jump mass at state {state} despite a positive total rate")
            }
            SimError::TailBoundUndefined { alpha, rho } => {
                write!(f, "tail bound needs alpha > rho, got alpha {alpha}, rho {rho}")
            }
            SimError::BadArgument(what) => write!(f, "{what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SimError {}

impl From<SolverError> for SimError {
    fn from(e: SolverError) -> Self {
        SimError::Policy(e)
    }
}

/// The jump history available to a history-dependent evaluator: post-jump
/// states, sojourns between them, and the time of the last jump.
pub struct History<'a> {
    pub states: &'a [usize],
    pub sojourns: &'a [f64],
    pub last_jump: f64,
}

impl History<'_> {
    pub fn current_state(&self) -> usize {
        *self.states.last().expect("history is never empty")
    }
}

pub type MarkovMixture = dyn Fn(usize, f64) -> Vec<f64> + Send + Sync;
pub type HistoryMixture = dyn Fn(&History<'_>, f64) -> Vec<f64> + Send + Sync;

pub enum PolicyKind {
    /// One action per state, constant in time.
    DeterministicStationary(DeterministicPolicy),
    /// One mixture over A(x) per state, constant in time.
    RandomizedStationary(Vec<Vec<f64>>),
    /// Mixture depending on (state, absolute time); sampled by thinning.
    RandomizedMarkov(alloc::boxed::Box<MarkovMixture>),
    /// Mixture depending on the jump history and the elapsed sojourn,
    /// piecewise constant in the elapsed sojourn on the given breakpoints;
    /// sampled exactly piece by piece.
    HistoryDependent {
        breakpoints: Vec<f64>,
        mixture: alloc::boxed::Box<HistoryMixture>,
    },
}

/// A policy plus the optional per-state rate majorant used for thinning.
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub rate_majorant: Option<Vec<f64>>,
}

impl PolicySpec {
    pub fn deterministic(policy: DeterministicPolicy) -> Self {
        PolicySpec {
            kind: PolicyKind::DeterministicStationary(policy),
            rate_majorant: None,
        }
    }

    pub fn randomized_stationary(mixtures: Vec<Vec<f64>>) -> Self {
        PolicySpec {
            kind: PolicyKind::RandomizedStationary(mixtures),
            rate_majorant: None,
        }
    }

    pub fn markov(
        mixture: alloc::boxed::Box<MarkovMixture>,
        rate_majorant: Vec<f64>,
    ) -> Self {
        PolicySpec {
            kind: PolicyKind::RandomizedMarkov(mixture),
            rate_majorant: Some(rate_majorant),
        }
    }

    pub fn history_dependent(
        breakpoints: Vec<f64>,
        mixture: alloc::boxed::Box<HistoryMixture>,
    ) -> Self {
        PolicySpec {
            kind: PolicyKind::HistoryDependent {
                breakpoints,
                mixture,
            },
            rate_majorant: None,
        }
    }

    pub fn validate(&self, model: &CtmdpModel) -> Result<(), SimError> {
        match &self.kind {
            PolicyKind::DeterministicStationary(p) => p.validate(model).map_err(SimError::from),
            PolicyKind::RandomizedStationary(rows) => {
                if rows.len() != model.n_states() {
                    return Err(SimError::Policy(SolverError::PolicyShape));
                }
                for (i, probs) in rows.iter().enumerate() {
                    check_mixture(model, i, probs)?;
                }
                Ok(())
            }
            PolicyKind::RandomizedMarkov(_) => match &self.rate_majorant {
                Some(m) if m.len() == model.n_states() && m.iter().all(|&r| r >= 0.0) => Ok(()),
                Some(_) => Err(SimError::Policy(SolverError::PolicyShape)),
                None => Err(SimError::MajorantMissing),
            },
            PolicyKind::HistoryDependent { breakpoints, .. } => {
                let sorted = breakpoints.windows(2).all(|p| p[0] < p[1]);
                let positive = breakpoints.first().map_or(true, |&b| b > 0.0);
                if sorted && positive {
                    Ok(())
                } else {
                    Err(SimError::BadArgument("breakpoints must be positive and increasing"))
                }
            }
        }
    }
}

fn check_mixture(model: &CtmdpModel, state: usize, probs: &[f64]) -> Result<(), SimError> {
    if probs.len() != model.actions().n_actions(state) {
        return Err(SimError::BadMixture { state });
    }
    let mut sum = 0.0;
    for &p in probs {
        if !(p >= -1e-15) || !p.is_finite() {
            return Err(SimError::BadMixture { state });
        }
        sum += p;
    }
    if fmath::abs(sum - 1.0) > TAU_CONS {
        return Err(SimError::BadMixture { state });
    }
    Ok(())
}

/// Total mixed rate at `state` under action mixture `probs`.
fn mixed_rate(model: &CtmdpModel, state: usize, probs: &[f64]) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            if p > 0.0 {
                p * model.kernel().total_rate(state, k)
            } else {
                0.0
            }
        })
        .sum()
}

/// Draws the post-jump state from the normalized mixed off-diagonal row.
fn sample_jump(
    model: &CtmdpModel,
    state: usize,
    probs: &[f64],
    stream: &mut Stream,
) -> Result<usize, SimError> {
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for (k, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        for &(j, rate) in model.kernel().row(state, k) {
            if j != state && rate > 0.0 {
                targets.push(j);
                weights.push(p * rate);
            }
        }
    }
    match stream.pick_weighted(&weights) {
        Some(idx) => Ok(targets[idx]),
        None => Err(SimError::EmptyJumpDistribution { state }),
    }
}

fn delta_mixture(n_actions: usize, k: usize) -> Vec<f64> {
    let mut probs = vec![0.0; n_actions];
    probs[k] = 1.0;
    probs
}

/// A sampled jump sequence. `times[m]` is the m-th jump moment (`times[0] =
/// 0`), `states[m]` the state occupied on `[times[m], times[m+1])`, and
/// `actions[m]` the logged action of that segment (only deterministic
/// policies realize actions; mixtures log `None`). The final segment extends
/// to `horizon`. When `exploded` is set the episode hit the jump-count guard
/// and its final segment carries no action entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    pub actions: Vec<Option<usize>>,
    pub horizon: f64,
    pub exploded: bool,
}

impl Trajectory {
    pub fn jump_count(&self) -> usize {
        self.times.len() - 1
    }

    pub fn final_state(&self) -> usize {
        *self.states.last().expect("trajectory never empty")
    }

    /// Right-continuous state at time t within the horizon.
    pub fn state_at(&self, t: f64) -> usize {
        match self.times.iter().rposition(|&tm| tm <= t) {
            Some(m) => self.states[m],
            None => self.states[0],
        }
    }
}

enum Step {
    /// No jump before the horizon (absorbing or survived past it).
    Hold,
    Jump { sojourn: f64, next: usize },
}

pub fn simulate_episode(
    model: &CtmdpModel,
    policy: &PolicySpec,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory, SimError> {
    simulate_episode_guarded(model, policy, horizon, seed, EXPLOSION_GUARD)
}

pub fn simulate_episode_guarded(
    model: &CtmdpModel,
    policy: &PolicySpec,
    horizon: f64,
    seed: u64,
    guard: usize,
) -> Result<Trajectory, SimError> {
    if !(horizon > 0.0) {
        return Err(SimError::BadArgument("horizon must be positive"));
    }
    policy.validate(model)?;
    let mut stream = Stream::from_seed(seed);

    let x0 = stream
        .pick_weighted(model.gamma())
        .expect("initial distribution sums to one");
    let mut times = vec![0.0];
    let mut states = vec![x0];
    let mut sojourns: Vec<f64> = Vec::new();
    let mut actions: Vec<Option<usize>> = Vec::new();

    loop {
        let x = *states.last().unwrap();
        let t_m = *times.last().unwrap();

        let (step, action_log) = match &policy.kind {
            PolicyKind::DeterministicStationary(p) => {
                let k = p.choice[x];
                let probs = delta_mixture(model.actions().n_actions(x), k);
                let step = constant_mixture_step(model, x, &probs, horizon - t_m, &mut stream)?;
                (step, Some(k))
            }
            PolicyKind::RandomizedStationary(rows) => {
                let step = constant_mixture_step(model, x, &rows[x], horizon - t_m, &mut stream)?;
                (step, None)
            }
            PolicyKind::RandomizedMarkov(mixture) => {
                let majorant = policy.rate_majorant.as_ref().expect("validated above");
                let step = thinning_step(
                    model,
                    x,
                    t_m,
                    horizon,
                    majorant[x],
                    mixture.as_ref(),
                    &mut stream,
                )?;
                (step, None)
            }
            PolicyKind::HistoryDependent {
                breakpoints,
                mixture,
            } => {
                let history = History {
                    states: &states,
                    sojourns: &sojourns,
                    last_jump: t_m,
                };
                let step = piecewise_step(
                    model,
                    x,
                    &history,
                    breakpoints,
                    mixture.as_ref(),
                    horizon - t_m,
                    &mut stream,
                )?;
                (step, None)
            }
        };

        match step {
            Step::Hold => {
                actions.push(action_log);
                return Ok(Trajectory {
                    times,
                    states,
                    actions,
                    horizon,
                    exploded: false,
                });
            }
            Step::Jump { sojourn, next } => {
                actions.push(action_log);
                times.push(t_m + sojourn);
                sojourns.push(sojourn);
                states.push(next);
                if states.len() - 1 >= guard {
                    actions.push(None);
                    return Ok(Trajectory {
                        times,
                        states,
                        actions,
                        horizon,
                        exploded: true,
                    });
                }
            }
        }
    }
}

/// Exact inverse-CDF sojourn for a mixture constant over the sojourn.
fn constant_mixture_step(
    model: &CtmdpModel,
    state: usize,
    probs: &[f64],
    remaining: f64,
    stream: &mut Stream,
) -> Result<Step, SimError> {
    let rate = mixed_rate(model, state, probs);
    if rate <= 0.0 {
        return Ok(Step::Hold);
    }
    let sojourn = stream.exp(rate);
    if sojourn >= remaining {
        return Ok(Step::Hold);
    }
    let next = sample_jump(model, state, probs, stream)?;
    Ok(Step::Jump { sojourn, next })
}

/// Exact piecewise-exponential sojourn for a mixture piecewise constant in
/// the elapsed sojourn.
fn piecewise_step(
    model: &CtmdpModel,
    state: usize,
    history: &History<'_>,
    breakpoints: &[f64],
    mixture: &HistoryMixture,
    remaining: f64,
    stream: &mut Stream,
) -> Result<Step, SimError> {
    let mut target = stream.exp(1.0);
    let mut piece_start = 0.0;
    for piece in 0..=breakpoints.len() {
        let piece_end = breakpoints.get(piece).copied();
        let probs = mixture(history, piece_start);
        check_mixture(model, state, &probs)?;
        let rate = mixed_rate(model, state, &probs);
        match piece_end {
            Some(end) => {
                let len = end - piece_start;
                if rate > 0.0 && rate * len >= target {
                    let sojourn = piece_start + target / rate;
                    if sojourn >= remaining {
                        return Ok(Step::Hold);
                    }
                    let next = sample_jump(model, state, &probs, stream)?;
                    return Ok(Step::Jump { sojourn, next });
                }
                target -= rate * len;
                piece_start = end;
                if piece_start >= remaining {
                    return Ok(Step::Hold);
                }
            }
            None => {
                // final piece stretches forever
                if rate <= 0.0 {
                    return Ok(Step::Hold);
                }
                let sojourn = piece_start + target / rate;
                if sojourn >= remaining {
                    return Ok(Step::Hold);
                }
                let next = sample_jump(model, state, &probs, stream)?;
                return Ok(Step::Jump { sojourn, next });
            }
        }
    }
    unreachable!("the final piece always returns")
}

/// Thinning against a homogeneous majorant for genuinely time-varying
/// mixtures.
fn thinning_step(
    model: &CtmdpModel,
    state: usize,
    t_m: f64,
    horizon: f64,
    majorant: f64,
    mixture: &MarkovMixture,
    stream: &mut Stream,
) -> Result<Step, SimError> {
    if majorant <= 0.0 {
        // a zero majorant asserts a zero rate; verify once
        let probs = mixture(state, t_m);
        check_mixture(model, state, &probs)?;
        let rate = mixed_rate(model, state, &probs);
        if rate > 0.0 {
            return Err(SimError::MajorantViolated {
                state,
                rate,
                majorant,
            });
        }
        return Ok(Step::Hold);
    }
    let mut elapsed = 0.0;
    loop {
        elapsed += stream.exp(majorant);
        if t_m + elapsed >= horizon {
            return Ok(Step::Hold);
        }
        let probs = mixture(state, t_m + elapsed);
        check_mixture(model, state, &probs)?;
        let rate = mixed_rate(model, state, &probs);
        if rate > majorant * (1.0 + 1e-12) {
            return Err(SimError::MajorantViolated {
                state,
                rate,
                majorant,
            });
        }
        if stream.next_f64() * majorant < rate {
            let next = sample_jump(model, state, &probs, stream)?;
            return Ok(Step::Jump {
                sojourn: elapsed,
                next,
            });
        }
    }
}

/// Discounted running cost of one trajectory: exact exponential integrals on
/// every segment where the mixed cost rate is constant, adaptive quadrature
/// otherwise.
pub fn discounted_cost(
    model: &CtmdpModel,
    policy: &PolicySpec,
    traj: &Trajectory,
) -> Result<f64, SimError> {
    let alpha = model.alpha();
    let mut total = 0.0;
    let segments = traj.states.len();
    for m in 0..segments {
        let t0 = traj.times[m];
        let t1 = if m + 1 < segments {
            traj.times[m + 1]
        } else {
            traj.horizon
        };
        if t1 <= t0 {
            continue;
        }
        let x = traj.states[m];
        match &policy.kind {
            PolicyKind::DeterministicStationary(p) => {
                let c = model.cost(x, p.choice[x]);
                total += c * discount_integral(alpha, t0, t1);
            }
            PolicyKind::RandomizedStationary(rows) => {
                let c: f64 = rows[x]
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| p * model.cost(x, k))
                    .sum();
                total += c * discount_integral(alpha, t0, t1);
            }
            PolicyKind::HistoryDependent {
                breakpoints,
                mixture,
            } => {
                let sojourns: Vec<f64> = traj.times[1..=m]
                    .iter()
                    .zip(&traj.times[..m])
                    .map(|(&a, &b)| a - b)
                    .collect();
                let history = History {
                    states: &traj.states[..=m],
                    sojourns: &sojourns,
                    last_jump: t0,
                };
                total += piecewise_cost(model, x, &history, breakpoints, mixture.as_ref(), alpha, t0, t1)?;
            }
            PolicyKind::RandomizedMarkov(mixture) => {
                let value = quad::integrate(
                    |t| {
                        let probs = mixture(x, t);
                        let c: f64 = probs
                            .iter()
                            .enumerate()
                            .map(|(k, &p)| p * model.cost(x, k))
                            .sum();
                        fmath::exp(-alpha * t) * c
                    },
                    t0,
                    t1,
                    TIME_QUAD_TOL,
                );
                total += value;
            }
        }
    }
    Ok(total)
}

#[inline]
fn discount_integral(alpha: f64, t0: f64, t1: f64) -> f64 {
    (fmath::exp(-alpha * t0) - fmath::exp(-alpha * t1)) / alpha
}

#[allow(clippy::too_many_arguments)]
fn piecewise_cost(
    model: &CtmdpModel,
    state: usize,
    history: &History<'_>,
    breakpoints: &[f64],
    mixture: &HistoryMixture,
    alpha: f64,
    t0: f64,
    t1: f64,
) -> Result<f64, SimError> {
    let mut total = 0.0;
    let mut piece_start = 0.0;
    for piece in 0..=breakpoints.len() {
        let piece_end = breakpoints
            .get(piece)
            .copied()
            .unwrap_or(f64::INFINITY)
            .min(t1 - t0);
        if piece_end > piece_start {
            let probs = mixture(history, piece_start);
            check_mixture(model, state, &probs)?;
            let c: f64 = probs
                .iter()
                .enumerate()
                .map(|(k, &p)| p * model.cost(state, k))
                .sum();
            total += c * discount_integral(alpha, t0 + piece_start, t0 + piece_end);
            piece_start = piece_end;
        }
        if piece_start >= t1 - t0 {
            break;
        }
    }
    Ok(total)
}

/// Monte Carlo estimate of the discounted cost with its normal-approximation
/// confidence interval and the analytic horizon-truncation bound.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub mean: f64,
    /// Half width of the 95% normal CI.
    pub half_width: f64,
    pub n_episodes: usize,
    /// Analytic bound on the discounted cost mass beyond the horizon.
    pub tail_bound: f64,
    pub horizon: f64,
}

/// Bound on the discounted cost accumulated after `horizon`, from the moment
/// bound E[w] <= e^(rho t) W0 + (b/rho)(e^(rho t) - 1) and the cost envelope
/// M w + c. Needs alpha > rho.
pub fn tail_bound(model: &CtmdpModel, horizon: f64) -> Result<f64, SimError> {
    let ws = model.weights();
    let alpha = model.alpha();
    if alpha <= ws.rho {
        return Err(SimError::TailBoundUndefined {
            alpha,
            rho: ws.rho,
        });
    }
    let w0 = model.gamma_mean(&ws.w);
    let m = ws.cost_slope;
    let c = ws.cost_offset;
    let gap = alpha - ws.rho;
    let b_over_rho = ws.b / ws.rho;
    Ok(m * (w0 + b_over_rho) * fmath::exp(-gap * horizon) / gap
        + (c - m * b_over_rho) * fmath::exp(-alpha * horizon) / alpha)
}

/// Smallest horizon whose tail bound is at most `target`.
pub fn horizon_for_tail(model: &CtmdpModel, target: f64) -> Result<f64, SimError> {
    if !(target > 0.0) {
        return Err(SimError::BadArgument("tail target must be positive"));
    }
    if tail_bound(model, 0.0)? <= target {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while tail_bound(model, hi)? > target {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(SimError::BadArgument("tail target unreachable"));
        }
    }
    let mut lo = hi / 2.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if tail_bound(model, mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

pub fn estimate_discounted_cost(
    model: &CtmdpModel,
    policy: &PolicySpec,
    horizon: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate, SimError> {
    if n < 2 {
        return Err(SimError::BadArgument("need at least two episodes"));
    }
    let tail = tail_bound(model, horizon)?;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for episode in 0..n {
        let traj = simulate_episode(model, policy, horizon, substream_seed(seed, episode as u64))?;
        let cost = discounted_cost(model, policy, &traj)?;
        // Welford
        let delta = cost - mean;
        mean += delta / (episode + 1) as f64;
        m2 += delta * (cost - mean);
    }
    let variance = m2 / (n - 1) as f64;
    let half_width = 1.96 * fmath::sqrt(variance / n as f64);
    Ok(McEstimate {
        mean,
        half_width,
        n_episodes: n,
        tail_bound: tail,
        horizon,
    })
}

/// One-sided Monte Carlo check of the weighted moment bound at time t.
#[derive(Clone, Copy, Debug)]
pub struct MomentReport {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    /// e^(rho t) W0 + (b/rho)(e^(rho t) - 1)
    pub bound: f64,
    pub n_episodes: usize,
    /// mean - 3 stderr <= bound
    pub passed: bool,
}

pub fn weight_moment_check(
    model: &CtmdpModel,
    policy: &PolicySpec,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<MomentReport, SimError> {
    if n < 2 {
        return Err(SimError::BadArgument("need at least two episodes"));
    }
    if !(t > 0.0) {
        return Err(SimError::BadArgument("time must be positive"));
    }
    let ws = model.weights();
    let w0 = model.gamma_mean(&ws.w);
    let bound = fmath::exp(ws.rho * t) * w0 + ws.b / ws.rho * (fmath::exp(ws.rho * t) - 1.0);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for episode in 0..n {
        let traj = simulate_episode(model, policy, t, substream_seed(seed, episode as u64))?;
        let value = ws.w[traj.final_state()];
        let delta = value - mean;
        mean += delta / (episode + 1) as f64;
        m2 += delta * (value - mean);
    }
    let stderr = fmath::sqrt(m2 / (n - 1) as f64 / n as f64);
    Ok(MomentReport {
        t,
        mean,
        stderr,
        bound,
        n_episodes: n,
        passed: mean - 3.0 * stderr <= bound,
    })
}

/// Generator matrix of the chain induced by a deterministic stationary
/// policy.
fn generator(model: &CtmdpModel, policy: &DeterministicPolicy) -> SquareMatrix {
    let n = model.n_states();
    let mut q = SquareMatrix::zeros(n);
    for i in 0..n {
        for &(j, rate) in model.kernel().row(i, policy.choice[i]) {
            q.add_to(i, j, rate);
        }
    }
    q
}

/// Residual of the integral-form forward equation at (x, t, target): the
/// transition probability into the target set minus its initial indicator
/// and the time-integrated gain/loss balance. Transition probabilities come
/// from the matrix exponential, the time integral from adaptive quadrature;
/// both are independent of the identity under test.
pub fn kolmogorov_residual(
    model: &CtmdpModel,
    policy: &DeterministicPolicy,
    x: usize,
    t: f64,
    target: &[usize],
) -> Result<f64, SimError> {
    policy.validate(model)?;
    let n = model.n_states();
    if x >= n || target.iter().any(|&j| j >= n) {
        return Err(SimError::BadArgument("state index out of range"));
    }
    if !(t >= 0.0) {
        return Err(SimError::BadArgument("time must be nonnegative"));
    }
    let mut in_target = vec![false; n];
    for &j in target {
        in_target[j] = true;
    }
    let q = generator(model, policy);

    // per-state gain into the target and loss out of it, constant in time
    let mut net = vec![0.0; n];
    for y in 0..n {
        let mut gain = 0.0;
        for &(j, rate) in model.kernel().row(y, policy.choice[y]) {
            if j != y && in_target[j] {
                gain += rate;
            }
        }
        let loss = if in_target[y] {
            model.kernel().total_rate(y, policy.choice[y])
        } else {
            0.0
        };
        net[y] = gain - loss;
    }

    let p_t: f64 = {
        let e = expm(&q.scale(t));
        (0..n).filter(|&j| in_target[j]).map(|j| e.get(x, j)).sum()
    };
    let start = if in_target[x] { 1.0 } else { 0.0 };
    let integral = quad::integrate(
        |u| {
            let e = expm(&q.scale(u));
            (0..n).map(|y| e.get(x, y) * net[y]).sum::<f64>()
        },
        0.0,
        t,
        TIME_QUAD_TOL,
    );
    Ok(fmath::abs(p_t - start - integral))
}

/// Residual of the martingale identity for `u` under a stationary policy:
/// plain version when `discounted` is false, the e^(-alpha t) version with
/// the -alpha u correction otherwise. Both sides are evaluated by matrix
/// exponential plus quadrature.
pub fn dynkin_residual(
    model: &CtmdpModel,
    policy: &DeterministicPolicy,
    u: &[f64],
    x: usize,
    t: f64,
    discounted: bool,
) -> Result<f64, SimError> {
    policy.validate(model)?;
    let n = model.n_states();
    if u.len() != n {
        return Err(SimError::BadArgument("value vector length mismatch"));
    }
    if x >= n {
        return Err(SimError::BadArgument("state index out of range"));
    }
    if !(t >= 0.0) {
        return Err(SimError::BadArgument("time must be nonnegative"));
    }
    let alpha = model.alpha();
    let q = generator(model, policy);
    let qu = q.matvec(u);

    let expectation_t = {
        let e = expm(&q.scale(t));
        e.row(x).iter().zip(u).map(|(&p, &ui)| p * ui).sum::<f64>()
    };

    if discounted {
        let lhs = fmath::exp(-alpha * t) * expectation_t - u[x];
        let integrand = |v: f64| {
            let e = expm(&q.scale(v));
            let mut acc = 0.0;
            for y in 0..n {
                acc += e.get(x, y) * (qu[y] - alpha * u[y]);
            }
            fmath::exp(-alpha * v) * acc
        };
        let rhs = quad::integrate(integrand, 0.0, t, TIME_QUAD_TOL);
        Ok(fmath::abs(lhs - rhs))
    } else {
        let lhs = expectation_t - u[x];
        let integrand = |v: f64| {
            let e = expm(&q.scale(v));
            (0..n).map(|y| e.get(x, y) * qu[y]).sum::<f64>()
        };
        let rhs = quad::integrate(integrand, 0.0, t, TIME_QUAD_TOL);
        Ok(fmath::abs(lhs - rhs))
    }
}

/// Empirical escape frequency from each core set after truncating the kernel
/// there.
#[derive(Clone, Debug)]
pub struct ProbeRow {
    pub level: u32,
    /// Frequency of sitting outside the core set at time t.
    pub frequency: f64,
    pub stderr: f64,
    pub exploded_episodes: usize,
}

#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// Frequencies non-increasing within three combined standard errors.
    pub decreasing_within_ci: bool,
}

pub fn explosion_probe(
    model: &CtmdpModel,
    policy: &PolicySpec,
    t: f64,
    levels: &[u32],
    n: usize,
    seed: u64,
) -> Result<ProbeReport, SimError> {
    if levels.windows(2).any(|p| p[0] >= p[1]) {
        return Err(SimError::BadArgument("levels must be strictly increasing"));
    }
    if n == 0 {
        return Err(SimError::BadArgument("need at least one episode"));
    }
    let mut rows = Vec::with_capacity(levels.len());
    for (li, &level) in levels.iter().enumerate() {
        let truncated = model.truncate(level);
        let mut escapes = 0usize;
        let mut exploded = 0usize;
        for episode in 0..n {
            let ep_seed = substream_seed(seed, (li * n + episode) as u64);
            let traj = simulate_episode(&truncated, policy, t, ep_seed)?;
            if truncated.states().nesting()[traj.final_state()] > level {
                escapes += 1;
            }
            if traj.exploded {
                exploded += 1;
            }
        }
        let frequency = escapes as f64 / n as f64;
        let stderr = fmath::sqrt(frequency * (1.0 - frequency) / n as f64);
        rows.push(ProbeRow {
            level,
            frequency,
            stderr,
            exploded_episodes: exploded,
        });
    }
    let decreasing_within_ci = rows
        .windows(2)
        .all(|p| p[1].frequency <= p[0].frequency + 3.0 * (p[0].stderr + p[1].stderr));
    Ok(ProbeReport {
        rows,
        decreasing_within_ci,
    })
}
