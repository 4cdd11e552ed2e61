//! Capacity solver for the discretized constrained problem: maximize
//! mutual information over probability masses on a fixed amplitude grid
//! in [-A, A], subject to an average-power budget and a minimum
//! harvesting-metric requirement.

mod context;
mod dual;
mod inner;

pub(crate) use dual::WarmStart;

use crate::channel::{shannon_capacity, ChannelError, ChannelParams, InputDistribution};
use crate::numerics::log_bessel_i0;
use crate::rectenna::{e_req_from_power, harvested_power_from_ln, CircuitParams};
use serde::{Deserialize, Serialize};
use std::fmt;

const LOG2_E: f64 = std::f64::consts::LOG2_E;

#[derive(Debug, Clone)]
pub enum SolverError {
    /// The required harvesting metric cannot be met by any distribution
    /// on the alphabet within the power budget.
    Infeasible { e_req: f64, ceiling: f64, detail: String },
    /// Iteration budgets ran out before reaching the tolerances.
    NonConvergent {
        detail: String,
        residual_gap: f64,
        best: Option<Box<InputDistribution>>,
    },
    InvalidSpec(String),
    Channel(ChannelError),
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Infeasible { e_req, ceiling, detail } => {
                write!(f, "infeasible: {detail} (e_req {e_req:.6e}, ceiling {ceiling:.6e})")
            }
            Self::NonConvergent { detail, residual_gap, .. } => {
                write!(f, "did not converge: {detail} (residual {residual_gap:.3e})")
            }
            Self::InvalidSpec(msg) => write!(f, "invalid problem: {msg}"),
            Self::Channel(e) => write!(f, "channel error: {e}"),
        }
    }
}

impl std::error::Error for SolverError {}

impl From<ChannelError> for SolverError {
    fn from(e: ChannelError) -> Self {
        Self::Channel(e)
    }
}

/// One constrained capacity problem on a symmetric uniform grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Effective peak amplitude A, volts.
    pub a: f64,
    /// Average-power budget, watts.
    pub sigma_x2: f64,
    /// Harvesting-metric requirement (>= 1).
    pub e_req: f64,
    pub ln_e_req: f64,
    pub circuit: CircuitParams,
    pub channel: ChannelParams,
    /// Number of grid points; odd, so 0 and +-A are grid members.
    pub grid_points: usize,
}

impl ProblemSpec {
    pub fn new(
        a: f64,
        sigma_x2: f64,
        e_req: f64,
        circuit: CircuitParams,
        channel: ChannelParams,
        grid_points: usize,
    ) -> Result<Self, SolverError> {
        if !(a > 0.0) {
            return Err(SolverError::InvalidSpec("peak amplitude must be positive".into()));
        }
        if !(sigma_x2 > 0.0) {
            return Err(SolverError::InvalidSpec("power budget must be positive".into()));
        }
        if !(e_req >= 1.0) {
            return Err(SolverError::InvalidSpec(format!(
                "harvesting requirement must be >= 1, got {e_req}"
            )));
        }
        if grid_points < 3 || grid_points % 2 == 0 {
            return Err(SolverError::InvalidSpec(format!(
                "grid_points must be odd and >= 3, got {grid_points}"
            )));
        }
        Ok(Self { a, sigma_x2, e_req, ln_e_req: e_req.ln(), circuit, channel, grid_points })
    }

    /// Effective peak from separate transmitter and harvester limits:
    /// `A = min(a_t, a_r / (sqrt(2) h_e))`.
    pub fn effective_peak(a_t: f64, a_r: f64, h_e: f64) -> f64 {
        a_t.min(a_r / (std::f64::consts::SQRT_2 * h_e))
    }

    /// Requirement derived from a load power target.
    pub fn with_p_req(
        a: f64,
        sigma_x2: f64,
        p_req: f64,
        circuit: CircuitParams,
        channel: ChannelParams,
        grid_points: usize,
    ) -> Result<Self, SolverError> {
        let e_req = e_req_from_power(&circuit, p_req);
        Self::new(a, sigma_x2, e_req, circuit, channel, grid_points)
    }

    /// Exactly symmetric uniform amplitude grid with endpoints +-A.
    pub fn grid(&self) -> Vec<f64> {
        symmetric_grid(self.a, self.grid_points)
    }
}

/// Uniform symmetric grid built by mirroring, so x[i] == -x[n-1-i]
/// bit-exactly and the endpoints are exactly +-a.
pub(crate) fn symmetric_grid(a: f64, n: usize) -> Vec<f64> {
    assert!(n >= 3 && n % 2 == 1);
    let h = n / 2;
    let mut x = vec![0.0; n];
    for k in 1..=h {
        let v = if k == h { a } else { a * k as f64 / h as f64 };
        x[h + k] = v;
        x[h - k] = -v;
    }
    x
}

/// Symmetric amplitude-shift-keying alphabet `x_k = 2Ak/(M-1) - A`.
pub(crate) fn ask_grid(a: f64, m: usize) -> Vec<f64> {
    assert!(m >= 2);
    let mut x = vec![0.0; m];
    let half = m / 2;
    for k in 0..half {
        let v = a * (m - 1 - 2 * k) as f64 / (m - 1) as f64;
        x[k] = -v;
        x[m - 1 - k] = v;
    }
    x
}

/// Dual prices. `lambda1` is in bits per watt against the raw power
/// residual; `lambda2` is dimensionless against the relative harvesting
/// residual `(e_req - metric)/e_req`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolutionKind {
    Discrete,
    /// Analytic Gaussian optimum of the unbounded-amplitude problem.
    ContinuousGaussian,
}

/// One extracted support atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassPoint {
    pub amplitude: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub distribution: InputDistribution,
    /// Achieved mutual information, bits per channel use.
    pub rate: f64,
    pub multipliers: Multipliers,
    /// E[X^2] of the returned distribution, watts.
    pub achieved_ap: f64,
    /// E[I0(sqrt(2) B h_E X)] of the returned distribution.
    pub achieved_metric: f64,
    /// Delivered DC power implied by the achieved metric, watts.
    pub p_out: f64,
    /// Final stationarity gap of the inner maximizer, bits.
    pub kkt_residual: f64,
    /// Certified distance to the dual upper bound, bits.
    pub dual_gap: f64,
    /// Total inner-iteration count across the solve.
    pub iterations: u64,
    pub mass_points: Vec<MassPoint>,
    pub kind: SolutionKind,
}

/// Stopping tolerances and iteration budgets.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Tolerances {
    /// Duality-gap target, bits.
    pub gap: f64,
    /// Relative constraint-violation target.
    pub constraint: f64,
    /// Complementary-slackness target, bits.
    pub slack: f64,
    /// Inner-iteration budget per solve.
    pub max_inner: usize,
    /// Budget of inner solves across the dual procedure.
    pub max_dual: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { gap: 1e-5, constraint: 1e-7, slack: 1e-6, max_inner: 20_000, max_dual: 500 }
    }
}

/// Maximize the penalized objective `I(F) - l1 g1(F) - l2 g2(F)` over
/// masses on the spec's grid at fixed prices. Returns the maximizer and
/// the objective value in bits.
pub fn inner_maximize(
    spec: &ProblemSpec,
    mult: &Multipliers,
    init: &InputDistribution,
    tol_bits: f64,
    max_iter: usize,
) -> Result<(InputDistribution, f64), SolverError> {
    let grid = spec.grid();
    if init.len() != grid.len() {
        return Err(SolverError::InvalidSpec(format!(
            "init has {} masses for a {}-point grid",
            init.len(),
            grid.len()
        )));
    }
    if init.masses().iter().any(|&p| !(p > 0.0)) {
        return Err(SolverError::InvalidSpec(
            "init must give positive mass to every grid point".into(),
        ));
    }
    let ctx = context::SolveContext::from_amplitudes(
        grid,
        &spec.circuit,
        &spec.channel,
        spec.sigma_x2,
        spec.e_req,
    )?;
    let mut p = init.masses().to_vec();
    let out = inner::maximize(&ctx, mult, &mut p, tol_bits, max_iter as u64, None);
    let dist = InputDistribution::new(ctx.x.clone(), p)?;
    if !out.converged {
        return Err(SolverError::NonConvergent {
            detail: "inner maximizer exhausted max_iter".into(),
            residual_gap: out.eval.gap,
            best: Some(Box::new(dist)),
        });
    }
    Ok((dist, out.eval.j))
}

/// Solve the constrained capacity problem on the spec's grid.
pub fn dual_solve(spec: &ProblemSpec, tol: &Tolerances) -> Result<Solution, SolverError> {
    dual_solve_warm(spec, tol, None).map(|(s, _)| s)
}

pub(crate) fn dual_solve_warm(
    spec: &ProblemSpec,
    tol: &Tolerances,
    warm: Option<&WarmStart>,
) -> Result<(Solution, WarmStart), SolverError> {
    dual::solve_on_grid(
        spec.grid(),
        &spec.circuit,
        &spec.channel,
        spec.sigma_x2,
        spec.e_req,
        tol,
        warm,
    )
}

/// Solve restricted to the M-point amplitude-shift-keying alphabet.
pub fn ask_rate(spec: &ProblemSpec, m: usize) -> Result<Solution, SolverError> {
    ask_rate_warm(spec, m, &Tolerances::default(), None).map(|(s, _)| s)
}

pub(crate) fn ask_rate_warm(
    spec: &ProblemSpec,
    m: usize,
    tol: &Tolerances,
    warm: Option<&WarmStart>,
) -> Result<(Solution, WarmStart), SolverError> {
    if m < 2 {
        return Err(SolverError::InvalidSpec(format!("alphabet size must be >= 2, got {m}")));
    }
    dual::solve_on_grid(
        ask_grid(spec.a, m),
        &spec.circuit,
        &spec.channel,
        spec.sigma_x2,
        spec.e_req,
        tol,
        warm,
    )
}

/// Drop sub-threshold masses and merge maximal runs of adjacent grid
/// points into clusters at their probability-weighted centroids.
pub fn extract_mass_points(dist: &InputDistribution, threshold: f64) -> Vec<MassPoint> {
    assert!(threshold > 0.0 && threshold < 1.0);
    let mut out = Vec::new();
    let mut run_mass = 0.0;
    let mut run_moment = 0.0;
    let mut in_run = false;
    for (&x, &p) in dist.amplitudes().iter().zip(dist.masses()) {
        if p >= threshold {
            run_mass += p;
            run_moment += p * x;
            in_run = true;
        } else if in_run {
            out.push(MassPoint { amplitude: run_moment / run_mass, probability: run_mass });
            run_mass = 0.0;
            run_moment = 0.0;
            in_run = false;
        }
    }
    if in_run {
        out.push(MassPoint { amplitude: run_moment / run_mass, probability: run_mass });
    }
    out
}

/// Problem without a peak-amplitude limit.
#[derive(Debug, Clone)]
pub struct NoPpSpec {
    pub sigma_x2: f64,
    pub e_req: f64,
    pub circuit: CircuitParams,
    pub channel: ChannelParams,
    /// Grid resolution of the base truncation level.
    pub grid_points: usize,
}

/// Solve the problem with the peak constraint removed. Below the
/// Gaussian activation threshold the analytic Gaussian answer is
/// returned; above it the problem is solved on truncated grids of
/// doubling radius until the rate stabilizes.
pub fn no_pp_solve(spec: &NoPpSpec, tol: &Tolerances) -> Result<Solution, SolverError> {
    if !(spec.sigma_x2 > 0.0) {
        return Err(SolverError::InvalidSpec("power budget must be positive".into()));
    }
    if !(spec.e_req >= 1.0) {
        return Err(SolverError::InvalidSpec("harvesting requirement must be >= 1".into()));
    }
    let b_he = spec.circuit.b() * spec.channel.h_e;
    let z_half = 0.5 * b_he * b_he * spec.sigma_x2;
    let ln_e_lim = z_half + log_bessel_i0(z_half);
    if spec.e_req.ln() <= ln_e_lim * (1.0 + 1e-12) + 1e-300 {
        // Gaussian branch: the harvesting constraint is inactive
        let rate = shannon_capacity(spec.sigma_x2, spec.channel.h_i, spec.channel.sigma_n2);
        let lambda1 = LOG2_E * spec.channel.h_i * spec.channel.h_i
            / (2.0
                * (spec.channel.sigma_n2
                    + spec.channel.h_i * spec.channel.h_i * spec.sigma_x2));
        let sd = spec.sigma_x2.sqrt();
        let grid = symmetric_grid(8.0 * sd, 401);
        let mut masses: Vec<f64> =
            grid.iter().map(|&x| (-x * x / (2.0 * spec.sigma_x2)).exp()).collect();
        let total: f64 = masses.iter().sum();
        for m in &mut masses {
            *m /= total;
        }
        let distribution = InputDistribution::new(grid, masses)?;
        return Ok(Solution {
            distribution,
            rate,
            multipliers: Multipliers { lambda1, lambda2: 0.0 },
            achieved_ap: spec.sigma_x2,
            achieved_metric: ln_e_lim.exp(),
            p_out: harvested_power_from_ln(&spec.circuit, ln_e_lim),
            kkt_residual: 0.0,
            dual_gap: 0.0,
            iterations: 0,
            mass_points: Vec::new(),
            kind: SolutionKind::ContinuousGaussian,
        });
    }

    // discrete branch: truncate, solve, and double the radius until the
    // rate stops moving
    let n0 = spec.grid_points.max(3) | 1;
    let a0 = 8.0 * spec.sigma_x2.sqrt();
    let solve_at = |radius: f64, n: usize, warm: Option<&WarmStart>| {
        dual::solve_on_grid(
            symmetric_grid(radius, n),
            &spec.circuit,
            &spec.channel,
            spec.sigma_x2,
            spec.e_req,
            tol,
            warm,
        )
    };
    let (sol0, w0) = solve_at(a0, n0, None)?;
    let inject = |w: &WarmStart, n_old: usize, n_new: usize| -> WarmStart {
        // doubling the radius with 2n-1 points keeps the step, so old
        // points map onto the center of the new grid exactly
        let mut masses = vec![1e-9 / n_new as f64; n_new];
        let offset = (n_old - 1) / 2;
        for (j, &m) in w.masses.iter().enumerate() {
            masses[offset + j] += m;
        }
        let total: f64 = masses.iter().sum();
        for m in &mut masses {
            *m /= total;
        }
        WarmStart { masses, lambda1: w.lambda1, lambda2: w.lambda2 }
    };
    let n1 = 2 * n0 - 1;
    let w1 = inject(&w0, n0, n1);
    let (sol1, w1) = solve_at(2.0 * a0, n1, Some(&w1))?;
    if (sol1.rate - sol0.rate).abs() <= tol.gap {
        return Ok(sol1);
    }
    let n2 = 2 * n1 - 1;
    let w2 = inject(&w1, n1, n2);
    let (sol2, _) = solve_at(4.0 * a0, n2, Some(&w2))?;
    if (sol2.rate - sol1.rate).abs() <= tol.gap {
        return Ok(sol2);
    }
    Err(SolverError::NonConvergent {
        detail: format!(
            "rate still moving under radius doubling: {:.6} -> {:.6} -> {:.6}",
            sol0.rate, sol1.rate, sol2.rate
        ),
        residual_gap: (sol2.rate - sol1.rate).abs(),
        best: Some(Box::new(sol2.distribution)),
    })
}

#[cfg(test)]
mod tests;
