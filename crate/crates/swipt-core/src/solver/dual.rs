//! Constrained solve on a fixed amplitude grid.
//!
//! The two multipliers are driven by nested monotone root finding: for a
//! trial harvesting price the power price is re-tied so the average-power
//! residual vanishes, and the harvesting price is bracketed and bisected
//! on the resulting residual. Probe solves run at loose tolerance; only
//! candidate finishes run tight. The returned distribution is the final
//! iterate projected onto the active constraint faces by an exponential
//! tilt (the KL-closest member of its own tilted family), and the
//! reported multipliers are refit by weighted least squares on the
//! support stationarity equalities, which is considerably more accurate
//! than the bracket width.

use crate::channel::{ChannelParams, InputDistribution};
use crate::rectenna::{harvested_power_from_ln, CircuitParams};
use crate::solver::context::{renormalize, symmetrize, Evaluation, SolveContext, MASS_FLOOR};
use crate::solver::inner;
use crate::solver::{
    extract_mass_points, Multipliers, Solution, SolutionKind, SolverError, Tolerances,
};

const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// Carry-over between related solves (sweep neighbors, refinements).
#[derive(Debug, Clone)]
pub(crate) struct WarmStart {
    pub masses: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

struct ProbeResult {
    p: Vec<f64>,
    eval: Evaluation,
    g1: f64,
    g2: f64,
    q_ub: f64,
    converged: bool,
}

struct DualState<'a> {
    ctx: &'a SolveContext,
    tol: &'a Tolerances,
    p: Vec<f64>,
    evals: u64,
    solves: usize,
    min_q_ub: f64,
}

impl<'a> DualState<'a> {
    fn new(ctx: &'a SolveContext, tol: &'a Tolerances, warm: Option<&WarmStart>) -> Self {
        let n = ctx.n;
        let p = match warm {
            Some(w) if w.masses.len() == n => {
                let mut p = w.masses.clone();
                // keep every point faintly alive so it can re-enter
                for pi in p.iter_mut() {
                    *pi = 0.999 * *pi + 1e-3 / n as f64;
                }
                p
            }
            _ => {
                // Gaussian-shaped start at the power budget
                let mut p: Vec<f64> = ctx
                    .x2
                    .iter()
                    .map(|&w| (-w / (2.0 * ctx.sigma_x2)).exp())
                    .collect();
                let total: f64 = p.iter().sum();
                for pi in p.iter_mut() {
                    *pi = 0.99 * *pi / total + 0.01 / n as f64;
                }
                p
            }
        };
        Self { ctx, tol, p, evals: 0, solves: 0, min_q_ub: f64::INFINITY }
    }

    fn solve(&mut self, lam1: f64, lam2: f64, tight: bool) -> ProbeResult {
        let lam = Multipliers { lambda1: lam1, lambda2: lam2 };
        let (tol_bits, cap) = if tight {
            (0.5 * self.tol.gap, self.tol.max_inner as u64)
        } else {
            (1e-4_f64.max(0.5 * self.tol.gap), 6000.max(30 * self.ctx.n) as u64)
        };
        let out = inner::maximize(self.ctx, &lam, &mut self.p, tol_bits, cap, None);
        self.evals += out.evals;
        self.solves += 1;
        let q_ub = out.eval.j + out.eval.gap;
        if tight && out.converged {
            self.min_q_ub = self.min_q_ub.min(q_ub);
        }
        ProbeResult {
            p: self.p.clone(),
            g1: self.ctx.g1(out.eval.ap),
            g2: self.ctx.g2(out.eval.metric),
            q_ub,
            converged: out.converged,
            eval: out.eval,
        }
    }

    fn budget_exceeded(&self) -> bool {
        self.solves > self.tol.max_dual
    }
}

/// Power price tying the average-power residual to zero at a fixed
/// harvesting price. Returns the price and the solve at it, landing on
/// the feasible (g1 <= 0) side when the residual cannot be zeroed.
fn root_lam1(
    st: &mut DualState,
    lam2: f64,
    hint: f64,
    tight: bool,
) -> Result<(f64, ProbeResult), SolverError> {
    let gtol = 0.5 * st.tol.constraint;
    let hint = hint.max(0.0);
    let r = st.solve(hint, lam2, tight);
    if r.g1.abs() <= gtol || (hint == 0.0 && r.g1 <= gtol) {
        return Ok((hint, r));
    }
    let (mut lo, mut flo, mut hi, mut fhi, mut rhi);
    if r.g1 < 0.0 {
        let r0 = st.solve(0.0, lam2, tight);
        if r0.g1 <= gtol {
            return Ok((0.0, r0));
        }
        lo = 0.0;
        flo = r0.g1;
        hi = hint;
        fhi = r.g1;
        rhi = r;
    } else {
        lo = hint;
        flo = r.g1;
        hi = if hint > 0.0 { 2.0 * hint } else { 1e-6 };
        loop {
            let rh = st.solve(hi, lam2, tight);
            if rh.g1 < 0.0 {
                fhi = rh.g1;
                rhi = rh;
                break;
            }
            lo = hi;
            flo = rh.g1;
            hi *= 2.0;
            if hi > 1e12 || st.budget_exceeded() {
                return Err(SolverError::NonConvergent {
                    detail: format!("power price grew past {hi:.3e} without tying the budget"),
                    residual_gap: rh.g1,
                    best: None,
                });
            }
        }
    }
    for _ in 0..100 {
        if fhi.abs() <= gtol {
            return Ok((hi, rhi));
        }
        if hi - lo <= 1e-13 * hi.max(1.0) || st.budget_exceeded() {
            break;
        }
        let mut mid = if fhi != flo { hi - fhi * (hi - lo) / (fhi - flo) } else { 0.5 * (lo + hi) };
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let rm = st.solve(mid, lam2, tight);
        if rm.g1 > 0.0 {
            lo = mid;
            flo = rm.g1;
        } else {
            hi = mid;
            fhi = rm.g1;
            rhi = rm;
        }
    }
    Ok((hi, rhi))
}

/// KL projection of `p` onto the requested constraint faces within its
/// exponential family q ∝ p exp(-a x^2 + b m). Both moment maps are
/// monotone in their own parameter, so nested bisection is exact.
fn tilt_to_face(ctx: &SolveContext, p: &[f64], tight1: bool, tight2: bool) -> Vec<f64> {
    if !tight1 && !tight2 {
        return p.to_vec();
    }
    let ln_p: Vec<f64> = p.iter().map(|&v| v.max(MASS_FLOOR).ln()).collect();
    let mut q = vec![0.0; ctx.n];

    let root_a = |b: f64, q: &mut [f64]| -> f64 {
        if !tight1 {
            return 0.0;
        }
        let (mut lo, mut hi) = (-1.0, 1.0);
        for _ in 0..300 {
            let (ap, _) = ctx.tilted_moments(&ln_p, lo, b, q);
            if ap > ctx.sigma_x2 {
                break;
            }
            lo *= 2.0;
        }
        for _ in 0..300 {
            let (ap, _) = ctx.tilted_moments(&ln_p, hi, b, q);
            if ap < ctx.sigma_x2 {
                break;
            }
            hi *= 2.0;
        }
        for _ in 0..140 {
            let mid = 0.5 * (lo + hi);
            let (ap, _) = ctx.tilted_moments(&ln_p, mid, b, q);
            if ap > ctx.sigma_x2 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };

    if !tight2 {
        let a = root_a(0.0, &mut q);
        ctx.tilted_moments(&ln_p, a, 0.0, &mut q);
        if ctx.symmetric {
            symmetrize(&mut q);
        }
        return q;
    }

    // metric is increasing in b (with the power face re-tied per trial)
    let met_at = |b: f64, q: &mut [f64]| -> f64 {
        let a = root_a(b, q);
        let (_, met) = ctx.tilted_moments(&ln_p, a, b, q);
        met
    };
    let (mut lo, mut hi) = (-1e-3, 1e-3);
    for _ in 0..200 {
        if met_at(lo, &mut q) < ctx.e_req {
            break;
        }
        lo *= 2.0;
    }
    for _ in 0..200 {
        if met_at(hi, &mut q) > ctx.e_req {
            break;
        }
        hi *= 2.0;
    }
    for _ in 0..140 {
        let mid = 0.5 * (lo + hi);
        if met_at(mid, &mut q) < ctx.e_req {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // land on the harvesting-feasible side
    met_at(hi, &mut q);
    if ctx.symmetric {
        symmetrize(&mut q);
        renormalize(&mut q);
    }
    q
}

/// Multiplier refit: weighted least squares on the support stationarity
/// equalities C - i(x) + l1 (x^2 - s2) - l2 (m - E)/E = 0, restricted to
/// the constraints marked active. Falls back to the bracketing values
/// when the system is degenerate or produces negative prices.
fn refit_multipliers(
    ctx: &SolveContext,
    p: &[f64],
    ix: &[f64],
    rate: f64,
    tight1: bool,
    tight2: bool,
    fallback: (f64, f64),
) -> (f64, f64) {
    if !tight1 && !tight2 {
        return (0.0, 0.0);
    }
    let mut s11 = 0.0;
    let mut s12 = 0.0;
    let mut s22 = 0.0;
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for i in 0..ctx.n {
        if p[i] < 1e-6 {
            continue;
        }
        let w = p[i];
        let a1 = ctx.x2[i] - ctx.sigma_x2;
        let a2 = -(ctx.m_lin[i] - ctx.e_req) / ctx.e_req;
        let rhs = ix[i] - rate;
        s11 += w * a1 * a1;
        s12 += w * a1 * a2;
        s22 += w * a2 * a2;
        b1 += w * a1 * rhs;
        b2 += w * a2 * rhs;
    }
    let solve1 = |sxx: f64, bx: f64, fb: f64| -> f64 {
        if sxx > 1e-30 {
            (bx / sxx).max(0.0)
        } else {
            fb.max(0.0)
        }
    };
    match (tight1, tight2) {
        (true, false) => (solve1(s11, b1, fallback.0), 0.0),
        (false, true) => (0.0, solve1(s22, b2, fallback.1)),
        _ => {
            let det = s11 * s22 - s12 * s12;
            if det.abs() <= 1e-14 * (s11 * s22).abs().max(1e-300) {
                return (fallback.0.max(0.0), fallback.1.max(0.0));
            }
            let l1 = (b1 * s22 - b2 * s12) / det;
            let l2 = (b2 * s11 - b1 * s12) / det;
            if l1 < 0.0 {
                (0.0, solve1(s22, b2, fallback.1))
            } else if l2 < 0.0 {
                (solve1(s11, b1, fallback.0), 0.0)
            } else {
                (l1, l2)
            }
        }
    }
}

struct Finish {
    solution: Solution,
    ok: bool,
}

/// Grid-restricted feasibility ceiling: the largest harvesting metric
/// reachable under the power budget, concentrated on the extreme-power
/// grid points, together with the attaining mass vector.
fn grid_ceiling(ctx: &SolveContext) -> (f64, Vec<f64>) {
    let n = ctx.n;
    let mut w_min = f64::INFINITY;
    let mut w_max = f64::NEG_INFINITY;
    for &w in &ctx.x2 {
        w_min = w_min.min(w);
        w_max = w_max.max(w);
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-300) + 1e-300;
    let mins: Vec<usize> = (0..n).filter(|&i| close(ctx.x2[i], w_min)).collect();
    let maxs: Vec<usize> = (0..n).filter(|&i| close(ctx.x2[i], w_max)).collect();
    let m_min = ctx.m_lin[mins[0]];
    let m_max = ctx.m_lin[maxs[0]];
    let theta = if ctx.sigma_x2 >= w_max {
        1.0
    } else if w_max > w_min {
        ((ctx.sigma_x2 - w_min) / (w_max - w_min)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let mut masses = vec![0.0; n];
    for &i in &maxs {
        masses[i] = theta / maxs.len() as f64;
    }
    for &i in &mins {
        masses[i] += (1.0 - theta) / mins.len() as f64;
    }
    (theta * m_max + (1.0 - theta) * m_min, masses)
}

fn build_finish(
    st: &mut DualState,
    circuit: &CircuitParams,
    lam1: f64,
    lam2: f64,
    r: &ProbeResult,
) -> Finish {
    let ctx = st.ctx;
    let tol = st.tol;
    let tight1 = lam1 > 0.0 || r.g1 > tol.constraint;
    let mut tight2 = lam2 > 0.0 || r.g2 > tol.constraint;
    let mut p_hat = tilt_to_face(ctx, &r.p, tight1, tight2);
    let mut scratch = ctx.scratch();
    let lam0 = Multipliers { lambda1: 0.0, lambda2: 0.0 };
    let mut ev = ctx.evaluate(&p_hat, &lam0, &mut scratch);
    st.evals += 1;
    // a one-sided tilt may push the untreated constraint over the line
    if !tight2 && ctx.g2(ev.metric) > tol.constraint {
        tight2 = true;
        p_hat = tilt_to_face(ctx, &r.p, tight1, true);
        ev = ctx.evaluate(&p_hat, &lam0, &mut scratch);
        st.evals += 1;
    }
    let rate = ev.info;
    let (l1, l2) = refit_multipliers(ctx, &p_hat, &ev.ix, rate, tight1, tight2, (lam1, lam2));
    let g1 = ctx.g1(ev.ap);
    let g2 = ctx.g2(ev.metric);
    let viol = g1.max(g2).max(0.0);
    let s1 = (l1 * (ev.ap - ctx.sigma_x2)).abs();
    let s2 = (l2 * g2).abs();
    let dual_gap = (st.min_q_ub.min(r.q_ub) - rate).max(0.0);
    let ok = r.converged
        && viol <= tol.constraint
        && s1 <= tol.slack
        && s2 <= tol.slack
        && dual_gap <= tol.gap;

    let distribution = InputDistribution::new(ctx.x.clone(), p_hat).expect("grid distribution");
    let mass_points = extract_mass_points(&distribution, 1e-6);
    let metric = ev.metric;
    let solution = Solution {
        rate,
        multipliers: Multipliers { lambda1: l1, lambda2: l2 },
        achieved_ap: ev.ap,
        achieved_metric: metric,
        p_out: harvested_power_from_ln(circuit, metric.max(1.0).ln()),
        kkt_residual: r.eval.gap,
        dual_gap,
        iterations: st.evals,
        mass_points,
        kind: SolutionKind::Discrete,
        distribution,
    };
    Finish { solution, ok }
}

/// Full constrained solve over masses on an explicit amplitude grid.
pub(crate) fn solve_on_grid(
    amplitudes: Vec<f64>,
    circuit: &CircuitParams,
    channel: &ChannelParams,
    sigma_x2: f64,
    e_req: f64,
    tol: &Tolerances,
    warm: Option<&WarmStart>,
) -> Result<(Solution, WarmStart), SolverError> {
    let ctx = SolveContext::from_amplitudes(amplitudes, circuit, channel, sigma_x2, e_req)?;

    // feasibility: the alphabet must be able to meet both constraints
    let w_min = ctx.x2.iter().cloned().fold(f64::INFINITY, f64::min);
    if w_min > sigma_x2 * (1.0 + 1e-12) {
        return Err(SolverError::Infeasible {
            e_req,
            ceiling: 0.0,
            detail: format!(
                "smallest alphabet power {w_min:.6e} W exceeds the average-power budget {sigma_x2:.6e} W"
            ),
        });
    }
    let (ceiling, ceiling_masses) = grid_ceiling(&ctx);
    if e_req > ceiling * (1.0 + 1e-12) {
        return Err(SolverError::Infeasible {
            e_req,
            ceiling,
            detail: format!(
                "required harvesting metric {e_req:.6e} exceeds the feasibility ceiling {ceiling:.6e}"
            ),
        });
    }

    let mut st = DualState::new(&ctx, tol, warm);

    // degenerate boundary: the ceiling distribution is the only feasible
    // point up to the symmetric peak split, which maximizes I among them
    if e_req >= ceiling * (1.0 - 1e-9) && e_req > 1.0 {
        let mut scratch = ctx.scratch();
        let lam0 = Multipliers { lambda1: 0.0, lambda2: 0.0 };
        let ev = ctx.evaluate(&ceiling_masses, &lam0, &mut scratch);
        let (l1, l2) =
            refit_multipliers(&ctx, &ceiling_masses, &ev.ix, ev.info, true, true, (0.0, 0.0));
        let distribution =
            InputDistribution::new(ctx.x.clone(), ceiling_masses.clone()).expect("ceiling masses");
        let mass_points = extract_mass_points(&distribution, 1e-6);
        let solution = Solution {
            rate: ev.info,
            multipliers: Multipliers { lambda1: l1, lambda2: l2 },
            achieved_ap: ev.ap,
            achieved_metric: ev.metric,
            p_out: harvested_power_from_ln(circuit, ev.metric.max(1.0).ln()),
            kkt_residual: 0.0,
            dual_gap: 0.0,
            iterations: 1,
            mass_points,
            kind: SolutionKind::Discrete,
            distribution,
        };
        let warm_out = WarmStart { masses: ceiling_masses, lambda1: l1, lambda2: l2 };
        return Ok((solution, warm_out));
    }

    let heuristic = LOG2_E * channel.h_i * channel.h_i
        / (2.0 * (channel.sigma_n2 + channel.h_i * channel.h_i * sigma_x2));
    let hint1 = warm.map(|w| w.lambda1).filter(|&l| l > 0.0).unwrap_or(heuristic);

    // phase A: no harvesting price
    let (mut lam1, mut r) = root_lam1(&mut st, 0.0, hint1, false)?;
    if r.g2 <= tol.constraint {
        let (l1t, rt) = root_lam1(&mut st, 0.0, lam1, true)?;
        if rt.g2 <= tol.constraint {
            let fin = build_finish(&mut st, circuit, l1t, 0.0, &rt);
            let warm_out = WarmStart {
                masses: fin.solution.distribution.masses().to_vec(),
                lambda1: l1t,
                lambda2: 0.0,
            };
            if fin.ok {
                return Ok((fin.solution, warm_out));
            }
            if !rt.converged {
                return Err(SolverError::NonConvergent {
                    detail: "inner maximizer exhausted its budget".into(),
                    residual_gap: rt.eval.gap,
                    best: Some(Box::new(fin.solution.distribution.clone())),
                });
            }
            // fall through: the harvesting constraint re-activated
            lam1 = l1t;
            r = rt;
        } else {
            lam1 = l1t;
            r = rt;
        }
    }

    if r.g2 <= tol.constraint {
        return Err(SolverError::NonConvergent {
            detail: "phase A bookkeeping failed".into(),
            residual_gap: r.g2,
            best: None,
        });
    }

    // phase B: bracket and bisect the harvesting price
    let mut lo2 = 0.0;
    let mut hi2;
    let mut l1 = lam1;
    let mut rhi;
    let warm2 = warm.map(|w| w.lambda2).filter(|&l| l > 0.0);
    if let Some(w2) = warm2 {
        let (l1w, rw) = root_lam1(&mut st, w2, l1, false)?;
        l1 = l1w;
        if rw.g2 <= 0.0 {
            // feasible at the warm price; probe just below for a bracket
            hi2 = w2;
            rhi = rw;
            let probe = w2 / 1.2;
            let (l1p, rp) = root_lam1(&mut st, probe, l1, false)?;
            l1 = l1p;
            if rp.g2 > 0.0 {
                lo2 = probe;
            } else {
                hi2 = probe;
                rhi = rp;
            }
        } else {
            lo2 = w2;
            hi2 = w2 * 2.0;
            let (l1g, rg) = root_lam1(&mut st, hi2, l1, false)?;
            l1 = l1g;
            rhi = rg;
        }
    } else {
        hi2 = 1e-4;
        let (l1g, rg) = root_lam1(&mut st, hi2, l1, false)?;
        l1 = l1g;
        rhi = rg;
    }
    while rhi.g2 > 0.0 {
        lo2 = hi2;
        hi2 *= 2.0;
        if hi2 > 1e12 || st.budget_exceeded() {
            return Err(SolverError::NonConvergent {
                detail: format!("harvesting price grew past {hi2:.3e} without feasibility"),
                residual_gap: rhi.g2,
                best: None,
            });
        }
        let (l1g, rg) = root_lam1(&mut st, hi2, l1, false)?;
        l1 = l1g;
        rhi = rg;
    }

    let mut best_fail: Option<Finish> = None;
    loop {
        let rel_width = (hi2 - lo2) / hi2.max(1e-300);
        if rel_width <= 3e-3 {
            // candidate finish at the feasible edge, tightly re-tied
            let (l1t, rt) = root_lam1(&mut st, hi2, l1, true)?;
            l1 = l1t;
            let fin = build_finish(&mut st, circuit, l1t, hi2, &rt);
            if fin.ok {
                let warm_out = WarmStart {
                    masses: fin.solution.distribution.masses().to_vec(),
                    lambda1: l1t,
                    lambda2: hi2,
                };
                return Ok((fin.solution, warm_out));
            }
            best_fail = Some(fin);
            if rel_width <= 1e-12 || st.budget_exceeded() {
                break;
            }
            let mid = 0.5 * (lo2 + hi2);
            let (l1m, rm) = root_lam1(&mut st, mid, l1, true)?;
            l1 = l1m;
            if rm.g2 > 0.0 {
                lo2 = mid;
            } else {
                hi2 = mid;
            }
        } else {
            let mid = 0.5 * (lo2 + hi2);
            let (l1m, rm) = root_lam1(&mut st, mid, l1, false)?;
            l1 = l1m;
            if rm.g2 > 0.0 {
                lo2 = mid;
            } else {
                hi2 = mid;
            }
            if st.budget_exceeded() {
                return Err(SolverError::NonConvergent {
                    detail: format!(
                        "dual budget exhausted while bracketing (width {rel_width:.2e})"
                    ),
                    residual_gap: rel_width,
                    best: None,
                });
            }
        }
    }
    let fin = best_fail.expect("at least one finish attempted");
    Err(SolverError::NonConvergent {
        detail: format!(
            "dual bracket exhausted; closest candidate: gap {:.3e}, dual gap {:.3e}",
            fin.solution.kkt_residual, fin.solution.dual_gap
        ),
        residual_gap: fin.solution.dual_gap,
        best: Some(Box::new(fin.solution.distribution.clone())),
    })
}
