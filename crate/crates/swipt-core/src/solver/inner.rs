//! Inner Lagrangian maximizer over the probability simplex: multiplicative
//! (Blahut-Arimoto style) updates with a safeguarded over-relaxation
//! exponent for the global phase, and a support-restricted truncated
//! Newton-CG refinement for the flat endgame. Every accepted step is
//! checked against the current objective, so the iteration value never
//! decreases.

use crate::solver::context::{renormalize, symmetrize, EvalScratch, Evaluation, SolveContext, MASS_FLOOR};
use crate::solver::Multipliers;

const LN_2: f64 = std::f64::consts::LN_2;
const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// Over-relaxation schedule.
const GAMMA_GROW: f64 = 3.0;
const GAMMA_SHRINK: f64 = 4.0;
const GAMMA_MAX: f64 = 1e6;

/// Multiplicative steps per Newton attempt in the endgame.
const BA_BURST: usize = 8;
/// CG iteration cap per Newton direction.
const CG_MAX: usize = 80;
/// Mass threshold defining the Newton active set.
const SUPPORT_EPS: f64 = 1e-12;

pub(crate) struct InnerOutcome {
    pub eval: Evaluation,
    pub converged: bool,
    pub evals: u64,
}

struct State {
    p: Vec<f64>,
    eval: Evaluation,
    gamma: f64,
    evals: u64,
}

fn full_eval(ctx: &SolveContext, p: &[f64], lam: &Multipliers, s: &mut EvalScratch) -> Evaluation {
    ctx.evaluate(p, lam, s)
}

/// One safeguarded multiplicative step: try the over-relaxed exponent,
/// fall back to the plain update (which cannot decrease J) on failure.
fn ba_step(ctx: &SolveContext, lam: &Multipliers, st: &mut State, s: &mut EvalScratch) {
    let n = ctx.n;
    let mut cand = vec![0.0; n];
    let make = |gamma: f64, p: &[f64], t: &[f64], out: &mut [f64]| {
        let mut wmax = f64::NEG_INFINITY;
        for i in 0..n {
            let w = p[i].max(MASS_FLOOR).ln() + gamma * LN_2 * t[i];
            out[i] = w;
            if w > wmax {
                wmax = w;
            }
        }
        for o in out.iter_mut() {
            *o = (*o - wmax).exp();
        }
        renormalize(out);
    };

    make(st.gamma, &st.p, &st.eval.t, &mut cand);
    if ctx.symmetric {
        symmetrize(&mut cand);
    }
    let ev = full_eval(ctx, &cand, lam, s);
    st.evals += 1;
    if ev.j >= st.eval.j {
        st.p = cand;
        st.eval = ev;
        st.gamma = (st.gamma * GAMMA_GROW).min(GAMMA_MAX);
        return;
    }
    if st.gamma > 1.0 {
        make(1.0, &st.p, &st.eval.t, &mut cand);
        if ctx.symmetric {
            symmetrize(&mut cand);
        }
        let ev = full_eval(ctx, &cand, lam, s);
        st.evals += 1;
        st.p = cand;
        st.eval = ev;
        st.gamma = (st.gamma / GAMMA_SHRINK).max(1.0);
    } else {
        // plain update decreased J only through roundoff; take it anyway
        st.p = cand;
        st.eval = ev;
    }
}

/// Truncated Newton-CG step on the active support, with positivity-
/// blocker dropping and a line search along the direction (where the
/// output density is affine, so trial objectives are cheap).
fn newton_step(ctx: &SolveContext, lam: &Multipliers, st: &mut State, s: &mut EvalScratch) -> bool {
    let n = ctx.n;
    let m = ctx.m;
    let gap = st.eval.gap;
    let tmax = st.eval.t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // active set: genuine support plus near-maximal outsiders
    let mut set: Vec<usize> = (0..n)
        .filter(|&i| st.p[i] > SUPPORT_EPS || st.eval.t[i] >= tmax - 0.5 * gap)
        .collect();

    // density and node scale from the current iterate
    ctx.density_into(&st.p, &mut s.pu);
    let wpu: Vec<f64> = ctx
        .weights
        .iter()
        .zip(&s.pu)
        .map(|(&w, &pk)| w / pk.max(1e-300))
        .collect();

    let mut dir: Vec<f64> = Vec::new();
    let mut theta_max = 1.0;
    let mut matvecs = 0usize;
    for _attempt in 0..5 {
        let ns = set.len();
        if ns < 2 {
            return false;
        }
        // CG on H d = r, H = log2e * P K diag(wpu) K^T P restricted to set
        let apply = |v: &[f64], tmp: &mut [f64], out: &mut [f64]| {
            let mean = v.iter().sum::<f64>() / ns as f64;
            tmp.fill(0.0);
            for (j, &i) in set.iter().enumerate() {
                let c = v[j] - mean;
                if c != 0.0 {
                    let row = ctx.row(i);
                    for (slot, &k) in tmp.iter_mut().zip(row) {
                        *slot += c * k;
                    }
                }
            }
            for (slot, &w) in tmp.iter_mut().zip(&wpu) {
                *slot *= w;
            }
            for (j, &i) in set.iter().enumerate() {
                let row = ctx.row(i);
                let mut acc = 0.0;
                for (&k, &tk) in row.iter().zip(tmp.iter()) {
                    acc += k * tk;
                }
                out[j] = acc * LOG2_E;
            }
            let omean = out.iter().sum::<f64>() / ns as f64;
            for o in out.iter_mut() {
                *o -= omean;
            }
        };

        let mut r: Vec<f64> = {
            let mean = set.iter().map(|&i| st.eval.t[i]).sum::<f64>() / ns as f64;
            set.iter().map(|&i| st.eval.t[i] - mean).collect()
        };
        let r00: f64 = r.iter().map(|v| v * v).sum();
        let mut d = vec![0.0; ns];
        let mut q = r.clone();
        let mut tmp = vec![0.0; m];
        let mut hq = vec![0.0; ns];
        let mut rs = r00;
        for _ in 0..CG_MAX {
            apply(&q, &mut tmp, &mut hq);
            matvecs += 1;
            let qhq: f64 = q.iter().zip(&hq).map(|(a, b)| a * b).sum();
            if qhq <= 1e-300 {
                break;
            }
            let alpha = rs / qhq;
            for j in 0..ns {
                d[j] += alpha * q[j];
                r[j] -= alpha * hq[j];
            }
            let rs_new: f64 = r.iter().map(|v| v * v).sum();
            if rs_new <= 1e-6 * r00 {
                break;
            }
            let beta = rs_new / rs;
            for j in 0..ns {
                q[j] = r[j] + beta * q[j];
            }
            rs = rs_new;
        }

        // positivity cap along the direction
        theta_max = 1.0;
        for (j, &i) in set.iter().enumerate() {
            if d[j] < -1e-300 {
                theta_max = theta_max.min(-st.p[i].max(0.0) / d[j]);
            }
        }
        if theta_max < 0.05 {
            // drop tiny-mass blockers and re-solve on the smaller set
            let keep: Vec<usize> = set
                .iter()
                .enumerate()
                .filter(|&(j, &i)| {
                    !(d[j] < -1e-300
                        && st.p[i] < 1e-4
                        && -st.p[i].max(0.0) / d[j] < 0.05)
                })
                .map(|(_, &i)| i)
                .collect();
            if keep.len() == set.len() {
                dir = d;
                break;
            }
            set = keep;
            continue;
        }
        dir = d;
        break;
    }
    // an extra mass-vector eval equivalent per ~2 matvecs
    st.evals += (matvecs as u64 + 1) / 2;
    if dir.is_empty() || dir.iter().all(|&v| v == 0.0) {
        return false;
    }

    // line search: density is affine in theta along the direction
    let mut dpu = vec![0.0; m];
    for (j, &i) in set.iter().enumerate() {
        let c = dir[j];
        if c != 0.0 {
            let row = ctx.row(i);
            for (slot, &k) in dpu.iter_mut().zip(row) {
                *slot += c * k;
            }
        }
    }
    let dap: f64 = set.iter().zip(&dir).map(|(&i, &dj)| dj * ctx.x2[i]).sum();
    let dmet: f64 = set.iter().zip(&dir).map(|(&i, &dj)| dj * ctx.m_lin[i]).sum();
    let ap0 = st.eval.ap;
    let met0 = st.eval.metric;
    let mut mixed = vec![0.0; m];
    let mut trial = |theta: f64| -> f64 {
        for (slot, (&base, &dk)) in mixed.iter_mut().zip(s.pu.iter().zip(&dpu)) {
            *slot = (base + theta * dk).max(0.0);
        }
        ctx.objective_from_density(&mixed, ap0 + theta * dap, met0 + theta * dmet, lam)
    };
    let mut theta = theta_max.min(1.0);
    let mut best = trial(theta);
    let mut halvings = 0;
    while best < st.eval.j && halvings < 45 {
        theta *= 0.5;
        best = trial(theta);
        halvings += 1;
    }
    if best < st.eval.j || theta <= 1e-18 {
        return false;
    }

    let mut cand = st.p.clone();
    for (j, &i) in set.iter().enumerate() {
        cand[i] = (cand[i] + theta * dir[j]).max(0.0);
    }
    renormalize(&mut cand);
    if ctx.symmetric {
        symmetrize(&mut cand);
    }
    let ev = full_eval(ctx, &cand, lam, s);
    st.evals += 1;
    if ev.j >= st.eval.j {
        st.p = cand;
        st.eval = ev;
        true
    } else {
        false
    }
}

/// Maximize J(F) = I(F) - l1 g1(F) - l2 g2(F) over masses on the grid,
/// starting from `p`, until the stationarity gap drops below `tol_bits`.
/// Optionally records (J, gap) after each accepted step.
pub(crate) fn maximize(
    ctx: &SolveContext,
    lam: &Multipliers,
    p: &mut Vec<f64>,
    tol_bits: f64,
    max_evals: u64,
    mut trace: Option<&mut Vec<(f64, f64)>>,
) -> InnerOutcome {
    let mut s = ctx.scratch();
    renormalize(p);
    if ctx.symmetric {
        symmetrize(p);
    }
    let eval = full_eval(ctx, p, lam, &mut s);
    let mut st = State { p: std::mem::take(p), eval, gamma: 1.0, evals: 1 };
    if let Some(tr) = trace.as_deref_mut() {
        tr.push((st.eval.j, st.eval.gap));
    }

    // global phase: multiplicative steps only, down to a coarse gap
    let coarse = tol_bits.max((200.0 * tol_bits).min(1e-3));
    while st.eval.gap > coarse && st.evals < max_evals / 2 {
        ba_step(ctx, lam, &mut st, &mut s);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push((st.eval.j, st.eval.gap));
        }
    }

    // endgame: bursts of multiplicative steps with Newton refinements
    while st.eval.gap > tol_bits && st.evals < max_evals {
        for _ in 0..BA_BURST {
            ba_step(ctx, lam, &mut st, &mut s);
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((st.eval.j, st.eval.gap));
            }
            if st.eval.gap <= tol_bits || st.evals >= max_evals {
                break;
            }
        }
        if st.eval.gap <= tol_bits {
            break;
        }
        let improved = newton_step(ctx, lam, &mut st, &mut s);
        if improved {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((st.eval.j, st.eval.gap));
            }
        }
    }

    let converged = st.eval.gap <= tol_bits;
    *p = st.p;
    InnerOutcome { eval: st.eval, converged, evals: st.evals }
}
