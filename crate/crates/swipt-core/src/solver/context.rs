//! Precomputed evaluation context for solves on a fixed amplitude grid:
//! conditional-density kernels, quadrature weights, and the harvesting
//! reward values, plus the hot-path evaluation of the penalized
//! objective and its per-point stationarity profile.

use crate::channel::{ChannelParams, DEFAULT_COVERAGE, DEFAULT_STEP};
use crate::numerics::{log_bessel_i0, QuadratureGrid};
use crate::rectenna::CircuitParams;
use crate::solver::{Multipliers, SolverError};

const LN_2: f64 = std::f64::consts::LN_2;
const LOG2_E: f64 = std::f64::consts::LOG2_E;
/// Mass floor inside log-domain updates.
pub(crate) const MASS_FLOOR: f64 = 1e-300;
/// Floor for node densities; keeps `0 * log p` finite in dead tails.
const DENSITY_FLOOR: f64 = 1e-300;

/// Immutable per-solve tables. `kern` holds the conditional density
/// phi(u_k - mu_i) row-major, one row per grid amplitude.
pub(crate) struct SolveContext {
    pub x: Vec<f64>,
    pub x2: Vec<f64>,
    /// I0(sqrt(2) B h_e x_i)
    pub m_lin: Vec<f64>,
    /// m_lin / e_req, the scaled harvesting reward
    pub reward: Vec<f64>,
    pub grid: QuadratureGrid,
    pub weights: Vec<f64>,
    pub kern: Vec<f64>,
    pub sigma_x2: f64,
    pub e_req: f64,
    pub symmetric: bool,
    pub half_log2_2pie: f64,
    pub n: usize,
    pub m: usize,
}

/// Scratch buffers reused across evaluations.
pub(crate) struct EvalScratch {
    /// mixture density at each node
    pub pu: Vec<f64>,
    /// weights[k] * log2 pu[k]
    pub v: Vec<f64>,
}

/// Result of one full evaluation at a mass vector.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    /// stationarity profile t_i = i(x_i;F) - l1 x_i^2 + l2 m_i/e_req
    pub t: Vec<f64>,
    /// marginal information density at each grid point, bits
    pub ix: Vec<f64>,
    /// penalized objective J(F), bits
    pub j: f64,
    /// max_i t_i - sum_i p_i t_i, the optimality gap in bits
    pub gap: f64,
    /// mutual information I(F), bits
    pub info: f64,
    pub ap: f64,
    pub metric: f64,
}

impl SolveContext {
    /// Context over an explicit, strictly increasing amplitude grid.
    pub fn from_amplitudes(
        amplitudes: Vec<f64>,
        circuit: &CircuitParams,
        channel: &ChannelParams,
        sigma_x2: f64,
        e_req: f64,
    ) -> Result<Self, SolverError> {
        let n = amplitudes.len();
        if n < 2 {
            return Err(SolverError::InvalidSpec("amplitude grid needs >= 2 points".into()));
        }
        for w in amplitudes.windows(2) {
            if !(w[0] < w[1]) {
                return Err(SolverError::InvalidSpec(
                    "amplitude grid must be strictly increasing".into(),
                ));
            }
        }
        if !(sigma_x2 > 0.0) || !(e_req >= 1.0) {
            return Err(SolverError::InvalidSpec(format!(
                "need sigma_x2 > 0 and e_req >= 1, got {sigma_x2}, {e_req}"
            )));
        }
        let scale = std::f64::consts::SQRT_2 * circuit.b() * channel.h_e;
        let ln_e_req = e_req.ln();
        let mut m_lin = Vec::with_capacity(n);
        let mut reward = Vec::with_capacity(n);
        for &x in &amplitudes {
            let ln_m = log_bessel_i0(scale * x);
            if ln_m > 690.0 {
                return Err(SolverError::InvalidSpec(format!(
                    "harvesting reward I0({:.3}) overflows; reduce the peak amplitude",
                    scale * x
                )));
            }
            m_lin.push(ln_m.exp());
            reward.push((ln_m - ln_e_req).exp());
        }

        let s = channel.h_i / channel.sigma_n2.sqrt();
        let mu: Vec<f64> = amplitudes.iter().map(|&x| x * s).collect();
        let lo = mu.first().unwrap() - DEFAULT_COVERAGE;
        let hi = mu.last().unwrap() + DEFAULT_COVERAGE;
        let grid = QuadratureGrid::with_max_step(lo, hi, DEFAULT_STEP);
        let m = grid.count;
        let weights = grid.weights();

        let ln_norm = -0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut kern = vec![0.0; n * m];
        for (i, &mui) in mu.iter().enumerate() {
            let row = &mut kern[i * m..(i + 1) * m];
            for (k, slot) in row.iter_mut().enumerate() {
                let d = grid.node(k) - mui;
                *slot = (ln_norm - 0.5 * d * d).exp();
            }
        }

        let symmetric = amplitudes
            .iter()
            .zip(amplitudes.iter().rev())
            .all(|(&a, &b)| a == -b);
        let x2 = amplitudes.iter().map(|&x| x * x).collect();
        let half_log2_2pie =
            0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() / LN_2;
        Ok(Self {
            x: amplitudes,
            x2,
            m_lin,
            reward,
            grid,
            weights,
            kern,
            sigma_x2,
            e_req,
            symmetric,
            half_log2_2pie,
            n,
            m,
        })
    }

    pub fn scratch(&self) -> EvalScratch {
        EvalScratch { pu: vec![0.0; self.m], v: vec![0.0; self.m] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.kern[i * self.m..(i + 1) * self.m]
    }

    /// Constant part of the Lagrangian: J = sum_i p_i t_i + K.
    pub fn penalty_offset(&self, lam: &Multipliers) -> f64 {
        lam.lambda1 * self.sigma_x2 - lam.lambda2
    }

    /// Mixture density at every node for the given masses.
    pub fn density_into(&self, p: &[f64], pu: &mut [f64]) {
        pu.fill(0.0);
        for (i, &pi) in p.iter().enumerate() {
            if pi > 0.0 {
                let row = self.row(i);
                for (slot, &k) in pu.iter_mut().zip(row) {
                    *slot += pi * k;
                }
            }
        }
    }

    /// Full evaluation: density, marginal information densities, the
    /// stationarity profile, and all aggregates.
    pub fn evaluate(&self, p: &[f64], lam: &Multipliers, s: &mut EvalScratch) -> Evaluation {
        self.density_into(p, &mut s.pu);
        for (vk, (&pk, &wk)) in s.v.iter_mut().zip(s.pu.iter().zip(&self.weights)) {
            *vk = wk * pk.max(DENSITY_FLOOR).ln() * LOG2_E;
        }
        let mut t = vec![0.0; self.n];
        let mut ix = vec![0.0; self.n];
        for i in 0..self.n {
            let row = self.row(i);
            let mut acc = 0.0;
            for (&k, &vk) in row.iter().zip(s.v.iter()) {
                acc += k * vk;
            }
            let info_i = -self.half_log2_2pie - acc;
            ix[i] = info_i;
            t[i] = info_i - lam.lambda1 * self.x2[i] + lam.lambda2 * self.reward[i];
        }
        let mut tmax = f64::NEG_INFINITY;
        let mut tbar = 0.0;
        let mut info = 0.0;
        let mut ap = 0.0;
        let mut metric = 0.0;
        for i in 0..self.n {
            let pi = p[i];
            tbar += pi * t[i];
            info += pi * ix[i];
            ap += pi * self.x2[i];
            metric += pi * self.m_lin[i];
            if t[i] > tmax {
                tmax = t[i];
            }
        }
        Evaluation {
            t,
            ix,
            j: tbar + self.penalty_offset(lam),
            gap: tmax - tbar,
            info,
            ap,
            metric,
        }
    }

    /// Penalized objective from a precomputed density and moments, used
    /// by line searches along directions where the density is affine:
    /// J = -integral pu log2 pu - 0.5 log2(2 pi e) - l1 (ap - sigma_x2)
    ///     + l2 (metric/e_req - 1).
    pub fn objective_from_density(
        &self,
        pu: &[f64],
        ap: f64,
        metric: f64,
        lam: &Multipliers,
    ) -> f64 {
        let mut ent = 0.0;
        for ((&pk, &wk), _) in pu.iter().zip(&self.weights).zip(0..self.m) {
            if pk > 0.0 {
                ent -= wk * pk * pk.max(DENSITY_FLOOR).ln();
            }
        }
        ent * LOG2_E - self.half_log2_2pie - lam.lambda1 * (ap - self.sigma_x2)
            + lam.lambda2 * (metric / self.e_req - 1.0)
    }

    /// Relative average-power residual (positive means violated).
    pub fn g1(&self, ap: f64) -> f64 {
        (ap - self.sigma_x2) / self.sigma_x2
    }

    /// Relative harvesting residual (positive means violated).
    pub fn g2(&self, metric: f64) -> f64 {
        (self.e_req - metric) / self.e_req
    }

    /// Moments of a tilted distribution q_i ∝ p_i exp(-a x_i^2 + b m_i)
    /// without materializing intermediate vectors.
    pub fn tilted_moments(&self, ln_p: &[f64], a: f64, b: f64, q: &mut [f64]) -> (f64, f64) {
        let mut wmax = f64::NEG_INFINITY;
        for i in 0..self.n {
            let w = ln_p[i] - a * self.x2[i] + b * self.m_lin[i];
            q[i] = w;
            if w > wmax {
                wmax = w;
            }
        }
        let mut z = 0.0;
        for qi in q.iter_mut() {
            *qi = (*qi - wmax).exp();
            z += *qi;
        }
        let mut ap = 0.0;
        let mut metric = 0.0;
        for i in 0..self.n {
            q[i] /= z;
            ap += q[i] * self.x2[i];
            metric += q[i] * self.m_lin[i];
        }
        (ap, metric)
    }
}

/// In-place symmetrization p <- (p + reverse(p)) / 2.
pub(crate) fn symmetrize(p: &mut [f64]) {
    let n = p.len();
    for i in 0..n / 2 {
        let avg = 0.5 * (p[i] + p[n - 1 - i]);
        p[i] = avg;
        p[n - 1 - i] = avg;
    }
}

/// Renormalize masses to sum exactly to one, flooring negatives at zero.
pub(crate) fn renormalize(p: &mut [f64]) {
    let mut total = 0.0;
    for pi in p.iter_mut() {
        if !(*pi > 0.0) {
            *pi = 0.0;
        }
        total += *pi;
    }
    debug_assert!(total > 0.0);
    for pi in p.iter_mut() {
        *pi /= total;
    }
}
