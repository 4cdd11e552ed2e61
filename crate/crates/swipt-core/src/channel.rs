//! Scalar AWGN information channel: path-loss gains, discrete input
//! distributions, the mixture output density, marginal information
//! density, and mutual information.
//!
//! All information quantities are computed in noise-normalized units
//! `u = y / sigma_n` with conditional means `mu_i = x_i h_I / sigma_n`,
//! since physical gains (~1e-6) and noise powers (~1e-11 W) would
//! otherwise underflow long before the math gets interesting. Energy
//! quantities stay in volts and watts.

use crate::numerics::{log_sum_exp, QuadratureGrid};
use serde::{Deserialize, Serialize};
use std::fmt;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Tail coverage, in noise standard deviations, that the output grid
/// must provide beyond the extreme conditional means.
pub const MIN_COVERAGE: f64 = 8.0;
/// Default coverage used when this module builds its own grids.
pub const DEFAULT_COVERAGE: f64 = 10.0;
/// Default quadrature step in normalized units.
pub const DEFAULT_STEP: f64 = 0.02;

const LN_2: f64 = std::f64::consts::LN_2;
/// Floor for log densities, just above ln(f64::MIN_POSITIVE); keeps
/// `0 * log p` products finite at unreachable tail nodes.
const LOG_DENSITY_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelError {
    InvalidDistribution(String),
    /// Output grid does not cover the conditional means plus the
    /// required tail margin.
    GridCoverage { needed_lo: f64, needed_hi: f64, got_lo: f64, got_hi: f64 },
}

impl fmt::Display for ChannelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidDistribution(msg) => write!(f, "invalid input distribution: {msg}"),
            Self::GridCoverage { needed_lo, needed_hi, got_lo, got_hi } => write!(
                f,
                "output grid [{got_lo}, {got_hi}] does not cover required [{needed_lo}, {needed_hi}]"
            ),
        }
    }
}

impl std::error::Error for ChannelError {}

/// Which receiver a gain refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Receiver {
    Info,
    Energy,
}

/// Carrier, geometry, and gains of the two links.
///
/// Gains are derived from the path-loss law `h^2 = (c / (4 pi d f))^alpha`
/// unless overridden directly (unit tests and calibrated setups).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub f_c: f64,
    pub alpha: f64,
    pub d_i: f64,
    pub d_e: f64,
    /// Noise power at the information receiver, watts.
    pub sigma_n2: f64,
    pub h_i: f64,
    pub h_e: f64,
}

impl ChannelParams {
    pub fn from_path_loss(f_c: f64, alpha: f64, d_i: f64, d_e: f64, sigma_n2: f64) -> Self {
        assert!(f_c > 0.0 && alpha > 0.0 && d_i > 0.0 && d_e > 0.0 && sigma_n2 > 0.0);
        let mut p = Self { f_c, alpha, d_i, d_e, sigma_n2, h_i: 0.0, h_e: 0.0 };
        p.h_i = path_loss_gain(&p, Receiver::Info);
        p.h_e = path_loss_gain(&p, Receiver::Energy);
        p
    }

    /// Direct gains, bypassing the path-loss law.
    pub fn with_gains(h_i: f64, h_e: f64, sigma_n2: f64) -> Self {
        assert!(h_i > 0.0 && h_e > 0.0 && sigma_n2 > 0.0);
        Self { f_c: 0.0, alpha: 0.0, d_i: 0.0, d_e: 0.0, sigma_n2, h_i, h_e }
    }

    pub fn noise_sigma(&self) -> f64 {
        self.sigma_n2.sqrt()
    }
}

/// Amplitude gain from the power path-loss law.
pub fn path_loss_gain(params: &ChannelParams, which: Receiver) -> f64 {
    let d = match which {
        Receiver::Info => params.d_i,
        Receiver::Energy => params.d_e,
    };
    let ratio = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * d * params.f_c);
    ratio.powf(params.alpha).sqrt()
}

/// Discrete amplitude distribution: strictly increasing support points
/// with nonnegative masses summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDistribution {
    amplitudes: Vec<f64>,
    masses: Vec<f64>,
}

impl InputDistribution {
    pub fn new(amplitudes: Vec<f64>, masses: Vec<f64>) -> Result<Self, ChannelError> {
        if amplitudes.is_empty() || amplitudes.len() != masses.len() {
            return Err(ChannelError::InvalidDistribution(format!(
                "{} amplitudes vs {} masses",
                amplitudes.len(),
                masses.len()
            )));
        }
        for w in amplitudes.windows(2) {
            if !(w[0] < w[1]) {
                return Err(ChannelError::InvalidDistribution(format!(
                    "amplitudes not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if masses.iter().any(|&m| !(m >= 0.0)) {
            return Err(ChannelError::InvalidDistribution("negative mass".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ChannelError::InvalidDistribution(format!(
                "masses sum to {total}, not 1"
            )));
        }
        Ok(Self { amplitudes, masses })
    }

    pub fn single_atom(x: f64) -> Self {
        Self { amplitudes: vec![x], masses: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Second moment E[X^2] in watts.
    pub fn average_power(&self) -> f64 {
        self.amplitudes
            .iter()
            .zip(&self.masses)
            .map(|(&x, &p)| p * x * x)
            .sum()
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.amplitudes
            .iter()
            .fold(0.0f64, |acc, &x| acc.max(x.abs()))
    }
}

/// Mixture output density on a normalized-output grid, stored as natural
/// logs at each node.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDensity {
    pub grid: QuadratureGrid,
    pub log_density: Vec<f64>,
}

impl OutputDensity {
    /// Density with this module's default grid: coverage 10 sigma beyond
    /// the extreme conditional means, step 0.02.
    pub fn for_distribution(
        dist: &InputDistribution,
        h_i: f64,
        sigma_n2: f64,
    ) -> OutputDensity {
        let grid = default_output_grid(dist, h_i, sigma_n2, DEFAULT_COVERAGE, DEFAULT_STEP);
        output_log_density(dist, h_i, sigma_n2, &grid).expect("default grid covers support")
    }

    /// Trapezoidal integral of the density; 1 up to quadrature error.
    pub fn total_mass(&self) -> f64 {
        let vals: Vec<f64> = self.log_density.iter().map(|l| l.exp()).collect();
        self.grid.integrate(&vals)
    }
}

/// Grid spanning the conditional means of `dist` plus `coverage` sigmas
/// on both sides.
pub fn default_output_grid(
    dist: &InputDistribution,
    h_i: f64,
    sigma_n2: f64,
    coverage: f64,
    step: f64,
) -> QuadratureGrid {
    let s = h_i / sigma_n2.sqrt();
    let lo = dist.amplitudes().first().unwrap() * s - coverage;
    let hi = dist.amplitudes().last().unwrap() * s + coverage;
    QuadratureGrid::with_max_step(lo, hi, step)
}

/// Log of the mixture output density `p(u; F) = sum_i p_i phi(u - mu_i)`
/// at every grid node, each node accumulated by log-sum-exp over the
/// mixture components.
pub fn output_log_density(
    dist: &InputDistribution,
    h_i: f64,
    sigma_n2: f64,
    grid: &QuadratureGrid,
) -> Result<OutputDensity, ChannelError> {
    let s = h_i / sigma_n2.sqrt();
    let mus: Vec<f64> = dist.amplitudes().iter().map(|&x| x * s).collect();
    let needed_lo = mus.first().unwrap() - MIN_COVERAGE;
    let needed_hi = mus.last().unwrap() + MIN_COVERAGE;
    if grid.lower > needed_lo || grid.upper < needed_hi {
        return Err(ChannelError::GridCoverage {
            needed_lo,
            needed_hi,
            got_lo: grid.lower,
            got_hi: grid.upper,
        });
    }
    let ln_norm = -0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut log_terms = vec![0.0; mus.len()];
    let mut out = Vec::with_capacity(grid.count);
    for k in 0..grid.count {
        let u = grid.node(k);
        for (t, &mu) in log_terms.iter_mut().zip(&mus) {
            let d = u - mu;
            *t = ln_norm - 0.5 * d * d;
        }
        let l = log_sum_exp(&log_terms, dist.masses())
            .map_err(|e| ChannelError::InvalidDistribution(e.to_string()))?;
        out.push(l.max(LOG_DENSITY_FLOOR));
    }
    Ok(OutputDensity { grid: grid.clone(), log_density: out })
}

/// Marginal information density `i(x; F)` in bits: the divergence of the
/// conditional output law at `x` from the mixture, written as
/// `-0.5 log2(2 pi e) - integral phi(u - mu_x) log2 p(u; F) du`.
pub fn marginal_information_density(
    x: f64,
    dens: &OutputDensity,
    h_i: f64,
    sigma_n2: f64,
) -> f64 {
    let mu = x * h_i / sigma_n2.sqrt();
    let ln_norm = -0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut acc = 0.0;
    for k in 0..dens.grid.count {
        let d = dens.grid.node(k) - mu;
        let phi = (ln_norm - 0.5 * d * d).exp();
        acc += dens.grid.weight(k) * phi * dens.log_density[k];
    }
    let half_log2_2pie = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() / LN_2;
    -half_log2_2pie - acc / LN_2
}

/// Mutual information `I(F) = sum_i p_i i(x_i; F)` in bits.
pub fn mutual_information(
    dist: &InputDistribution,
    dens: &OutputDensity,
    h_i: f64,
    sigma_n2: f64,
) -> f64 {
    dist.amplitudes()
        .iter()
        .zip(dist.masses())
        .filter(|(_, &p)| p > 0.0)
        .map(|(&x, &p)| p * marginal_information_density(x, dens, h_i, sigma_n2))
        .sum()
}

/// AWGN capacity under an average-power constraint only:
/// `0.5 log2(1 + sigma_x2 h_i^2 / sigma_n2)`.
pub fn shannon_capacity(sigma_x2: f64, h_i: f64, sigma_n2: f64) -> f64 {
    assert!(sigma_x2 > 0.0 && h_i > 0.0 && sigma_n2 > 0.0);
    0.5 * (1.0 + sigma_x2 * h_i * h_i / sigma_n2).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn unit_channel() -> (f64, f64) {
        (1.0, 1.0) // h_i, sigma_n2
    }

    #[test]
    fn path_loss_unit_ratio() {
        // choose d so that c / (4 pi d f) = 1; then h = 1 for any alpha
        let f_c = 1e9;
        let d = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * f_c);
        let p = ChannelParams::from_path_loss(f_c, 2.0, d, d, 1e-11);
        assert!(rel_err(p.h_i, 1.0) < 1e-12);
    }

    #[test]
    fn path_loss_reference_values() {
        // f_c = 2.45 GHz, alpha = 2.5, d_I = 500 m, d_E = 70 m.
        // Frozen from 40-digit evaluation of (c/(4 pi d f))^alpha.
        let p = ChannelParams::from_path_loss(2.45e9, 2.5, 500.0, 70.0, 1e-11);
        assert!(rel_err(p.h_i, 1.293729370668689e-6) < 1e-12);
        assert!(rel_err(p.h_e, 1.510717962982428e-5) < 1e-12);
        // cross-route: exp(alpha/2 * ln(ratio))
        let ratio = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * 70.0 * 2.45e9);
        let other = (0.5 * 2.5 * ratio.ln()).exp();
        assert!(rel_err(p.h_e, other) < 1e-12);
    }

    #[test]
    fn path_loss_distance_doubling() {
        let p1 = ChannelParams::from_path_loss(2.45e9, 2.5, 100.0, 100.0, 1e-11);
        let p2 = ChannelParams::from_path_loss(2.45e9, 2.5, 200.0, 200.0, 1e-11);
        let want = 2f64.powf(-2.5);
        assert!(rel_err(p2.h_i * p2.h_i / (p1.h_i * p1.h_i), want) < 1e-12);
    }

    #[test]
    fn distribution_validation() {
        assert!(InputDistribution::new(vec![0.0, 1.0], vec![0.5, 0.5]).is_ok());
        assert!(InputDistribution::new(vec![1.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(InputDistribution::new(vec![0.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(InputDistribution::new(vec![0.0], vec![0.7]).is_err());
        assert!(InputDistribution::new(vec![0.0, 1.0], vec![-0.1, 1.1]).is_err());
        assert!(InputDistribution::new(vec![], vec![]).is_err());
    }

    #[test]
    fn single_atom_density_is_standard_normal() {
        let (h_i, sn2) = unit_channel();
        let d = InputDistribution::single_atom(0.0);
        let dens = OutputDensity::for_distribution(&d, h_i, sn2);
        for k in (0..dens.grid.count).step_by(97) {
            let u = dens.grid.node(k);
            let want = -0.5 * u * u - 0.5 * (2.0 * std::f64::consts::PI).ln();
            assert!((dens.log_density[k] - want.max(-745.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn merged_atoms_equal_standard_normal() {
        // two atoms at +-a with zero gain separation collapse
        let d = InputDistribution::new(vec![-3.0, 3.0], vec![0.5, 0.5]).unwrap();
        let dens = OutputDensity::for_distribution(&d, 1e-30, 1.0);
        let mid = dens.grid.count / 2;
        let u = dens.grid.node(mid);
        let want = -0.5 * u * u - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((dens.log_density[mid] - want).abs() < 1e-10);
    }

    #[test]
    fn two_atom_density_at_origin() {
        // atoms at normalized means +-5; p(0) = e^{-12.5}/sqrt(2 pi)
        let (h_i, sn2) = unit_channel();
        let d = InputDistribution::new(vec![-5.0, 5.0], vec![0.5, 0.5]).unwrap();
        let dens = OutputDensity::for_distribution(&d, h_i, sn2);
        // locate node closest to u = 0 (grid is symmetric, odd-ish count)
        let k0 = ((0.0 - dens.grid.lower) / dens.grid.step()).round() as usize;
        assert!(dens.grid.node(k0).abs() < 1e-9);
        let want = (-12.5f64) - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((dens.log_density[k0] - want).abs() < 1e-12);
    }

    #[test]
    fn coverage_violation_is_an_error() {
        let (h_i, sn2) = unit_channel();
        let d = InputDistribution::new(vec![-5.0, 5.0], vec![0.5, 0.5]).unwrap();
        let grid = QuadratureGrid::with_max_step(-8.0, 8.0, 0.02);
        assert!(matches!(
            output_log_density(&d, h_i, sn2, &grid),
            Err(ChannelError::GridCoverage { .. })
        ));
    }

    #[test]
    fn density_normalizes() {
        let (h_i, sn2) = unit_channel();
        for amps in [vec![0.0], vec![-2.0, 1.0, 5.0]] {
            let n = amps.len();
            let d = InputDistribution::new(amps, vec![1.0 / n as f64; n]).unwrap();
            let dens = OutputDensity::for_distribution(&d, h_i, sn2);
            assert!((dens.total_mass() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn marginal_density_of_own_atom_is_zero() {
        let (h_i, sn2) = unit_channel();
        let d = InputDistribution::single_atom(1.3);
        let dens = OutputDensity::for_distribution(&d, h_i, sn2);
        let i = marginal_information_density(1.3, &dens, h_i, sn2);
        assert!(i.abs() < 1e-9, "got {i}");
    }

    #[test]
    fn marginal_density_far_binary() {
        // atoms at +-5 (normalized separation 10): nearly one full bit.
        // Frozen from an independent 30-digit quadrature:
        // 0.99999872717447109...
        let (h_i, sn2) = unit_channel();
        let d = InputDistribution::new(vec![-5.0, 5.0], vec![0.5, 0.5]).unwrap();
        let dens = OutputDensity::for_distribution(&d, h_i, sn2);
        let i = marginal_information_density(5.0, &dens, h_i, sn2);
        assert!((i - 0.9999987271744711).abs() < 1e-9, "got {i}");
        // mirror symmetry
        let im = marginal_information_density(-5.0, &dens, h_i, sn2);
        assert!((i - im).abs() < 1e-12);
    }

    #[test]
    fn single_atom_carries_no_information() {
        let (h_i, sn2) = unit_channel();
        let d = InputDistribution::single_atom(0.7);
        let dens = OutputDensity::for_distribution(&d, h_i, sn2);
        assert!(mutual_information(&d, &dens, h_i, sn2).abs() < 1e-8);
    }

    /// Independent oracle for equiprobable binary AWGN:
    /// `1 - E_Z[log2(1 + exp(-2 mu^2 - 2 mu Z))]` by direct quadrature.
    fn binary_awgn_capacity(mu: f64) -> f64 {
        let g = QuadratureGrid::with_max_step(-40.0, 40.0, 0.002);
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let vals: Vec<f64> = g
            .nodes()
            .iter()
            .map(|&z| {
                let phi = norm * (-0.5 * z * z).exp();
                phi * (1.0 + (-2.0 * mu * mu - 2.0 * mu * z).exp()).log2()
            })
            .collect();
        1.0 - g.integrate(&vals)
    }

    #[test]
    fn binary_matches_independent_oracle() {
        let (h_i, sn2) = unit_channel();
        for mu in [0.5, 1.0, 2.0] {
            let d = InputDistribution::new(vec![-mu, mu], vec![0.5, 0.5]).unwrap();
            let dens = OutputDensity::for_distribution(&d, h_i, sn2);
            let got = mutual_information(&d, &dens, h_i, sn2);
            let want = binary_awgn_capacity(mu);
            assert!((got - want).abs() < 1e-4, "mu={mu}: {got} vs {want}");
        }
        // the mu = 1 value is also pinned from a 30-digit reference
        assert!((binary_awgn_capacity(1.0) - 0.4859441544506567).abs() < 1e-10);
    }

    #[test]
    fn snr_scale_invariance() {
        // scaling amplitudes and noise sigma together leaves I unchanged
        let d1 = InputDistribution::new(vec![-2.0, 0.5, 2.0], vec![0.3, 0.3, 0.4]).unwrap();
        let dens1 = OutputDensity::for_distribution(&d1, 1.0, 1.0);
        let i1 = mutual_information(&d1, &dens1, 1.0, 1.0);
        let k = 137.0;
        let amps: Vec<f64> = d1.amplitudes().iter().map(|x| x * k).collect();
        let d2 = InputDistribution::new(amps, d1.masses().to_vec()).unwrap();
        let dens2 = OutputDensity::for_distribution(&d2, 1.0, k * k);
        let i2 = mutual_information(&d2, &dens2, 1.0, k * k);
        assert!((i1 - i2).abs() < 1e-10);
    }

    #[test]
    fn shannon_values() {
        assert!((shannon_capacity(1.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((shannon_capacity(3.0, 1.0, 1.0) - 1.0).abs() < 1e-15);
        // SNR -> 0 limit
        assert!(shannon_capacity(1e-300, 1.0, 1.0) < 1e-15);
    }

    #[test]
    fn information_below_shannon() {
        let (h_i, sn2) = unit_channel();
        for masses in [vec![0.25, 0.5, 0.25], vec![0.1, 0.2, 0.7]] {
            let d = InputDistribution::new(vec![-1.5, 0.0, 1.5], masses).unwrap();
            let dens = OutputDensity::for_distribution(&d, h_i, sn2);
            let i = mutual_information(&d, &dens, h_i, sn2);
            assert!(i >= 0.0);
            assert!(i <= shannon_capacity(d.average_power(), h_i, sn2) + 1e-6);
        }
    }

    #[test]
    fn step_halving_convergence() {
        let (h_i, sn2) = unit_channel();
        let d = InputDistribution::new(vec![-2.0, -0.3, 1.0, 2.0], vec![0.2, 0.3, 0.3, 0.2])
            .unwrap();
        let g1 = default_output_grid(&d, h_i, sn2, DEFAULT_COVERAGE, DEFAULT_STEP);
        let g2 = default_output_grid(&d, h_i, sn2, DEFAULT_COVERAGE, DEFAULT_STEP / 2.0);
        let dens1 = output_log_density(&d, h_i, sn2, &g1).unwrap();
        let dens2 = output_log_density(&d, h_i, sn2, &g2).unwrap();
        let i1 = mutual_information(&d, &dens1, h_i, sn2);
        let i2 = mutual_information(&d, &dens2, h_i, sn2);
        assert!((i1 - i2).abs() < 1e-6, "step halving moved I by {}", i1 - i2);
    }

    #[test]
    fn mixture_concavity() {
        let (h_i, sn2) = unit_channel();
        let xs = vec![-2.0, -1.0, 0.0, 1.0, 2.0];
        let f1 = InputDistribution::new(xs.clone(), vec![0.3, 0.1, 0.2, 0.1, 0.3]).unwrap();
        let f2 = InputDistribution::new(xs.clone(), vec![0.05, 0.25, 0.4, 0.25, 0.05]).unwrap();
        let dens1 = OutputDensity::for_distribution(&f1, h_i, sn2);
        let dens2 = OutputDensity::for_distribution(&f2, h_i, sn2);
        let i1 = mutual_information(&f1, &dens1, h_i, sn2);
        let i2 = mutual_information(&f2, &dens2, h_i, sn2);
        for alpha in [0.25, 0.5, 0.75] {
            let masses: Vec<f64> = f1
                .masses()
                .iter()
                .zip(f2.masses())
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect();
            let mix = InputDistribution::new(xs.clone(), masses).unwrap();
            let densm = OutputDensity::for_distribution(&mix, h_i, sn2);
            let im = mutual_information(&mix, &densm, h_i, sn2);
            assert!(im >= alpha * i1 + (1.0 - alpha) * i2 - 1e-9);
        }
    }
}
