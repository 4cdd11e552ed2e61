//! Scalar numerics shared by every other module: the modified Bessel
//! function I0 and its logarithm, stable log-sum-exp accumulation,
//! bisection root finding, and uniform trapezoidal quadrature grids.

use std::fmt;

/// Series/asymptotic crossover for I0. Both expansions agree to better
/// than 1e-13 relative in a band around this point.
const I0_SERIES_CUTOFF: f64 = 15.0;

/// Largest argument for which I0(z) fits in an f64 (I0(713) ~ 1.6e308).
const I0_OVERFLOW_ARG: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    /// I0(z) exceeds the representable range; use [`log_bessel_i0`].
    BesselOverflow { arg: f64 },
    /// log_sum_exp needs at least one strictly positive weight.
    AllWeightsZero,
    /// Mismatched or empty input slices.
    BadLength { values: usize, weights: usize },
    /// Bisection requires f(lo) and f(hi) of opposite sign.
    NoSignChange { lo: f64, hi: f64, flo: f64, fhi: f64 },
    /// Invalid bracket or tolerance for bisection.
    BadBracket { lo: f64, hi: f64, tol: f64 },
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BesselOverflow { arg } => {
                write!(f, "I0({arg}) overflows f64; use log_bessel_i0")
            }
            Self::AllWeightsZero => write!(f, "log_sum_exp: all weights are zero"),
            Self::BadLength { values, weights } => {
                write!(f, "mismatched lengths: {values} values vs {weights} weights")
            }
            Self::NoSignChange { lo, hi, flo, fhi } => {
                write!(f, "no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")
            }
            Self::BadBracket { lo, hi, tol } => {
                write!(f, "invalid bracket [{lo}, {hi}] or tolerance {tol}")
            }
        }
    }
}

impl std::error::Error for NumericsError {}

/// Power series Σ (z/2)^{2m} / (m!)², summed until terms vanish at
/// machine precision. Accurate for |z| up to the crossover.
fn i0_series(z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..200 {
        term *= q / ((m * m) as f64);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

/// ln I0 via the large-argument expansion
/// I0(z) ~ e^z / sqrt(2 pi z) * (1 + 1/(8z) + 9/(128 z^2) + ...).
/// The correction series is summed to its smallest term.
fn log_i0_asymptotic(z: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..40 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        term *= odd * odd / (8.0 * kf * z);
        if term.abs() >= prev {
            break;
        }
        prev = term.abs();
        sum += term;
        if term.abs() < 1e-18 * sum {
            break;
        }
    }
    z - 0.5 * (2.0 * std::f64::consts::PI * z).ln() + sum.ln()
}

/// Modified Bessel function of the first kind, order zero. Even in `z`.
///
/// Errors with [`NumericsError::BesselOverflow`] for |z| > 700, where the
/// unscaled value no longer fits in an f64.
pub fn bessel_i0(z: f64) -> Result<f64, NumericsError> {
    let az = z.abs();
    if !az.is_finite() || az > I0_OVERFLOW_ARG {
        return Err(NumericsError::BesselOverflow { arg: z });
    }
    if az <= I0_SERIES_CUTOFF {
        Ok(i0_series(az))
    } else {
        Ok(log_i0_asymptotic(az).exp())
    }
}

/// ln I0(z). Never overflows for finite `z`; even in `z`.
pub fn log_bessel_i0(z: f64) -> f64 {
    let az = z.abs();
    if az <= I0_SERIES_CUTOFF {
        i0_series(az).ln()
    } else {
        log_i0_asymptotic(az)
    }
}

/// ln Σ w_i e^{v_i}, computed after shifting by the largest active
/// exponent so intermediate values never overflow.
pub fn log_sum_exp(values: &[f64], weights: &[f64]) -> Result<f64, NumericsError> {
    if values.len() != weights.len() || values.is_empty() {
        return Err(NumericsError::BadLength {
            values: values.len(),
            weights: weights.len(),
        });
    }
    let mut vmax = f64::NEG_INFINITY;
    for (&v, &w) in values.iter().zip(weights) {
        if w > 0.0 && v > vmax {
            vmax = v;
        }
    }
    if vmax == f64::NEG_INFINITY {
        if weights.iter().all(|&w| w == 0.0) {
            return Err(NumericsError::AllWeightsZero);
        }
        return Ok(f64::NEG_INFINITY);
    }
    let mut acc = 0.0;
    for (&v, &w) in values.iter().zip(weights) {
        if w > 0.0 {
            acc += w * (v - vmax).exp();
        }
    }
    Ok(vmax + acc.ln())
}

/// Bisection on a sign-changing bracket. Shrinks `[lo, hi]` below `tol`
/// and returns the midpoint of the final bracket.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64, NumericsError> {
    if !(lo < hi) || !(tol > 0.0) {
        return Err(NumericsError::BadBracket { lo, hi, tol });
    }
    let flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(NumericsError::NoSignChange { lo, hi, flo, fhi });
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut flo = flo;
    // 200 halvings always exhausts f64 resolution.
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Uniform grid with trapezoidal weights: interior nodes carry the full
/// step, the two end nodes half of it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl QuadratureGrid {
    pub fn new(lower: f64, upper: f64, count: usize) -> Self {
        assert!(lower < upper, "quadrature grid needs lower < upper");
        assert!(count >= 3, "quadrature grid needs at least 3 nodes");
        Self { lower, upper, count }
    }

    /// Uniform grid over `[lower, upper]` with step at most `max_step`.
    pub fn with_max_step(lower: f64, upper: f64, max_step: f64) -> Self {
        assert!(max_step > 0.0);
        let count = ((upper - lower) / max_step).ceil() as usize + 1;
        Self::new(lower, upper, count.max(3))
    }

    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.count - 1) as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        self.lower + self.step() * k as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.node(k)).collect()
    }

    /// Trapezoidal weight of node `k`.
    pub fn weight(&self, k: usize) -> f64 {
        let h = self.step();
        if k == 0 || k == self.count - 1 {
            0.5 * h
        } else {
            h
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.weight(k)).collect()
    }

    /// Trapezoidal integral of sampled values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.count);
        values
            .iter()
            .enumerate()
            .map(|(k, &v)| self.weight(k) * v)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: the defining power series, summed in f64 to
    /// machine precision. Used to pin expected values below.
    fn i0_series_oracle(z: f64) -> f64 {
        let q = 0.25 * z * z;
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        for m in 1..400 {
            term *= q / ((m * m) as f64);
            sum += term;
            if term < sum * 1e-20 {
                break;
            }
        }
        sum
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn i0_at_zero_is_one() {
        assert_eq!(bessel_i0(0.0).unwrap(), 1.0);
    }

    #[test]
    fn i0_at_one_matches_series_oracle() {
        // Frozen from the series oracle (independently cross-checked
        // against a 40-digit evaluation: 1.266065877752008335...).
        let expected = 1.2660658777520084;
        assert!(rel_err(bessel_i0(1.0).unwrap(), expected) < 1e-15);
        assert!(rel_err(i0_series_oracle(1.0), expected) < 1e-15);
    }

    #[test]
    fn i0_is_even() {
        for z in [0.5, 2.0, 7.0, 20.0, 100.0] {
            assert_eq!(bessel_i0(z).unwrap(), bessel_i0(-z).unwrap());
            assert_eq!(log_bessel_i0(z), log_bessel_i0(-z));
        }
    }

    #[test]
    fn i0_matches_series_up_to_30() {
        let mut z = 0.0;
        while z <= 30.0 {
            let got = bessel_i0(z).unwrap();
            let want = i0_series_oracle(z);
            assert!(
                rel_err(got, want) < 1e-12,
                "z={z}: got {got}, series {want}"
            );
            z += 0.25;
        }
    }

    #[test]
    fn i0_overflow_is_an_error() {
        assert!(matches!(
            bessel_i0(701.0),
            Err(NumericsError::BesselOverflow { .. })
        ));
        assert!(bessel_i0(f64::NAN).is_err());
        // log variant keeps working far beyond
        assert!(log_bessel_i0(5000.0).is_finite());
    }

    #[test]
    fn log_i0_consistent_with_i0() {
        let mut z = 0.0;
        while z <= 30.0 {
            let a = log_bessel_i0(z).exp();
            let b = bessel_i0(z).unwrap();
            assert!(rel_err(a, b) < 1e-12, "z={z}");
            z += 0.5;
        }
    }

    #[test]
    fn log_i0_zero() {
        assert_eq!(log_bessel_i0(0.0), 0.0);
    }

    #[test]
    fn log_i0_large_argument() {
        // ln I0(1000) from a 40-digit reference: 995.62730888986946...
        let got = log_bessel_i0(1000.0);
        assert!(rel_err(got, 995.6273088898695) < 1e-12);
        // leading-order sanity: z - 0.5 ln(2 pi z)
        let lead = 1000.0 - 0.5 * (2.0 * std::f64::consts::PI * 1000.0).ln();
        assert!(rel_err(got, lead) < 1e-9);
    }

    #[test]
    fn log_i0_crossover_band_agrees() {
        // Series and asymptotic regimes must agree where they meet.
        for z in [14.0, 14.5, 15.0, 15.5, 16.0] {
            let series = i0_series_oracle(z).ln();
            let asym = log_i0_asymptotic(z);
            assert!((series - asym).abs() < 1e-12, "z={z}");
        }
    }

    #[test]
    fn lse_simple_cases() {
        // ln(0.5 e^0 + 0.5 e^0) = 0
        assert!(log_sum_exp(&[0.0, 0.0], &[0.5, 0.5]).unwrap().abs() < 1e-15);
        // shift far outside naive range
        let got = log_sum_exp(&[1000.0, 1000.0], &[1.0, 1.0]).unwrap();
        assert!((got - (1000.0 + 2.0f64.ln())).abs() < 1e-12);
        // ln(e^0 + e^{ln 3}) = ln 4
        let got = log_sum_exp(&[0.0, 3.0f64.ln()], &[1.0, 1.0]).unwrap();
        assert!((got - 4.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn lse_rejects_degenerate_input() {
        assert!(matches!(
            log_sum_exp(&[1.0, 2.0], &[0.0, 0.0]),
            Err(NumericsError::AllWeightsZero)
        ));
        assert!(log_sum_exp(&[1.0], &[1.0, 2.0]).is_err());
        assert!(log_sum_exp(&[], &[]).is_err());
    }

    #[test]
    fn bisect_linear_quadratic_exponential() {
        let r = bisect(|x| x - 2.0, 0.0, 10.0, 1e-12).unwrap();
        assert!((r - 2.0).abs() < 1e-11);
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - std::f64::consts::SQRT_2).abs() < 1e-11);
        let r = bisect(|x| x.exp() - 5.0, 0.0, 3.0, 1e-12).unwrap();
        assert!((r - 5.0f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn bisect_needs_sign_change() {
        assert!(matches!(
            bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-9),
            Err(NumericsError::NoSignChange { .. })
        ));
    }

    #[test]
    fn bisect_bracket_independence() {
        let f = |x: f64| x.exp() - 5.0;
        let a = bisect(f, 0.0, 3.0, 1e-13).unwrap();
        let b = bisect(f, 1.0, 100.0, 1e-13).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn grid_basics() {
        let g = QuadratureGrid::new(-1.0, 1.0, 5);
        assert_eq!(g.step(), 0.5);
        assert_eq!(g.nodes(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(g.weight(0), 0.25);
        assert_eq!(g.weight(2), 0.5);
        // integral of x^2 over [-1,1] by trapezoid on 5 nodes: 0.75
        let vals: Vec<f64> = g.nodes().iter().map(|x| x * x).collect();
        assert!((g.integrate(&vals) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn grid_gaussian_integrates_to_one() {
        let g = QuadratureGrid::with_max_step(-10.0, 10.0, 0.02);
        let vals: Vec<f64> = g
            .nodes()
            .iter()
            .map(|u| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt())
            .collect();
        assert!((g.integrate(&vals) - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lse_shift_invariance(
                vals in proptest::collection::vec(-50.0f64..50.0, 1..20),
                c in -100.0f64..100.0,
            ) {
                let w = vec![1.0; vals.len()];
                let base = log_sum_exp(&vals, &w).unwrap();
                let shifted: Vec<f64> = vals.iter().map(|v| v + c).collect();
                let got = log_sum_exp(&shifted, &w).unwrap();
                prop_assert!((got - (base + c)).abs() < 1e-9);
            }

            #[test]
            fn i0_series_property(z in 0.0f64..30.0) {
                let got = bessel_i0(z).unwrap();
                let want = i0_series_oracle(z);
                prop_assert!((got - want).abs() <= 1e-12 * want);
            }
        }
    }
}
