//! Capacity and rate-energy region of a scalar AWGN channel feeding both
//! an information decoder and a nonlinear RF energy harvester.
//!
//! The crate solves, over discrete amplitude distributions on `[-A, A]`,
//!
//! ```text
//! maximize   I(F)
//! subject to E[X^2]                    <= sigma_x^2   (average power)
//!            E[I0(sqrt(2) B h_E X)]    >= E_req       (harvested power)
//! ```
//!
//! and certifies the result against the problem's stationarity
//! conditions. Modules:
//!
//! - [`numerics`]: Bessel I0, log-sum-exp, bisection, quadrature grids
//! - [`rectenna`]: diode rectifier model, harvesting metric, inversion
//! - [`channel`]: path loss, output densities, mutual information
//! - [`solver`]: constrained solver on a fixed amplitude grid
//! - [`certificate`]: independent optimality verification
//! - [`region`]: rate-energy and capacity-vs-power sweeps, CSV output

pub mod certificate;
pub mod channel;
pub mod numerics;
pub mod rectenna;
pub mod region;
pub mod solver;

pub use channel::{
    mutual_information, path_loss_gain, shannon_capacity, ChannelParams, InputDistribution,
    OutputDensity, Receiver,
};
pub use certificate::{e_lim, kkt_check, support_count_stability, KktReport};
pub use numerics::{bessel_i0, bisect, log_bessel_i0, log_sum_exp, QuadratureGrid};
pub use rectenna::{
    e_req_from_power, eh_metric, harvested_power, max_feasible_metric, mgf_time_average_oracle,
    CircuitParams, EhBudget,
};
pub use region::{
    capacity_vs_ap, emit_ap_csv, emit_csv, rate_energy_region, ApSweepRow, Baselines, RegionPoint,
    RegionSweep, SolveStatus, SweepSpec, SweepVariable,
};
pub use solver::{
    ask_rate, dual_solve, extract_mass_points, no_pp_solve, MassPoint, Multipliers, ProblemSpec,
    Solution, SolutionKind, SolverError, Tolerances,
};
