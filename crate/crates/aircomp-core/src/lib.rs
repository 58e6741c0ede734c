//! Over-the-air computation on OTFS frames.
//!
//! Devices place unit-power data symbols on a delay-Doppler grid, precode
//! against their principal channel path, and transmit simultaneously; the
//! fusion center estimates the per-symbol average straight from the
//! superposed signal. This crate implements the full pipeline:
//!
//! * [`grid`] — delay-Doppler / time-frequency transforms and the discrete
//!   multipath input-output relation;
//! * [`channel`] — multipath channel sampling and the block-circulant channel
//!   matrix acting on zero-padded frames;
//! * [`naive`] — aggregation over plain frames with the closed-form jointly
//!   optimal transmit power and denoising factor;
//! * [`zp`] — zero-padded frames with scheduled successive interference
//!   cancellation, per-row closed-form power/denoising/cancellation
//!   coefficients, exact error propagation, and Monte Carlo simulation;
//! * [`harness`] — seeded, reproducible experiment sweeps with CSV output and
//!   brute-force oracles for every closed form.

pub mod channel;
pub mod error;
pub mod grid;
pub mod harness;
pub mod naive;
pub mod rng;
pub mod zp;

pub use channel::{
    build_channel_matrix, sample_channel, sample_ensemble, BlockChannelMatrix, ChannelEnsemble,
    MultipathChannel, PathTap,
};
pub use error::{Error, Result};
pub use grid::{alpha, dd_io_relation, isfft, sfft, DelayDopplerFrame, TimeFrequencyGrid};
pub use harness::{
    oracle_theorem1, oracle_zeta, reports_consistent, reports_to_csv, run_sweep, sweep_paths,
    ExperimentConfig, MseReport, OracleOutcome, Policy, Scheme,
};
pub use naive::{
    analytic_mse, arrange_frame, estimate_and_measure, full_power_policy, optimal_power_given_eta,
    precode, single_device_policy, sort_devices, theorem1_solve, EmpiricalMse, MseBreakdown,
    PowerPolicy, SymbolDist, SystemParams,
};
pub use zp::{
    estimate_row_clean, estimate_row_sic, interference_sets, sic_estimate_frame, sic_plan,
    simulate_sic, solve_sic, zeta_star, zp_arrange, CancelMode, Direction, InterferenceTerm,
    PlannedRow, RowEstimate, SicMonteCarlo, SicPlan, SicSolution, ZetaTerm, ZpLayout,
};
