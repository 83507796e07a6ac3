//! Full-duplex assisted inter-cell interference cancellation (fICIC) for
//! heterogeneous networks.
//!
//! A pico base station (PBS) equipped with dedicated full-duplex receive
//! antennas listens to the macro downlink while transmitting, and superimposes
//! a phase-aligned copy of the overheard macro signal onto its own downlink so
//! that the cross-tier interference cancels at the pico users. Everything runs
//! at the PBS: the macro base station is untouched.
//!
//! The crate provides:
//!
//! * [`channel`] — scenario generation: geometry, path loss, Rayleigh fading,
//!   macro precoding, and the equivalent channels every solver consumes.
//! * [`nb_single`] — the closed-form optimal forwarding/transmit precoder pair
//!   for the narrowband single-user case, plus asymptotic formulas.
//! * [`nb_multi`] — the multi-user sum-rate solver: bisection over the rate,
//!   fixed-point duals, closed-form precoder recovery, power allocation.
//! * [`wideband`] — OFDM generalization with an L-tap FIR forwarding precoder
//!   optimized by projected gradient ascent.
//! * [`baselines`] — half-duplex, ABS muting, and SLNR coordinated-beamforming
//!   comparison schemes, alone and combined with fICIC.
//! * [`oracle`] — independent brute-force and residual verifiers used by the
//!   test suites and the `verify` CLI subcommand.
//! * [`harness`] — seeded Monte Carlo sweeps with CSV output and optional
//!   data-parallel trial execution (feature `parallel`).

pub mod baselines;
pub mod channel;
pub mod error;
pub mod harness;
pub mod nb_multi;
pub mod nb_single;
pub mod oracle;
pub mod units;
pub mod wideband;

pub use error::{FicicError, Result};
pub use nb_single::FicicSolution;
