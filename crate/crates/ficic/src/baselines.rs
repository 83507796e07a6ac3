//! Comparison schemes: half-duplex, ABS muting, SLNR coordinated beamforming,
//! and their combinations with fICIC.
//!
//! Accounting conventions:
//!
//! * `HD` runs the multi-user solver with the forwarding precoder pinned to
//!   zero (duals and power allocation unchanged).
//! * `EICIC` serves the pico users only during the muted subframes: half of an
//!   interference-free half-duplex rate. It uses no full-duplex hardware, so
//!   it is independent of the self-interference level.
//! * `EICIC_PLUS_FICIC` adds the other half: fICIC runs against the
//!   interference during the active subframes.
//! * `COMP_CB` swaps the macro precoder for the SLNR beamformer and keeps the
//!   pico side half-duplex; `COMP_CB_PLUS_FICIC` runs fICIC under it.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{mbs_precoder, NarrowbandScenario, RawChannels};
use crate::error::{FicicError, Result};
use crate::nb_multi::{
    p_out_multi, sinr_eval_multi, solve_sum_rate_mode, FairnessSpec, ForwardingMode,
};

/// Closed enumeration of the comparison schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeId {
    FdFicic,
    Hd,
    Eicic,
    EicicPlusFicic,
    CompCb,
    CompCbPlusFicic,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::FdFicic,
        SchemeId::Hd,
        SchemeId::Eicic,
        SchemeId::EicicPlusFicic,
        SchemeId::CompCb,
        SchemeId::CompCbPlusFicic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeId::FdFicic => "FD_FICIC",
            SchemeId::Hd => "HD",
            SchemeId::Eicic => "EICIC",
            SchemeId::EicicPlusFicic => "EICIC_PLUS_FICIC",
            SchemeId::CompCb => "COMP_CB",
            SchemeId::CompCbPlusFicic => "COMP_CB_PLUS_FICIC",
        }
    }

    /// Whether the macro side uses the SLNR beamformer instead of the default
    /// maximum-ratio / zero-forcing precoder.
    pub fn uses_slnr(&self) -> bool {
        matches!(self, SchemeId::CompCb | SchemeId::CompCbPlusFicic)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = FicicError;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .iter()
            .find(|id| id.as_str() == s)
            .copied()
            .ok_or_else(|| FicicError::Config(format!("unknown scheme: {s}")))
    }
}

/// Half-duplex sum rate: sum-rate bisection with the forwarding precoder
/// frozen at zero.
pub fn hd_rate(
    s: &NarrowbandScenario,
    fairness: &FairnessSpec,
    eps: f64,
) -> Result<crate::nb_multi::BisectionReport> {
    solve_sum_rate_mode(s, fairness, eps, ForwardingMode::Disabled)
}

/// ABS-muting rate: the users are served only in the muted half of the
/// subframes, interference-free, half-duplex. Returns the rate and the
/// underlying interference-free report.
pub fn eicic_rate(
    s: &NarrowbandScenario,
    fairness: &FairnessSpec,
    eps: f64,
) -> Result<(f64, crate::nb_multi::BisectionReport)> {
    let report = hd_rate(&s.ici_free(), fairness, eps)?;
    Ok((0.5 * report.r_sum, report))
}

/// SLNR beamformer: column `m` maximizes the ratio of the power delivered to
/// macro user `m` over the leakage towards the listed victims plus noise,
/// i.e. the dominant generalized eigenvector of
/// `(h_m h_m^H, sigma_n2 I + sum_leak h h^H)`. Columns are unit norm with a
/// deterministic phase (first significant entry real positive).
pub fn slnr_precoder(
    h_mue: &[DVector<Complex64>],
    h_leak: &[DVector<Complex64>],
    sigma_n2: f64,
) -> Result<DMatrix<Complex64>> {
    let k_m = h_mue.len();
    if k_m == 0 {
        return Err(FicicError::Domain("no macro users".into()));
    }
    let m = h_mue[0].len();
    if !(sigma_n2 > 0.0) {
        return Err(FicicError::Domain("noise power must be positive".into()));
    }
    let mut denom = DMatrix::<Complex64>::identity(m, m) * Complex64::from(sigma_n2);
    for h in h_leak {
        if h.len() != m {
            return Err(FicicError::Domain("leakage channel length mismatch".into()));
        }
        denom += h * h.adjoint();
    }
    let lu = denom.lu();
    let mut w = DMatrix::<Complex64>::zeros(m, k_m);
    for (j, h) in h_mue.iter().enumerate() {
        // Rank-one numerator: the dominant generalized eigenvector is the
        // whitened match to h_m.
        let mut col = lu
            .solve(h)
            .ok_or_else(|| FicicError::RankDeficient("leakage-plus-noise matrix".into()))?;
        let norm = col.norm();
        if norm == 0.0 {
            return Err(FicicError::RankDeficient("zero SLNR direction".into()));
        }
        col /= Complex64::from(norm);
        if let Some(p) = col.iter().find(|z| z.norm() > 1e-12 * norm.max(1.0)).copied() {
            col *= p.conj() / Complex64::from(p.norm());
        }
        w.set_column(j, &col);
    }
    Ok(w)
}

/// Macro precoder for a scheme: SLNR for the coordinated-beamforming modes,
/// maximum-ratio / zero-forcing otherwise.
pub fn w_m_for_scheme(
    id: SchemeId,
    raw: &RawChannels,
    sigma_n2: f64,
) -> Result<DMatrix<Complex64>> {
    if id.uses_slnr() {
        slnr_precoder(&raw.h_mue, &raw.h_mk, sigma_n2)
    } else {
        mbs_precoder(&raw.h_mue)
    }
}

/// Result of one scheme on one cell.
#[derive(Debug, Clone)]
pub struct CellEvaluation {
    pub scheme: SchemeId,
    /// Realized sum rate (b/s/Hz), evaluated on the true channels.
    pub sum_rate: f64,
    pub per_ue_rates: Vec<f64>,
    /// Realized transmit power of the active-subframe solution (W).
    pub p_out: f64,
    /// Outer bisection iterations spent (summed over sub-solves).
    pub iterations: usize,
}

fn realized(
    true_s: &NarrowbandScenario,
    sol: &crate::nb_single::FicicSolution,
) -> Result<(Vec<f64>, f64)> {
    let sinr = sinr_eval_multi(true_s, sol)?;
    let rates = sinr.iter().map(|&g| (1.0 + g).log2()).collect();
    let p = p_out_multi(true_s, sol)?;
    Ok((rates, p))
}

/// Run a scheme's pico-side solver on `solve_s` (the channels the PBS believes
/// in) and score the resulting precoders on `true_s`. With perfect channel
/// knowledge pass the same scenario twice.
pub fn pbs_rate_for_scheme(
    id: SchemeId,
    true_s: &NarrowbandScenario,
    solve_s: &NarrowbandScenario,
    fairness: &FairnessSpec,
    eps: f64,
) -> Result<CellEvaluation> {
    let fd = ForwardingMode::Optimized;
    let hd = ForwardingMode::Disabled;
    match id {
        SchemeId::FdFicic | SchemeId::CompCbPlusFicic => {
            let report = solve_sum_rate_mode(solve_s, fairness, eps, fd)?;
            let (rates, p_out) = realized(true_s, &report.solution)?;
            Ok(CellEvaluation {
                scheme: id,
                sum_rate: rates.iter().sum(),
                per_ue_rates: rates,
                p_out,
                iterations: report.outer_iterations,
            })
        }
        SchemeId::Hd | SchemeId::CompCb => {
            let report = solve_sum_rate_mode(solve_s, fairness, eps, hd)?;
            let (rates, p_out) = realized(true_s, &report.solution)?;
            Ok(CellEvaluation {
                scheme: id,
                sum_rate: rates.iter().sum(),
                per_ue_rates: rates,
                p_out,
                iterations: report.outer_iterations,
            })
        }
        SchemeId::Eicic => {
            let report = solve_sum_rate_mode(&solve_s.ici_free(), fairness, eps, hd)?;
            let (rates, p_out) = realized(&true_s.ici_free(), &report.solution)?;
            Ok(CellEvaluation {
                scheme: id,
                sum_rate: 0.5 * rates.iter().sum::<f64>(),
                per_ue_rates: rates.iter().map(|r| 0.5 * r).collect(),
                p_out,
                iterations: report.outer_iterations,
            })
        }
        SchemeId::EicicPlusFicic => {
            // Muted half: interference-free half-duplex (forwarding has
            // nothing to listen to). Active half: fICIC against the
            // interference.
            let abs = solve_sum_rate_mode(&solve_s.ici_free(), fairness, eps, hd)?;
            let (abs_rates, _) = realized(&true_s.ici_free(), &abs.solution)?;
            let act = solve_sum_rate_mode(solve_s, fairness, eps, fd)?;
            let (act_rates, p_out) = realized(true_s, &act.solution)?;
            let per_ue: Vec<f64> = abs_rates
                .iter()
                .zip(&act_rates)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            Ok(CellEvaluation {
                scheme: id,
                sum_rate: per_ue.iter().sum(),
                per_ue_rates: per_ue,
                p_out,
                iterations: abs.outer_iterations + act.outer_iterations,
            })
        }
    }
}

/// Perfect-knowledge convenience: draw every cell of the layout once and
/// evaluate the scheme on each.
pub fn evaluate_scheme<R: rand::Rng + ?Sized>(
    id: SchemeId,
    cfg: &crate::channel::GeometryConfig,
    rng: &mut R,
    eps: f64,
) -> Result<Vec<CellEvaluation>> {
    cfg.validate()?;
    let sigma_n2 = cfg.sigma_n2_w()?;
    (0..cfg.cells())
        .map(|cell| {
            let raw = crate::channel::draw_raw_channels(cfg, cell, rng)?;
            let w_m = w_m_for_scheme(id, &raw, sigma_n2)?;
            let s = crate::channel::assemble_scenario(cfg, &raw, &w_m)?;
            let fairness = FairnessSpec::uniform(s.k_p());
            pbs_rate_for_scheme(id, &s, &s, &fairness, eps)
        })
        .collect()
}
