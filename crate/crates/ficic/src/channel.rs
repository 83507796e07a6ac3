//! Scenario generation: geometry, large-scale gains, small-scale fading, macro
//! precoding, and the equivalent channels consumed by the solvers.
//!
//! Conventions
//!
//! * Macro-side channels absorb the macro transmit amplitude: an entry of an
//!   MBS-to-X channel is drawn as `CN(0, (P_M / K_M) * 10^(-PL/10))`, so with a
//!   unit-norm macro precoding column and unit-variance macro symbols the
//!   received interference power is exactly the squared equivalent channel.
//! * Pico-side channels `h_Pk` are pure propagation gains; the pico transmit
//!   power enters through the precoder norms and the budget `P0`.
//! * The pico cell is an indoor hotspot: the 20 dB penetration loss applies to
//!   the macro signal reaching the (indoor) pico users, while the pico
//!   transmit antennas sit inside with their users and the listening antennas
//!   are mounted outdoors — so neither the serving link nor the listening link
//!   carries the wall loss.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FicicError, Result};
use crate::units::{db_to_linear, dbm_to_watts};

/// Path-loss law selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Macro,
    Pico,
}

/// Distance-dependent attenuation in dB; `d_km` is the distance in kilometres.
pub fn path_loss_db(d_km: f64, tier: Tier) -> Result<f64> {
    if !(d_km > 0.0) {
        return Err(FicicError::Domain(format!(
            "path loss needs a positive distance, got {d_km} km"
        )));
    }
    Ok(match tier {
        Tier::Macro => 128.1 + 37.6 * d_km.log10(),
        Tier::Pico => 140.7 + 36.7 * d_km.log10(),
    })
}

/// Noise power in dBm such that a macro user at the cell edge sees the
/// requested average SNR: `P_M - PL_macro(R_M) - SNR_edge`.
pub fn noise_power_dbm(p_m_dbm: f64, r_macro_m: f64, snr_edge_db: f64) -> Result<f64> {
    let pl = path_loss_db(r_macro_m / 1000.0, Tier::Macro)?;
    Ok(p_m_dbm - pl - snr_edge_db)
}

/// i.i.d. circularly-symmetric complex Gaussian matrix with per-entry variance
/// `gain`. Entries are drawn column-major, so a fixed seed reproduces the
/// matrix bit for bit.
pub fn sample_rayleigh<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    gain: f64,
    rng: &mut R,
) -> Result<DMatrix<Complex64>> {
    if gain < 0.0 {
        return Err(FicicError::Domain(format!(
            "fading gain must be non-negative, got {gain}"
        )));
    }
    let s = (gain / 2.0).sqrt();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        data.push(Complex64::new(s * re, s * im));
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

fn sample_rayleigh_vec<R: Rng + ?Sized>(
    len: usize,
    gain: f64,
    rng: &mut R,
) -> Result<DVector<Complex64>> {
    Ok(DVector::from_column_slice(
        sample_rayleigh(len, 1, gain, rng)?.as_slice(),
    ))
}

/// Macro precoder with unit-norm columns: maximum-ratio for a single macro
/// user, zero-forcing otherwise. Fails on a rank-deficient stacked channel so
/// the caller can re-sample the degenerate draw.
pub fn mbs_precoder(h_mue: &[DVector<Complex64>]) -> Result<DMatrix<Complex64>> {
    let k_m = h_mue.len();
    if k_m == 0 {
        return Err(FicicError::Domain("no macro users".into()));
    }
    let m = h_mue[0].len();
    if h_mue.iter().any(|h| h.len() != m) {
        return Err(FicicError::Domain("macro user channels differ in length".into()));
    }
    if m < k_m {
        return Err(FicicError::Domain(format!(
            "macro antennas ({m}) fewer than macro users ({k_m})"
        )));
    }
    if k_m == 1 {
        let n = h_mue[0].norm();
        if n == 0.0 {
            return Err(FicicError::RankDeficient("zero macro user channel".into()));
        }
        return Ok(DMatrix::from_column_slice(m, 1, h_mue[0].as_slice()) / Complex64::from(n));
    }
    // Zero-forcing: W = H (H^H H)^-1, columns then normalized. Cross-user
    // products h_j^H w_i stay zero under the per-column rescale.
    let mut h = DMatrix::zeros(m, k_m);
    for (j, hj) in h_mue.iter().enumerate() {
        h.set_column(j, hj);
    }
    let gram = h.adjoint() * &h;
    let inv = gram.try_inverse().ok_or_else(|| {
        FicicError::RankDeficient("stacked macro user channel is singular".into())
    })?;
    let mut w = h * inv;
    for j in 0..k_m {
        let n = w.column(j).norm();
        if n == 0.0 {
            return Err(FicicError::RankDeficient("zero-forcing produced a zero column".into()));
        }
        let col = w.column(j) / Complex64::from(n);
        w.set_column(j, &col);
    }
    Ok(w)
}

/// RF impairment parameters of the full-duplex chain and the derived residual
/// self-interference coefficient `sigma_e2`.
///
/// `sigma_e2` multiplies the instantaneous transmit power to give the residual
/// self-interference power after cancellation; at full budget the residual
/// power is `sigma_I2 = P0 * sigma_e2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfImpairmentParams {
    /// Transmitter distortion factor (dimensionless, << 1 in practice).
    pub mu_x: f64,
    /// Receiver distortion factor (dimensionless, << 1 in practice).
    pub mu_y: f64,
    /// Pilot power used for self-interference channel estimation (W).
    pub p_tr: f64,
    /// Average self-interference channel gain (linear).
    pub alpha_pp: f64,
    /// Residual self-interference coefficient (dimensionless, >= 0).
    pub sigma_e2: f64,
}

impl RfImpairmentParams {
    /// Ideal cancellation: no residual self-interference.
    pub fn perfect() -> Self {
        Self { mu_x: 0.0, mu_y: 0.0, p_tr: f64::INFINITY, alpha_pp: 0.0, sigma_e2: 0.0 }
    }

    /// From hardware components: `sigma_e2 = sigma_n2/p_tr + 2*alpha_pp*(mu_x + mu_y)`.
    pub fn from_components(mu_x: f64, mu_y: f64, p_tr: f64, alpha_pp: f64, sigma_n2: f64) -> Result<Self> {
        if mu_x < 0.0 || mu_y < 0.0 || alpha_pp < 0.0 || !(p_tr > 0.0) || sigma_n2 < 0.0 {
            return Err(FicicError::Domain("impairment parameters must be non-negative with p_tr > 0".into()));
        }
        let sigma_e2 = sigma_n2 / p_tr + 2.0 * alpha_pp * (mu_x + mu_y);
        Ok(Self { mu_x, mu_y, p_tr, alpha_pp, sigma_e2 })
    }

    /// From a signal-to-self-interference ratio `SIR_self = P0/sigma_I2` in dB:
    /// `sigma_e2 = 10^(-SIR_self/10)`, independent of `P0`.
    pub fn from_sir_self_db(sir_self_db: f64) -> Self {
        Self {
            mu_x: 0.0,
            mu_y: 0.0,
            p_tr: f64::INFINITY,
            alpha_pp: 0.0,
            sigma_e2: db_to_linear(-sir_self_db),
        }
    }
}

/// How the residual self-interference level is specified in a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelfInterference {
    /// Ideal cancellation (`sigma_e2 = 0`).
    Perfect,
    /// `SIR_self` in dB relative to the pico budget.
    SirSelfDb { db: f64 },
    /// Explicit hardware components (pilot power in W).
    Components { mu_x: f64, mu_y: f64, p_tr_w: f64, alpha_pp: f64 },
}

impl SelfInterference {
    /// Resolve to the residual coefficient, given the noise floor in watts.
    pub fn sigma_e2(&self, sigma_n2_w: f64) -> Result<f64> {
        Ok(match *self {
            SelfInterference::Perfect => 0.0,
            SelfInterference::SirSelfDb { db } => RfImpairmentParams::from_sir_self_db(db).sigma_e2,
            SelfInterference::Components { mu_x, mu_y, p_tr_w, alpha_pp } => {
                RfImpairmentParams::from_components(mu_x, mu_y, p_tr_w, alpha_pp, sigma_n2_w)?.sigma_e2
            }
        })
    }
}

/// Network layout and radio parameters for scenario generation.
///
/// Positions are 2-D coordinates in metres. `pue_positions[c]` lists the users
/// of cell `c`; the user count per cell and the macro user count are implied
/// by the position lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub r_macro_m: f64,
    pub mbs_position: [f64; 2],
    pub mue_positions: Vec<[f64; 2]>,
    pub pbs_positions: Vec<[f64; 2]>,
    pub pue_positions: Vec<Vec<[f64; 2]>>,
    pub p_m_dbm: f64,
    pub p0_dbm: f64,
    pub snr_edge_db: f64,
    pub self_interference: SelfInterference,
    pub penetration_loss_db: f64,
    /// Macro transmit antennas.
    pub m: usize,
    /// Pico transmit antennas.
    pub n_t: usize,
    /// Pico full-duplex listening antennas.
    pub n_r: usize,
    /// Carrier phase accumulated over the forwarding delay (radians). The
    /// optimum is invariant to it; it only rotates the forwarding precoder.
    pub phi: f64,
}

impl GeometryConfig {
    /// Two-cell reference layout, one user per cell, one listening antenna.
    pub fn single_user_layout() -> Self {
        Self {
            r_macro_m: 500.0,
            mbs_position: [0.0, 0.0],
            mue_positions: vec![[120.0, 0.0]],
            pbs_positions: vec![[60.0, 0.0], [180.0, 0.0]],
            pue_positions: vec![vec![[60.0, 40.0]], vec![[180.0, 40.0]]],
            p_m_dbm: 46.0,
            p0_dbm: 30.0,
            snr_edge_db: 20.0,
            self_interference: SelfInterference::Perfect,
            penetration_loss_db: 20.0,
            m: 4,
            n_t: 2,
            n_r: 1,
            phi: 0.0,
        }
    }

    /// Two-cell reference layout, two users per cell, two listening antennas.
    pub fn multi_user_layout() -> Self {
        Self {
            mue_positions: vec![[120.0, 0.0]],
            pue_positions: vec![
                vec![[60.0, 40.0], [60.0, -40.0]],
                vec![[180.0, 40.0], [180.0, -40.0]],
            ],
            n_r: 2,
            ..Self::single_user_layout()
        }
    }

    /// Move cell `cell` so that its PBS sits at `(x, 0)`, dragging its users
    /// along (their offsets relative to the PBS are preserved).
    pub fn with_cell_x(mut self, cell: usize, x: f64) -> Self {
        let old = self.pbs_positions[cell];
        let dx = x - old[0];
        self.pbs_positions[cell][0] = x;
        for p in &mut self.pue_positions[cell] {
            p[0] += dx;
        }
        self
    }

    pub fn cells(&self) -> usize {
        self.pbs_positions.len()
    }

    pub fn k_m(&self) -> usize {
        self.mue_positions.len()
    }

    pub fn k_p(&self, cell: usize) -> usize {
        self.pue_positions[cell].len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_macro_m > 0.0) {
            return Err(FicicError::Config("macro radius must be positive".into()));
        }
        if self.penetration_loss_db < 0.0 {
            return Err(FicicError::Config("penetration loss must be non-negative".into()));
        }
        if self.mue_positions.is_empty() {
            return Err(FicicError::Config("need at least one macro user".into()));
        }
        if self.pbs_positions.is_empty() || self.pbs_positions.len() != self.pue_positions.len() {
            return Err(FicicError::Config(
                "need one pico user list per pico base station".into(),
            ));
        }
        if self.pue_positions.iter().any(|c| c.is_empty()) {
            return Err(FicicError::Config("every cell needs at least one user".into()));
        }
        if self.m < self.k_m() {
            return Err(FicicError::Config(format!(
                "macro antennas ({}) must cover macro users ({})",
                self.m,
                self.k_m()
            )));
        }
        let k_p_max = self.pue_positions.iter().map(Vec::len).max().unwrap_or(0);
        if self.n_t < k_p_max {
            return Err(FicicError::Config(format!(
                "pico transmit antennas ({}) must cover pico users (max {k_p_max})",
                self.n_t
            )));
        }
        if self.n_r == 0 {
            return Err(FicicError::Config("need at least one listening antenna".into()));
        }
        Ok(())
    }

    /// Noise floor in watts implied by the edge-SNR definition.
    pub fn sigma_n2_w(&self) -> Result<f64> {
        Ok(dbm_to_watts(noise_power_dbm(
            self.p_m_dbm,
            self.r_macro_m,
            self.snr_edge_db,
        )?))
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Large-scale gains of one cell, all linear. Macro-side gains include the
/// per-stream macro transmit power `P_M / K_M`.
#[derive(Debug, Clone)]
pub struct LargeScaleGains {
    pub g_mue: Vec<f64>,
    pub g_mk: Vec<f64>,
    pub g_mp: f64,
    pub g_pk: Vec<f64>,
}

/// Large-scale gains for `cell`, derived from the layout and the path-loss laws.
pub fn large_scale_gains(cfg: &GeometryConfig, cell: usize) -> Result<LargeScaleGains> {
    let pm_per_stream = dbm_to_watts(cfg.p_m_dbm) / cfg.k_m() as f64;
    let pen = cfg.penetration_loss_db;
    let mbs = cfg.mbs_position;
    let pbs = cfg.pbs_positions[cell];

    let g_mue = cfg
        .mue_positions
        .iter()
        .map(|&p| Ok(pm_per_stream * db_to_linear(-path_loss_db(dist(mbs, p) / 1000.0, Tier::Macro)?)))
        .collect::<Result<Vec<_>>>()?;
    let g_mk = cfg.pue_positions[cell]
        .iter()
        .map(|&p| {
            Ok(pm_per_stream
                * db_to_linear(-(path_loss_db(dist(mbs, p) / 1000.0, Tier::Macro)? + pen)))
        })
        .collect::<Result<Vec<_>>>()?;
    let g_mp = pm_per_stream * db_to_linear(-path_loss_db(dist(mbs, pbs) / 1000.0, Tier::Macro)?);
    let g_pk = cfg.pue_positions[cell]
        .iter()
        .map(|&p| Ok(db_to_linear(-path_loss_db(dist(pbs, p) / 1000.0, Tier::Pico)?)))
        .collect::<Result<Vec<_>>>()?;

    Ok(LargeScaleGains { g_mue, g_mk, g_mp, g_pk })
}

/// One small-scale draw of every physical channel of a cell, with large-scale
/// gains applied. Shared by all schemes evaluated on the same trial.
#[derive(Debug, Clone)]
pub struct RawChannels {
    /// MBS to macro users, `K_M` vectors of length `M` (macro power folded in).
    pub h_mue: Vec<DVector<Complex64>>,
    /// MBS to this cell's pico users, `K_P` vectors of length `M`.
    pub h_mk: Vec<DVector<Complex64>>,
    /// MBS to the PBS listening antennas, `M x N_r`.
    pub h_mp: DMatrix<Complex64>,
    /// PBS to its pico users, `K_P` vectors of length `N_t`.
    pub h_p: Vec<DVector<Complex64>>,
}

/// Draw the small-scale channels of `cell`. The serving channels are re-drawn
/// on the (measure-zero) degenerate event of an exactly zero vector, since the
/// closed-form solution divides by their norms.
pub fn draw_raw_channels<R: Rng + ?Sized>(
    cfg: &GeometryConfig,
    cell: usize,
    rng: &mut R,
) -> Result<RawChannels> {
    cfg.validate()?;
    if cell >= cfg.cells() {
        return Err(FicicError::Domain(format!("no such cell: {cell}")));
    }
    let g = large_scale_gains(cfg, cell)?;
    let h_mue = g
        .g_mue
        .iter()
        .map(|&gain| sample_rayleigh_vec(cfg.m, gain, rng))
        .collect::<Result<Vec<_>>>()?;
    let h_mk = g
        .g_mk
        .iter()
        .map(|&gain| sample_rayleigh_vec(cfg.m, gain, rng))
        .collect::<Result<Vec<_>>>()?;
    let h_mp = sample_rayleigh(cfg.m, cfg.n_r, g.g_mp, rng)?;
    let mut h_p = Vec::with_capacity(g.g_pk.len());
    for &gain in &g.g_pk {
        let mut v = sample_rayleigh_vec(cfg.n_t, gain, rng)?;
        let mut tries = 0;
        while gain > 0.0 && v.norm_squared() == 0.0 {
            tries += 1;
            if tries > 16 {
                return Err(FicicError::Numerical("serving channel keeps drawing zero".into()));
            }
            v = sample_rayleigh_vec(cfg.n_t, gain, rng)?;
        }
        h_p.push(v);
    }
    Ok(RawChannels { h_mue, h_mk, h_mp, h_p })
}

/// Everything a narrowband solver needs for one pico cell: equivalent
/// channels, powers, and the forwarding-delay phase. All linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrowbandScenario {
    /// Serving channels `h_Pk`, `K_P` vectors of length `N_t`.
    pub h_p: Vec<DVector<Complex64>>,
    /// Equivalent macro-to-user channels `W_M^H h_Mk`, `K_P` vectors of length `K_M`.
    pub hbar_m: Vec<DVector<Complex64>>,
    /// Equivalent macro-to-PBS channel `W_M^H H_MP`, `K_M x N_r`.
    pub hbar_mp: DMatrix<Complex64>,
    /// Noise power (W).
    pub sigma_n2: f64,
    /// Residual self-interference power at full budget, `P0 * sigma_e2` (W).
    pub sigma_i2: f64,
    /// Pico transmit power budget (W).
    pub p0: f64,
    /// Forwarding-delay phase (radians).
    pub phi: f64,
}

impl NarrowbandScenario {
    pub fn k_p(&self) -> usize {
        self.h_p.len()
    }

    pub fn k_m(&self) -> usize {
        self.hbar_mp.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.h_p.first().map_or(0, |h| h.len())
    }

    pub fn n_r(&self) -> usize {
        self.hbar_mp.ncols()
    }

    /// Residual self-interference coefficient `sigma_I2 / P0`.
    pub fn sigma_e2(&self) -> f64 {
        self.sigma_i2 / self.p0
    }

    pub fn validate(&self) -> Result<()> {
        if self.h_p.is_empty() {
            return Err(FicicError::Domain("scenario has no users".into()));
        }
        let n_t = self.n_t();
        if n_t == 0 || self.h_p.iter().any(|h| h.len() != n_t) {
            return Err(FicicError::Domain("serving channels differ in length".into()));
        }
        let k_m = self.k_m();
        if self.hbar_m.len() != self.h_p.len() || self.hbar_m.iter().any(|h| h.len() != k_m) {
            return Err(FicicError::Domain("equivalent macro channels inconsistent".into()));
        }
        if !(self.sigma_n2 > 0.0) || self.sigma_i2 < 0.0 || !(self.p0 > 0.0) {
            return Err(FicicError::Domain("powers out of range".into()));
        }
        Ok(())
    }

    pub fn is_single_user(&self) -> bool {
        self.k_p() == 1 && self.k_m() == 1
    }

    pub fn require_single_user(&self) -> Result<()> {
        if self.is_single_user() {
            Ok(())
        } else {
            Err(FicicError::Domain(format!(
                "single-user operation on a {}x{} scenario",
                self.k_m(),
                self.k_p()
            )))
        }
    }

    /// Single-user view: the scalar equivalent macro-to-user channel.
    pub fn hbar_mk_scalar(&self) -> Complex64 {
        self.hbar_m[0][0]
    }

    /// Single-user view: the macro-to-PBS channel as a column of length `N_r`
    /// (the conjugate of the single row of the equivalent matrix).
    pub fn hbar_mp_col(&self) -> DVector<Complex64> {
        DVector::from_iterator(self.n_r(), self.hbar_mp.row(0).iter().map(|z| z.conj()))
    }

    /// Copy with the macro-to-user interference channels removed (the
    /// macro-muted resource view used by ABS-style baselines).
    pub fn ici_free(&self) -> Self {
        let mut s = self.clone();
        for h in &mut s.hbar_m {
            h.fill(Complex64::new(0.0, 0.0));
        }
        s
    }
}

/// Assemble a scenario for `cell` from a channel draw and a macro precoder
/// (`M x K_M`, unit-norm columns).
pub fn assemble_scenario(
    cfg: &GeometryConfig,
    raw: &RawChannels,
    w_m: &DMatrix<Complex64>,
) -> Result<NarrowbandScenario> {
    if w_m.nrows() != cfg.m || w_m.ncols() != cfg.k_m() {
        return Err(FicicError::Domain("macro precoder has wrong shape".into()));
    }
    let sigma_n2 = cfg.sigma_n2_w()?;
    let p0 = dbm_to_watts(cfg.p0_dbm);
    let sigma_e2 = cfg.self_interference.sigma_e2(sigma_n2)?;
    let scenario = NarrowbandScenario {
        h_p: raw.h_p.clone(),
        hbar_m: raw.h_mk.iter().map(|h| w_m.adjoint() * h).collect(),
        hbar_mp: w_m.adjoint() * &raw.h_mp,
        sigma_n2,
        sigma_i2: p0 * sigma_e2,
        p0,
        phi: cfg.phi,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Draw channels and assemble the scenario of `cell` with the default macro
/// precoder (maximum-ratio / zero-forcing). Degenerate macro draws are
/// re-sampled.
pub fn build_scenario<R: Rng + ?Sized>(
    cfg: &GeometryConfig,
    cell: usize,
    rng: &mut R,
) -> Result<NarrowbandScenario> {
    let mut tries = 0;
    loop {
        let raw = draw_raw_channels(cfg, cell, rng)?;
        match mbs_precoder(&raw.h_mue) {
            Ok(w_m) => return assemble_scenario(cfg, &raw, &w_m),
            Err(FicicError::RankDeficient(_)) if tries < 16 => tries += 1,
            Err(e) => return Err(e),
        }
    }
}
