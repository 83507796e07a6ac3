//! Monte Carlo sweep harness: configuration, axis application, imperfect
//! channel knowledge, trial execution, and CSV output.
//!
//! Trials are embarrassingly parallel. Every trial owns an RNG stream seeded
//! by `seed ^ trial`, shared across axis values so that curves over an axis
//! see common random draws; scheme evaluation itself is deterministic. With
//! the `parallel` feature the trials run on a rayon pool (capped by the
//! config, else by `FICIC_THREADS`); results are identical to the sequential
//! fallback because rows are computed independently and reduced in a fixed
//! order.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{pbs_rate_for_scheme, w_m_for_scheme, SchemeId};
use crate::channel::{
    assemble_scenario, draw_raw_channels, noise_power_dbm, GeometryConfig, NarrowbandScenario,
    SelfInterference,
};
use crate::error::{FicicError, Result};
use crate::nb_multi::FairnessSpec;
use crate::units::dbm_to_watts;

/// Swept quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrEdgeDb,
    DP1M,
    SirSelfDb,
    InrDb,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SnrEdgeDb => "snr_edge_db",
            SweepAxis::DP1M => "d_p1_m",
            SweepAxis::SirSelfDb => "sir_self_db",
            SweepAxis::InrDb => "inr_db",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = FicicError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr_edge_db" => Ok(SweepAxis::SnrEdgeDb),
            "d_p1_m" => Ok(SweepAxis::DP1M),
            "sir_self_db" => Ok(SweepAxis::SirSelfDb),
            "inr_db" => Ok(SweepAxis::InrDb),
            other => Err(FicicError::Config(format!("unknown sweep axis: {other}"))),
        }
    }
}

/// Channel-knowledge model at the PBS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CsiMode {
    #[default]
    Perfect,
    Estimated,
}

fn default_eps() -> f64 {
    1e-4
}

fn default_pilot_dbm() -> f64 {
    23.0
}

/// Full sweep description. Serializable as a JSON document with these exact
/// field names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: GeometryConfig,
    pub axis: SweepAxis,
    pub axis_values: Vec<f64>,
    pub schemes: Vec<SchemeId>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub csi_mode: CsiMode,
    /// Pilot/feedback power of the user equipment (dBm).
    #[serde(default = "default_pilot_dbm")]
    pub est_pilot_power_dbm: f64,
    /// Pilot power credited to the listening-path estimate; defaults to the
    /// pico budget.
    #[serde(default)]
    pub pbs_pilot_power_dbm: Option<f64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker cap; `None` picks up `FICIC_THREADS` or the rayon default.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.trials == 0 {
            return Err(FicicError::Config("need at least one trial".into()));
        }
        if self.schemes.is_empty() {
            return Err(FicicError::Config("need at least one scheme".into()));
        }
        if self.axis_values.is_empty() {
            return Err(FicicError::Config("need at least one axis value".into()));
        }
        if !self.axis_values.windows(2).all(|w| w[1] > w[0]) {
            return Err(FicicError::Config("axis values must be strictly increasing".into()));
        }
        if !(self.eps > 0.0) {
            return Err(FicicError::Config("bisection tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Geometry with one axis value applied.
pub fn apply_axis(base: &GeometryConfig, axis: SweepAxis, value: f64) -> Result<GeometryConfig> {
    match axis {
        SweepAxis::SnrEdgeDb => {
            let mut g = base.clone();
            g.snr_edge_db = value;
            Ok(g)
        }
        SweepAxis::SirSelfDb => {
            let mut g = base.clone();
            g.self_interference = SelfInterference::SirSelfDb { db: value };
            Ok(g)
        }
        SweepAxis::DP1M => Ok(base.clone().with_cell_x(0, value)),
        SweepAxis::InrDb => {
            // Place cell 0 so the average received macro power at its users
            // sits `value` dB above the noise floor: invert the macro
            // path-loss law for the user-to-macro distance, then slide the
            // PBS so its users (offset by +-r) land at that distance.
            let sigma_dbm = noise_power_dbm(base.p_m_dbm, base.r_macro_m, base.snr_edge_db)?;
            let pl = base.p_m_dbm - base.penetration_loss_db - sigma_dbm - value;
            let d_m = 1000.0 * 10f64.powf((pl - 128.1) / 37.6);
            let r = base.pue_positions[0]
                .iter()
                .map(|p| (p[1] - base.pbs_positions[0][1]).abs())
                .fold(0.0f64, f64::max);
            if d_m <= r {
                return Err(FicicError::Config(format!(
                    "requested INR {value} dB needs user distance {d_m:.1} m below the layout offset {r} m"
                )));
            }
            let x = (d_m * d_m - r * r).sqrt();
            Ok(base.clone().with_cell_x(0, x))
        }
    }
}

/// Additive-error channel knowledge: each estimated coefficient gains an
/// independent complex Gaussian error of variance `sigma_n2 / pilot power`
/// for its acquisition path. Solvers consume the perturbed channels; rates
/// are evaluated on the true ones.
#[derive(Debug, Clone, Copy)]
pub struct CsiParams {
    /// Pilot/feedback power of the user equipment (W): serving channels and
    /// fed-back macro-to-user channels.
    pub ue_pilot_w: f64,
    /// Pilot power of the listening-path estimate (W).
    pub pbs_pilot_w: f64,
}

pub fn perturb_csi<R: rand::Rng + ?Sized>(
    s: &NarrowbandScenario,
    params: &CsiParams,
    rng: &mut R,
) -> Result<NarrowbandScenario> {
    if !(params.ue_pilot_w > 0.0) || !(params.pbs_pilot_w > 0.0) {
        return Err(FicicError::Config("pilot powers must be positive".into()));
    }
    let var_ue = s.sigma_n2 / params.ue_pilot_w;
    let var_pbs = s.sigma_n2 / params.pbs_pilot_w;
    let mut out = s.clone();
    if var_ue > 0.0 {
        for h in &mut out.h_p {
            let noise = crate::channel::sample_rayleigh(h.len(), 1, var_ue, rng)?;
            for (v, n) in h.iter_mut().zip(noise.iter()) {
                *v += n;
            }
        }
        for h in &mut out.hbar_m {
            let noise = crate::channel::sample_rayleigh(h.len(), 1, var_ue, rng)?;
            for (v, n) in h.iter_mut().zip(noise.iter()) {
                *v += n;
            }
        }
    }
    if var_pbs > 0.0 {
        let noise =
            crate::channel::sample_rayleigh(out.hbar_mp.nrows(), out.hbar_mp.ncols(), var_pbs, rng)?;
        out.hbar_mp += noise;
    }
    Ok(out)
}

/// One (scheme, cell, axis value, trial) outcome.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub scheme: SchemeId,
    /// 1-based cell id.
    pub cell: usize,
    pub axis_value: f64,
    pub trial: usize,
    pub sum_rate_bps_hz: f64,
    pub per_ue_rates: Vec<f64>,
    pub p_out_w: f64,
    pub iters: usize,
    pub ok: bool,
    pub error: Option<String>,
}

/// Mean/std aggregate of one (scheme, cell, axis value) curve point.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub scheme: SchemeId,
    pub cell: usize,
    pub axis_value: f64,
    pub mean_sum_rate_bps_hz: f64,
    pub std_sum_rate_bps_hz: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    /// Fraction of rows whose solver failed.
    pub failure_rate: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Independent stream for the channel-estimation errors of one row.
fn csi_rng(seed: u64, axis_idx: usize, trial: usize, cell: usize, scheme_idx: usize) -> ChaCha8Rng {
    let mix = splitmix64(
        seed ^ splitmix64(
            (axis_idx as u64) << 48 | (cell as u64) << 40 | (scheme_idx as u64) << 32 | trial as u64,
        ),
    );
    ChaCha8Rng::seed_from_u64(mix)
}

fn rows_for_task(
    cfg: &SweepConfig,
    geos: &[GeometryConfig],
    axis_idx: usize,
    trial: usize,
) -> Vec<ResultRow> {
    let geo = &geos[axis_idx];
    let axis_value = cfg.axis_values[axis_idx];
    let mut rows = Vec::with_capacity(geo.cells() * cfg.schemes.len());
    // One fading stream per trial, shared across axis values.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ trial as u64);
    let sigma_n2 = match geo.sigma_n2_w() {
        Ok(v) => v,
        Err(e) => {
            for (scheme_idx, &scheme) in cfg.schemes.iter().enumerate() {
                let _ = scheme_idx;
                rows.push(ResultRow {
                    scheme,
                    cell: 1,
                    axis_value,
                    trial,
                    sum_rate_bps_hz: 0.0,
                    per_ue_rates: Vec::new(),
                    p_out_w: 0.0,
                    iters: 0,
                    ok: false,
                    error: Some(e.to_string()),
                });
            }
            return rows;
        }
    };
    let csi = CsiParams {
        ue_pilot_w: dbm_to_watts(cfg.est_pilot_power_dbm),
        pbs_pilot_w: dbm_to_watts(cfg.pbs_pilot_power_dbm.unwrap_or(geo.p0_dbm)),
    };
    for cell in 0..geo.cells() {
        let raw = match draw_raw_channels(geo, cell, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                for &scheme in &cfg.schemes {
                    rows.push(ResultRow {
                        scheme,
                        cell: cell + 1,
                        axis_value,
                        trial,
                        sum_rate_bps_hz: 0.0,
                        per_ue_rates: Vec::new(),
                        p_out_w: 0.0,
                        iters: 0,
                        ok: false,
                        error: Some(e.to_string()),
                    });
                }
                continue;
            }
        };
        for (scheme_idx, &scheme) in cfg.schemes.iter().enumerate() {
            let outcome = (|| -> Result<ResultRow> {
                let w_m = w_m_for_scheme(scheme, &raw, sigma_n2)?;
                let true_s = assemble_scenario(geo, &raw, &w_m)?;
                let solve_s = match cfg.csi_mode {
                    CsiMode::Perfect => true_s.clone(),
                    CsiMode::Estimated => {
                        let mut est_rng = csi_rng(cfg.seed, axis_idx, trial, cell, scheme_idx);
                        perturb_csi(&true_s, &csi, &mut est_rng)?
                    }
                };
                let fairness = FairnessSpec::uniform(true_s.k_p());
                let eval = pbs_rate_for_scheme(scheme, &true_s, &solve_s, &fairness, cfg.eps)?;
                Ok(ResultRow {
                    scheme,
                    cell: cell + 1,
                    axis_value,
                    trial,
                    sum_rate_bps_hz: eval.sum_rate,
                    per_ue_rates: eval.per_ue_rates,
                    p_out_w: eval.p_out,
                    iters: eval.iterations,
                    ok: true,
                    error: None,
                })
            })();
            rows.push(outcome.unwrap_or_else(|e| ResultRow {
                scheme,
                cell: cell + 1,
                axis_value,
                trial,
                sum_rate_bps_hz: 0.0,
                per_ue_rates: Vec::new(),
                p_out_w: 0.0,
                iters: 0,
                ok: false,
                error: Some(e.to_string()),
            }));
        }
    }
    rows
}

fn thread_cap(cfg: &SweepConfig) -> Option<usize> {
    cfg.threads.or_else(|| {
        std::env::var("FICIC_THREADS").ok().and_then(|v| v.parse().ok())
    })
}

#[cfg(feature = "parallel")]
fn compute_tasks(cfg: &SweepConfig, geos: &[GeometryConfig]) -> Vec<Vec<ResultRow>> {
    use rayon::prelude::*;
    let tasks: Vec<(usize, usize)> = (0..cfg.axis_values.len())
        .flat_map(|a| (0..cfg.trials).map(move |t| (a, t)))
        .collect();
    let cap = thread_cap(cfg).unwrap_or(0);
    if cap == 1 {
        return tasks.iter().map(|&(a, t)| rows_for_task(cfg, geos, a, t)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cap)
        .build()
        .expect("thread pool");
    pool.install(|| {
        tasks
            .par_iter()
            .map(|&(a, t)| rows_for_task(cfg, geos, a, t))
            .collect()
    })
}

#[cfg(not(feature = "parallel"))]
fn compute_tasks(cfg: &SweepConfig, geos: &[GeometryConfig]) -> Vec<Vec<ResultRow>> {
    let _ = thread_cap(cfg);
    (0..cfg.axis_values.len())
        .flat_map(|a| (0..cfg.trials).map(move |t| (a, t)))
        .map(|(a, t)| rows_for_task(cfg, geos, a, t))
        .collect()
}

/// Run the sweep: every axis value x trial x cell x scheme produces one row;
/// per-point means and sample standard deviations are appended.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let geos = cfg
        .axis_values
        .iter()
        .map(|&v| apply_axis(&cfg.base, cfg.axis, v))
        .collect::<Result<Vec<_>>>()?;
    for g in &geos {
        g.validate()?;
    }
    let rows: Vec<ResultRow> = compute_tasks(cfg, &geos).into_iter().flatten().collect();

    let mut summary = Vec::new();
    for (axis_idx, &axis_value) in cfg.axis_values.iter().enumerate() {
        for cell in 0..geos[axis_idx].cells() {
            for &scheme in &cfg.schemes {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| {
                        r.scheme == scheme
                            && r.cell == cell + 1
                            && r.axis_value == axis_value
                            && r.ok
                    })
                    .map(|r| r.sum_rate_bps_hz)
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let n = vals.len();
                let mean = vals.iter().sum::<f64>() / n as f64;
                let var = if n > 1 {
                    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                } else {
                    0.0
                };
                summary.push(SummaryRow {
                    scheme,
                    cell: cell + 1,
                    axis_value,
                    mean_sum_rate_bps_hz: mean,
                    std_sum_rate_bps_hz: var.sqrt(),
                    trials: n,
                });
            }
        }
    }
    let failures = rows.iter().filter(|r| !r.ok).count();
    let failure_rate = failures as f64 / rows.len().max(1) as f64;
    Ok(SweepResult { axis: cfg.axis, rows, summary, failure_rate })
}

/// CSV serialization. The first line carries a timestamp and is excluded from
/// the determinism contract; everything after it is a pure function of the
/// configuration and seed.
pub fn write_csv<W: Write>(result: &SweepResult, w: &mut W) -> std::io::Result<()> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    writeln!(w, "# generated: unix:{stamp}")?;
    writeln!(w, "scheme,cell,axis_name,axis_value,trial,sum_rate_bps_hz,p_out_w,iters,ok")?;
    let axis = result.axis.name();
    for r in &result.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.scheme,
            r.cell,
            axis,
            r.axis_value,
            r.trial,
            r.sum_rate_bps_hz,
            r.p_out_w,
            r.iters,
            u8::from(r.ok)
        )?;
    }
    writeln!(w, "# summary")?;
    writeln!(
        w,
        "scheme,cell,axis_name,axis_value,mean_sum_rate_bps_hz,std_sum_rate_bps_hz,trials"
    )?;
    for s in &result.summary {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.scheme, s.cell, axis, s.axis_value, s.mean_sum_rate_bps_hz, s.std_sum_rate_bps_hz, s.trials
        )?;
    }
    Ok(())
}

pub fn csv_string(result: &SweepResult) -> String {
    let mut buf = Vec::new();
    write_csv(result, &mut buf).expect("write to Vec");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

/// CSV body with the timestamp line stripped: the byte-determinism contract.
pub fn csv_body(csv: &str) -> &str {
    match csv.split_once('\n') {
        Some((first, rest)) if first.starts_with('#') => rest,
        _ => csv,
    }
}

/// Average received macro interference power over fading at the users of
/// `cell`, relative to noise (the empirical axis the INR placement targets).
pub fn expected_inr_db(geo: &GeometryConfig, cell: usize) -> Result<f64> {
    let gains = crate::channel::large_scale_gains(geo, cell)?;
    let sigma = geo.sigma_n2_w()?;
    let mean_gain =
        gains.g_mk.iter().sum::<f64>() / gains.g_mk.len() as f64 * geo.k_m() as f64;
    Ok(crate::units::linear_to_db(mean_gain / sigma))
}
