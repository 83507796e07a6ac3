//! Command-line front end: narrowband and wideband Monte Carlo sweeps plus the
//! oracle verification suite.
//!
//! Exit codes: 0 success, 1 failed verification, 2 invalid configuration,
//! 3 solver non-convergence above 1% of rows.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ficic::baselines::SchemeId;
use ficic::channel::{GeometryConfig, SelfInterference};
use ficic::harness::{
    csv_string, run_sweep, CsiMode, SweepAxis, SweepConfig, SweepResult,
};
use ficic::oracle::{run_verification_suite, SuiteBudget};
use ficic::wideband::{
    hd_water_filling, optimize_wideband, sample_wideband, OfdmParams, WidebandConfig,
    WidebandOptions,
};

#[derive(Parser)]
#[command(
    name = "ficic",
    version,
    about = "Full-duplex assisted inter-cell interference cancellation simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Narrowband sweep with one user per pico cell.
    Single(SweepArgs),
    /// Narrowband sweep with two users per pico cell.
    Multi(SweepArgs),
    /// Wideband OFDM runs over FIR tap orders (single user, cell 1).
    Wideband(WidebandArgs),
    /// Run the oracle verification suite; nonzero exit on any failure.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CsiArg {
    Perfect,
    Estimated,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep configuration; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated schemes: FD_FICIC, HD, EICIC, EICIC_PLUS_FICIC,
    /// COMP_CB, COMP_CB_PLUS_FICIC.
    #[arg(long = "scheme", visible_alias = "schemes", value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Sweep axis as name=v1,v2,...
    /// (snr_edge_db | d_p1_m | sir_self_db | inr_db).
    #[arg(long)]
    axis: Option<String>,
    /// Cell-edge macro SNR in dB (base value when not the axis).
    #[arg(long)]
    snr_edge: Option<f64>,
    /// Self-interference ratio in dB; omitted means perfect cancellation.
    #[arg(long)]
    sir_self: Option<f64>,
    /// Sum-rate bisection tolerance (b/s/Hz).
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    csi: Option<CsiArg>,
    /// UE pilot/feedback power for estimated channel knowledge (dBm).
    #[arg(long)]
    pilot_dbm: Option<f64>,
    /// Worker thread cap (also FICIC_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct WidebandArgs {
    /// FIR tap orders to run, ascending (warm-started in order).
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    taps: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    n_subcarriers: usize,
    #[arg(long, default_value_t = 20.0)]
    snr_edge: f64,
    /// Self-interference ratio in dB.
    #[arg(long, default_value_t = 110.0)]
    sir_self: f64,
    /// Pico cell position on the x axis (m).
    #[arg(long, default_value_t = 60.0)]
    d_p1: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Reduced budgets for a fast smoke run.
    #[arg(long)]
    quick: bool,
    /// Optional CSV of the oracle reports.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail_config(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("configuration error: {msg}");
    ExitCode::from(2)
}

fn parse_axis(spec: &str) -> Result<(SweepAxis, Vec<f64>), String> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| format!("axis must look like name=v1,v2,... got {spec}"))?;
    let axis = SweepAxis::from_str(name).map_err(|e| e.to_string())?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad axis value {v}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((axis, values))
}

fn sweep_config(args: &SweepArgs, multi_user: bool) -> Result<SweepConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            serde_json::from_str::<SweepConfig>(&text)
                .map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => {
            let base = if multi_user {
                GeometryConfig::multi_user_layout()
            } else {
                GeometryConfig::single_user_layout()
            };
            SweepConfig {
                base,
                axis: SweepAxis::SnrEdgeDb,
                axis_values: vec![20.0],
                schemes: vec![SchemeId::FdFicic, SchemeId::Hd],
                trials: 100,
                seed: 1,
                eps: 1e-4,
                csi_mode: CsiMode::Perfect,
                est_pilot_power_dbm: 23.0,
                pbs_pilot_power_dbm: None,
                output: None,
                threads: None,
            }
        }
    };
    if let Some(snr) = args.snr_edge {
        cfg.base.snr_edge_db = snr;
    }
    if let Some(sir) = args.sir_self {
        cfg.base.self_interference = SelfInterference::SirSelfDb { db: sir };
    }
    if let Some(spec) = &args.axis {
        let (axis, values) = parse_axis(spec)?;
        cfg.axis = axis;
        cfg.axis_values = values;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(names) = &args.schemes {
        cfg.schemes = names
            .iter()
            .map(|n| SchemeId::from_str(n).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
    }
    if let Some(eps) = args.eps {
        cfg.eps = eps;
    }
    if let Some(csi) = args.csi {
        cfg.csi_mode = match csi {
            CsiArg::Perfect => CsiMode::Perfect,
            CsiArg::Estimated => CsiMode::Estimated,
        };
    }
    if let Some(p) = args.pilot_dbm {
        cfg.est_pilot_power_dbm = p;
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn emit(csv: &str, out: &Option<PathBuf>) -> std::io::Result<()> {
    match out {
        Some(path) => fs::write(path, csv),
        None => std::io::stdout().write_all(csv.as_bytes()),
    }
}

fn run_narrowband(args: &SweepArgs, multi_user: bool) -> ExitCode {
    let cfg = match sweep_config(args, multi_user) {
        Ok(c) => c,
        Err(e) => return fail_config(e),
    };
    let result: SweepResult = match run_sweep(&cfg) {
        Ok(r) => r,
        Err(e) => return fail_config(e),
    };
    if let Err(e) = emit(&csv_string(&result), &cfg.output) {
        eprintln!("cannot write output: {e}");
        return ExitCode::from(2);
    }
    for s in &result.summary {
        eprintln!(
            "{} cell {} {}={}: mean {:.4} b/s/Hz (std {:.4}, n={})",
            s.scheme,
            s.cell,
            result.axis.name(),
            s.axis_value,
            s.mean_sum_rate_bps_hz,
            s.std_sum_rate_bps_hz,
            s.trials
        );
    }
    if result.failure_rate > 0.01 {
        eprintln!(
            "solver failures on {:.2}% of rows",
            100.0 * result.failure_rate
        );
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}

fn run_wideband(args: &WidebandArgs) -> ExitCode {
    if args.taps.is_empty() || args.trials == 0 {
        return fail_config("need at least one tap order and one trial");
    }
    let mut taps = args.taps.clone();
    taps.sort_unstable();
    taps.dedup();
    let mut geo = GeometryConfig::single_user_layout();
    geo.pbs_positions.truncate(1);
    geo.pue_positions.truncate(1);
    geo = geo.with_cell_x(0, args.d_p1);
    geo.snr_edge_db = args.snr_edge;
    geo.self_interference = SelfInterference::SirSelfDb { db: args.sir_self };
    geo.n_r = 2;
    let cfg = match WidebandConfig::from_geometry(
        &geo,
        0,
        OfdmParams { n_subcarriers: args.n_subcarriers, ..Default::default() },
    ) {
        Ok(c) => c,
        Err(e) => return fail_config(e),
    };

    let mut rows: Vec<(String, usize, f64, usize)> = Vec::new(); // scheme, order, rate, trial
    let mut failures = 0usize;
    for trial in 0..args.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ trial as u64);
        let ws = match sample_wideband(&cfg, &mut rng) {
            Ok(w) => w,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let (_, hd) = hd_water_filling(&ws);
        rows.push(("HD_WF".into(), 0, hd, trial));
        let mut warm: Option<(ficic::wideband::FirPrecoder, Vec<f64>)> = None;
        for &l in &taps {
            let opts = WidebandOptions {
                seed: args.seed ^ (trial as u64) << 8 ^ l as u64,
                warm_start: warm.clone(),
                ..Default::default()
            };
            match optimize_wideband(&ws, l, &opts) {
                Ok(sol) => {
                    rows.push((format!("FIR_L{l}"), l, sol.sum_rate, trial));
                    warm = Some((sol.fir, sol.q));
                }
                Err(e) => {
                    eprintln!("trial {trial}, L={l}: {e}");
                    failures += 1;
                }
            }
        }
    }

    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut csv = format!("# generated: unix:{stamp}\n");
    csv.push_str("scheme,cell,axis_name,axis_value,trial,sum_rate_bps_hz,p_out_w,iters,ok\n");
    for (scheme, order, rate, trial) in &rows {
        csv.push_str(&format!("{scheme},1,fir_taps,{order},{trial},{rate},,,1\n"));
    }
    csv.push_str("# summary\n");
    csv.push_str("scheme,cell,axis_name,axis_value,mean_sum_rate_bps_hz,std_sum_rate_bps_hz,trials\n");
    let mut schemes: Vec<(String, usize)> = vec![("HD_WF".into(), 0)];
    schemes.extend(taps.iter().map(|&l| (format!("FIR_L{l}"), l)));
    for (name, order) in &schemes {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|(s, _, _, _)| s == name)
            .map(|(_, _, r, _)| *r)
            .collect();
        if vals.is_empty() {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
        } else {
            0.0
        };
        csv.push_str(&format!(
            "{name},1,fir_taps,{order},{mean},{},{}\n",
            var.sqrt(),
            vals.len()
        ));
        eprintln!("{name}: mean {mean:.4} b/s/Hz over {} trials", vals.len());
    }
    if let Err(e) = emit(&csv, &args.out) {
        eprintln!("cannot write output: {e}");
        return ExitCode::from(2);
    }
    let total = rows.len() + failures;
    if failures as f64 > 0.01 * total as f64 {
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}

fn run_verify(args: &VerifyArgs) -> ExitCode {
    let budget = if args.quick { SuiteBudget::quick() } else { SuiteBudget::full() };
    let reports = run_verification_suite(args.seed, &budget);
    let mut all_pass = true;
    for r in &reports {
        println!("{}", r.summary_line());
        all_pass &= r.pass;
    }
    if let Some(path) = &args.out {
        let mut csv = String::from(
            "name,instance_digest,primary_value,oracle_value,abs_err,rel_err,rel_threshold,abs_threshold,pass,budget_used\n",
        );
        for r in &reports {
            csv.push_str(&format!(
                "{},{:016x},{},{},{},{},{},{},{},{}\n",
                r.name,
                r.instance_digest,
                r.primary_value,
                r.oracle_value,
                r.abs_err,
                r.rel_err,
                r.rel_threshold,
                r.abs_threshold,
                u8::from(r.pass),
                r.budget_used
            ));
        }
        if let Err(e) = fs::write(path, csv) {
            eprintln!("cannot write output: {e}");
            return ExitCode::from(2);
        }
    }
    if all_pass {
        println!("all {} oracle checks passed", reports.len());
        ExitCode::SUCCESS
    } else {
        eprintln!("oracle checks FAILED");
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Single(args) => run_narrowband(&args, false),
        Cmd::Multi(args) => run_narrowband(&args, true),
        Cmd::Wideband(args) => run_wideband(&args),
        Cmd::Verify(args) => run_verify(&args),
    }
}
