//! Independent brute-force and residual-based verifiers.
//!
//! Everything here stays off the solvers' hot paths and re-derives its answer
//! through a different route than the code it checks: dense grid search over
//! the forwarding gain, literal Kronecker-product assembly of the stationarity
//! conditions, hand-looped SINR accumulation, signal-level Monte Carlo power
//! estimation, and central finite differences. Shared vocabulary is limited to
//! the scenario types.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::NarrowbandScenario;
use crate::error::{FicicError, Result};
use crate::nb_single::FicicSolution;

/// One verification outcome. `pass` holds iff the relative error or the
/// absolute error is within its threshold.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    pub instance_digest: u64,
    pub primary_value: f64,
    pub oracle_value: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub rel_threshold: f64,
    pub abs_threshold: f64,
    pub pass: bool,
    pub budget_used: u64,
}

impl OracleReport {
    pub fn evaluate(
        name: &str,
        instance_digest: u64,
        primary_value: f64,
        oracle_value: f64,
        rel_threshold: f64,
        abs_threshold: f64,
        budget_used: u64,
    ) -> Self {
        let abs_err = (primary_value - oracle_value).abs();
        let rel_err = if oracle_value == 0.0 {
            if abs_err == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            abs_err / oracle_value.abs()
        };
        let pass = rel_err <= rel_threshold || abs_err <= abs_threshold;
        Self {
            name: name.to_string(),
            instance_digest,
            primary_value,
            oracle_value,
            abs_err,
            rel_err,
            rel_threshold,
            abs_threshold,
            pass,
            budget_used,
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "[{}] {} primary={:.9e} oracle={:.9e} rel={:.3e} abs={:.3e} budget={}",
            if self.pass { "ok" } else { "FAIL" },
            self.name,
            self.primary_value,
            self.oracle_value,
            self.rel_err,
            self.abs_err,
            self.budget_used
        )
    }
}

/// FNV-1a over the scenario's dimensions and floating-point bit patterns.
pub fn scenario_digest(s: &NarrowbandScenario) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bits: u64| {
        for byte in bits.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(s.k_p() as u64);
    eat(s.k_m() as u64);
    eat(s.n_t() as u64);
    eat(s.n_r() as u64);
    for v in &s.h_p {
        for z in v.iter() {
            eat(z.re.to_bits());
            eat(z.im.to_bits());
        }
    }
    for v in &s.hbar_m {
        for z in v.iter() {
            eat(z.re.to_bits());
            eat(z.im.to_bits());
        }
    }
    for z in s.hbar_mp.iter() {
        eat(z.re.to_bits());
        eat(z.im.to_bits());
    }
    for x in [s.sigma_n2, s.sigma_i2, s.p0, s.phi] {
        eat(x.to_bits());
    }
    h
}

// ---------------------------------------------------------------------------
// Random instances for verification batteries
// ---------------------------------------------------------------------------

fn cn_scalar<R: Rng + ?Sized>(var: f64, rng: &mut R) -> Complex64 {
    let s = (var / 2.0).sqrt();
    Complex64::new(
        s * rng.sample::<f64, _>(StandardNormal),
        s * rng.sample::<f64, _>(StandardNormal),
    )
}

fn cn_vector<R: Rng + ?Sized>(len: usize, var: f64, rng: &mut R) -> DVector<Complex64> {
    DVector::from_fn(len, |_, _| cn_scalar(var, rng))
}

fn log_uniform<R: Rng + ?Sized>(lo_exp: f64, hi_exp: f64, rng: &mut R) -> f64 {
    10f64.powf(rng.gen_range(lo_exp..hi_exp))
}

/// Well-scaled random single-user scenario (one macro user, one pico user).
pub fn random_single_user_scenario<R: Rng + ?Sized>(rng: &mut R) -> NarrowbandScenario {
    let n_t = rng.gen_range(1..=4usize);
    let n_r = rng.gen_range(1..=3usize);
    let p0 = log_uniform(-0.5, 1.0, rng);
    let sigma_n2 = log_uniform(-3.0, 0.0, rng);
    let sigma_e2 = if rng.gen_bool(1.0 / 3.0) { 0.0 } else { log_uniform(-8.0, -1.0, rng) };
    let ici_var = log_uniform(-1.5, 1.5, rng);
    let fw_var = log_uniform(-1.0, 2.0, rng);
    NarrowbandScenario {
        h_p: vec![cn_vector(n_t, 1.0, rng)],
        hbar_m: vec![DVector::from_element(1, cn_scalar(ici_var, rng))],
        hbar_mp: DMatrix::from_fn(1, n_r, |_, _| cn_scalar(fw_var, rng)),
        sigma_n2,
        sigma_i2: p0 * sigma_e2,
        p0,
        phi: if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..std::f64::consts::TAU) },
    }
}

/// Well-scaled random multi-user scenario with `k_p` pico users.
pub fn random_multi_user_scenario<R: Rng + ?Sized>(
    k_p: usize,
    rng: &mut R,
) -> NarrowbandScenario {
    let k_m = rng.gen_range(1..=2usize);
    let n_t = rng.gen_range(k_p.max(1)..=4usize.max(k_p));
    let n_r = rng.gen_range(1..=3usize);
    let p0 = log_uniform(-0.5, 1.0, rng);
    let sigma_n2 = log_uniform(-3.0, 0.0, rng);
    let sigma_e2 = if rng.gen_bool(1.0 / 3.0) { 0.0 } else { log_uniform(-8.0, -1.0, rng) };
    let ici_var = log_uniform(-1.5, 1.5, rng);
    let fw_var = log_uniform(-1.0, 2.0, rng);
    NarrowbandScenario {
        h_p: (0..k_p).map(|_| cn_vector(n_t, 1.0, rng)).collect(),
        hbar_m: (0..k_p).map(|_| cn_vector(k_m, ici_var, rng)).collect(),
        hbar_mp: DMatrix::from_fn(k_m, n_r, |_, _| cn_scalar(fw_var, rng)),
        sigma_n2,
        sigma_i2: p0 * sigma_e2,
        p0,
        phi: if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..std::f64::consts::TAU) },
    }
}

/// Random (channels, duals, targets) triple for the dual-feasibility
/// predicate battery.
pub fn random_predicate_instance<R: Rng + ?Sized>(
    rng: &mut R,
) -> (Vec<DVector<Complex64>>, Vec<f64>, Vec<f64>) {
    let k_p = rng.gen_range(1..=3usize);
    let n_t = rng.gen_range(k_p..=4usize);
    let h = (0..k_p).map(|_| cn_vector(n_t, 1.0, rng)).collect();
    let lambda = (0..k_p)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { log_uniform(-2.0, 2.0, rng) })
        .collect();
    let gamma = (0..k_p).map(|_| log_uniform(-1.0, 1.0, rng)).collect();
    (h, lambda, gamma)
}

// ---------------------------------------------------------------------------
// Single-user brute force
// ---------------------------------------------------------------------------

/// The single-user objective as an explicit function of the forwarding gain,
/// written directly in the channel scalars (independent of the constants used
/// by the closed form).
pub fn f0_literal(s: &NarrowbandScenario, beta: f64) -> f64 {
    let hp2 = s.h_p[0].norm_squared();
    let hmk = s.hbar_mk_scalar().norm();
    let hmp2 = s.hbar_mp_col().norm_squared();
    let st = s.sigma_i2 + s.sigma_n2;
    let num = hp2 * (s.p0 - (hmp2 + st) * hmk * hmk * hp2 * hmp2 * beta * beta);
    let den = (hmk - beta * hmk * hp2 * hmp2).powi(2)
        + beta * beta * hmk * hmk * hp2 * hp2 * hmp2 * st
        + s.sigma_n2;
    num / den
}

/// Dense search for the best forwarding gain. Returns `(beta, f0(beta))`.
pub fn grid_search_beta(s: &NarrowbandScenario, points: usize) -> Result<(f64, f64)> {
    s.require_single_user()?;
    if points < 2 {
        return Err(FicicError::Domain("grid needs at least two points".into()));
    }
    let hp2 = s.h_p[0].norm_squared();
    let hmk = s.hbar_mk_scalar().norm();
    let hmp2 = s.hbar_mp_col().norm_squared();
    let st = s.sigma_i2 + s.sigma_n2;
    let a = s.p0 * hp2;
    let b = hp2 * (hmp2 + st);
    let c = 2.0 * hmk * hp2.sqrt() * hmp2.sqrt();
    let upper = if c > 0.0 {
        2.0 * (a / b).sqrt() / c
    } else {
        let d = hmk * hmk + s.sigma_n2;
        2.0 * a / (b * (a + d))
    };
    let mut best = (0.0, f0_literal(s, 0.0));
    for i in 1..points {
        let beta = upper * i as f64 / (points - 1) as f64;
        let v = f0_literal(s, beta);
        if v > best.1 {
            best = (beta, v);
        }
    }
    Ok(best)
}

/// Best half-duplex SINR over random unit transmit directions at full power.
pub fn random_direction_search<R: Rng + ?Sized>(
    s: &NarrowbandScenario,
    tries: usize,
    rng: &mut R,
) -> Result<f64> {
    s.require_single_user()?;
    let floor = s.hbar_mk_scalar().norm_sqr() + s.sigma_n2;
    let mut best = 0.0f64;
    for _ in 0..tries {
        let mut w = cn_vector(s.n_t(), 1.0, rng);
        let n = w.norm();
        if n == 0.0 {
            continue;
        }
        w /= Complex64::from(n);
        let sinr = s.p0 * (s.h_p[0].adjoint() * &w)[(0, 0)].norm_sqr() / floor;
        best = best.max(sinr);
    }
    Ok(best)
}

/// Bracketing data for the scalar optimality quadratic with the noise and
/// residual terms removed, as in the uniqueness argument:
/// `g(nu) = b c nu^2 - 2 b (a+d) nu + a c` must be positive at zero, negative
/// at `sqrt(a/b)`, and the selected root must lie strictly between.
pub struct RootBracket {
    pub g_at_zero: f64,
    pub g_at_upper: f64,
    pub root: f64,
    pub upper: f64,
    pub ok: bool,
}

pub fn optimality_root_bracketing(s: &NarrowbandScenario) -> Result<RootBracket> {
    s.require_single_user()?;
    let hp2 = s.h_p[0].norm_squared();
    let hmk = s.hbar_mk_scalar().norm();
    let hmp2 = s.hbar_mp_col().norm_squared();
    // Zero-noise, zero-residual variant.
    let a = s.p0 * hp2;
    let b = hp2 * hmp2;
    let c = 2.0 * hmk * hp2.sqrt() * hmp2.sqrt();
    let d = hmk * hmk;
    let k = crate::nb_single::SingleUserConstants { a, b, c, d };
    let beta = crate::nb_single::beta_star(&k)?;
    let root = 0.5 * c * beta;
    let upper = (a / b).sqrt();
    let g = |nu: f64| b * c * nu * nu - 2.0 * b * (a + d) * nu + a * c;
    let g0 = g(0.0);
    let gu = g(upper);
    let ok = g0 > 0.0 && gu < 0.0 && root > 0.0 && root < upper;
    Ok(RootBracket { g_at_zero: g0, g_at_upper: gu, root, upper, ok })
}

// ---------------------------------------------------------------------------
// Multi-user residuals
// ---------------------------------------------------------------------------

/// Max normalized mismatch of the dual fixed point:
/// `|gamma_k / q_k(lambda) - lambda_k| / max(lambda_k, 1)`.
pub fn fixed_point_residual(
    h_p: &[DVector<Complex64>],
    gamma: &[f64],
    lambda: &[f64],
) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..h_p.len() {
        let n_t = h_p[0].len();
        let mut m = DMatrix::<Complex64>::identity(n_t, n_t);
        for j in 0..h_p.len() {
            if j != k && lambda[j] != 0.0 {
                m += (&h_p[j] * h_p[j].adjoint()) * Complex64::from(lambda[j]);
            }
        }
        let sol = m.lu().solve(&h_p[k]).expect("regularized Gram invertible");
        let q = (h_p[k].adjoint() * sol)[(0, 0)].re;
        let target = if gamma[k] == 0.0 { 0.0 } else { gamma[k] / q };
        worst = worst.max((target - lambda[k]).abs() / lambda[k].abs().max(1.0));
    }
    worst
}

fn vec_of_adjoint(w_f: &DMatrix<Complex64>) -> DVector<Complex64> {
    let wh = w_f.adjoint();
    DVector::from_column_slice(wh.as_slice())
}

/// Residual bundle for a multi-user solution: dual fixed point, forwarding
/// stationarity (assembled literally with Kronecker products on the
/// vectorized precoder), and transmit-direction stationarity.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub fixed_point: f64,
    pub wf_stationarity: f64,
    pub wd_stationarity: f64,
}

pub fn kkt_residuals(
    s: &NarrowbandScenario,
    lambda: &[f64],
    gamma: &[f64],
    sol: &FicicSolution,
) -> KktResiduals {
    let (n_t, n_r, k_m) = (s.n_t(), s.n_r(), s.k_m());
    let sigma = s.sigma_i2 + s.sigma_n2;
    let w_f = vec_of_adjoint(&sol.w_f);
    let hbar = s.hbar_mp.clone();
    let gram_listen = hbar.adjoint() * &hbar; // N_r x N_r
    let eye_nt = DMatrix::<Complex64>::identity(n_t, n_t);
    let eye_nr = DMatrix::<Complex64>::identity(n_r, n_r);

    let mut m = eye_nt.kronecker(&gram_listen);
    for i in 0..n_t * n_r {
        m[(i, i)] += Complex64::from(sigma);
    }
    let mut t1 = DVector::<Complex64>::zeros(n_t * n_r);
    let e = Complex64::from_polar(1.0, -s.phi);
    for k in 0..s.k_p() {
        if lambda[k] == 0.0 {
            continue;
        }
        let hk = &s.h_p[k];
        let hkt = DMatrix::from_fn(1, n_t, |_, j| hk[j]); // h_Pk^T
        let kr = hkt.kronecker(&hbar); // K_M x (N_t N_r)
        t1 += (kr.adjoint() * &s.hbar_m[k]) * (e * Complex64::from(lambda[k]));
        let outer_t = DMatrix::from((hk * hk.adjoint()).transpose());
        m += outer_t.kronecker(&gram_listen) * Complex64::from(lambda[k]);
        m += outer_t.kronecker(&eye_nr) * Complex64::from(lambda[k] * sigma);
        let _ = k_m;
    }
    let mterm = &m * &w_f;
    let resid = (&t1 + &mterm).norm();
    let scale = t1.norm().max(mterm.norm());
    let wf_stationarity = if scale > 0.0 { resid / scale } else { resid };

    let mut wd_stationarity = 0.0f64;
    for k in 0..s.k_p() {
        let wk = &sol.w_d[k];
        let nw = wk.norm();
        if nw == 0.0 {
            continue;
        }
        let hk = &s.h_p[k];
        let mut q = eye_nt.clone();
        let mut qscale = 1.0;
        for j in 0..s.k_p() {
            if j != k && lambda[j] != 0.0 {
                q += (&s.h_p[j] * s.h_p[j].adjoint()) * Complex64::from(lambda[j]);
                qscale += lambda[j] * s.h_p[j].norm_squared();
            }
        }
        if gamma[k] > 0.0 {
            q -= (hk * hk.adjoint()) * Complex64::from(lambda[k] / gamma[k]);
            qscale += lambda[k] / gamma[k] * hk.norm_squared();
        }
        wd_stationarity = wd_stationarity.max((q * wk).norm() / (nw * qscale));
    }

    KktResiduals {
        fixed_point: fixed_point_residual(&s.h_p, gamma, lambda),
        wf_stationarity,
        wd_stationarity,
    }
}

/// Lagrangian of the power-minimization problem evaluated literally at
/// `(lambda, W_f, w_d)`, and its gap to the primal objective. Strong duality
/// makes the two coincide at an optimal point.
#[derive(Debug, Clone, Copy)]
pub struct DualityGap {
    pub lagrangian: f64,
    pub objective: f64,
    pub rel_gap: f64,
}

pub fn duality_gap(
    s: &NarrowbandScenario,
    lambda: &[f64],
    gamma: &[f64],
    sol: &FicicSolution,
) -> DualityGap {
    let (n_t, n_r) = (s.n_t(), s.n_r());
    let sigma = s.sigma_i2 + s.sigma_n2;
    let w_f = vec_of_adjoint(&sol.w_f);
    let hbar = s.hbar_mp.clone();
    let eye_nt = DMatrix::<Complex64>::identity(n_t, n_t);
    let eye_nr = DMatrix::<Complex64>::identity(n_r, n_r);
    let e_fwd = Complex64::from_polar(1.0, s.phi);

    let mut j = (eye_nt.kronecker(&hbar) * &w_f).norm_squared() + sigma * w_f.norm_squared();
    for k in 0..s.k_p() {
        if lambda[k] != 0.0 {
            let hk = &s.h_p[k];
            let hkt = DMatrix::from_fn(1, n_t, |_, j| hk[j]);
            let ici = (&s.hbar_m[k] + hkt.kronecker(&hbar) * &w_f * e_fwd).norm_squared();
            let leak = (hkt.kronecker(&eye_nr) * &w_f).norm_squared();
            j += lambda[k] * (ici + leak * sigma + s.sigma_n2);
        }
        // Quadratic form on the transmit precoders.
        let wk = &sol.w_d[k];
        if wk.norm_squared() > 0.0 {
            let hk = &s.h_p[k];
            let mut q = eye_nt.clone();
            for l in 0..s.k_p() {
                if l != k && lambda[l] != 0.0 {
                    q += (&s.h_p[l] * s.h_p[l].adjoint()) * Complex64::from(lambda[l]);
                }
            }
            if gamma[k] > 0.0 {
                q -= (hk * hk.adjoint()) * Complex64::from(lambda[k] / gamma[k]);
            }
            j += (wk.adjoint() * q * wk)[(0, 0)].re;
        }
    }
    let objective = crate::nb_multi::budget_usage(s, sol);
    DualityGap {
        lagrangian: j,
        objective,
        rel_gap: (j - objective).abs() / objective.abs().max(f64::MIN_POSITIVE),
    }
}

/// SINR of every user re-derived with hand-rolled scalar loops (no shared
/// linear-algebra calls with the production evaluator).
pub fn sinr_eval_multi_independent(
    s: &NarrowbandScenario,
    sol: &FicicSolution,
) -> Result<Vec<f64>> {
    let sigma_e2 = s.sigma_i2 / s.p0;
    let tr: f64 = sol.w_f.iter().map(|z| z.norm_sqr()).sum();
    let denom = 1.0 - sigma_e2 * tr;
    if denom <= 0.0 {
        return Err(FicicError::Oscillation { loop_gain: sigma_e2 * tr, subcarrier: None });
    }
    // Forwarded macro power accumulated entry by entry.
    let (k_m, n_r, n_t) = (s.k_m(), s.n_r(), s.n_t());
    let mut fwd = 0.0;
    for r in 0..k_m {
        for j in 0..n_t {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..n_r {
                acc += s.hbar_mp[(r, c)] * sol.w_f[(j, c)].conj();
            }
            fwd += acc.norm_sqr();
        }
    }
    let data: f64 = sol
        .w_d
        .iter()
        .map(|w| w.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum();
    let p_out = (fwd + s.sigma_n2 * tr + data) / denom;

    let e = Complex64::from_polar(1.0, -s.phi);
    let mut out = Vec::with_capacity(s.k_p());
    for k in 0..s.k_p() {
        let hk = &s.h_p[k];
        let dot = |w: &DVector<Complex64>| -> Complex64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n_t {
                acc += hk[i].conj() * w[i];
            }
            acc
        };
        let signal = dot(&sol.w_d[k]).norm_sqr();
        let mut intra = 0.0;
        for (j, w) in sol.w_d.iter().enumerate() {
            if j != k {
                intra += dot(w).norm_sqr();
            }
        }
        // h_Pk^H W_f, accumulated per listening antenna.
        let mut hw = vec![Complex64::new(0.0, 0.0); n_r];
        for (c, slot) in hw.iter_mut().enumerate() {
            for i in 0..n_t {
                *slot += hk[i].conj() * sol.w_f[(i, c)];
            }
        }
        let mut ici = 0.0;
        for r in 0..k_m {
            let mut acc = s.hbar_m[k][r].conj();
            for c in 0..n_r {
                acc += hw[c] * s.hbar_mp[(r, c)].conj() * e;
            }
            ici += acc.norm_sqr();
        }
        let leak: f64 = hw.iter().map(|z| z.norm_sqr()).sum();
        out.push(signal / (intra + ici + leak * (p_out * sigma_e2 + s.sigma_n2) + s.sigma_n2));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Signal-level transmit power
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of the transmit power from the time-domain signal
/// recursion: the transmitted vector feeds the residual self-interference of
/// the next slot with variance `sigma_e2 ||x||^2` per listening antenna.
#[derive(Debug, Clone, Copy)]
pub struct SignalLevelEstimate {
    pub estimate: f64,
    pub diverged: bool,
    pub samples_used: usize,
}

pub fn signal_level_pout<R: Rng + ?Sized>(
    s: &NarrowbandScenario,
    sol: &FicicSolution,
    samples: usize,
    rng: &mut R,
) -> SignalLevelEstimate {
    let sigma_e2 = s.sigma_i2 / s.p0;
    let burn_in = 500;
    let blow_up = 1e12 * (s.p0 + 1.0);
    let mut x = DVector::<Complex64>::zeros(s.n_t());
    let mut total = 0.0;
    let mut used = 0usize;
    let mut first_quarter = 0.0;
    let mut last_quarter = 0.0;
    for t in 0..samples + burn_in {
        let s_m = cn_vector(s.k_m(), 1.0, rng);
        let mut y = s.hbar_mp.adjoint() * s_m + cn_vector(s.n_r(), s.sigma_n2, rng);
        let feedback = sigma_e2 * x.norm_squared();
        if feedback > 0.0 {
            y += cn_vector(s.n_r(), feedback, rng);
        }
        x = &sol.w_f * y;
        for w in &sol.w_d {
            x += w * cn_scalar(1.0, rng);
        }
        let power = x.norm_squared();
        if !power.is_finite() || power > blow_up {
            return SignalLevelEstimate { estimate: f64::INFINITY, diverged: true, samples_used: used };
        }
        if t >= burn_in {
            let i = t - burn_in;
            total += power;
            used += 1;
            if i < samples / 4 {
                first_quarter += power;
            } else if i >= samples - samples / 4 {
                last_quarter += power;
            }
        }
    }
    // A mean-divergent loop that has not yet hit the hard ceiling still shows
    // up as sustained growth of the running average.
    let diverged = first_quarter > 0.0 && last_quarter > 1e3 * first_quarter;
    SignalLevelEstimate { estimate: total / used as f64, diverged, samples_used: used }
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central finite differences of `f` on the selected coordinates. The step is
/// scaled per coordinate by `max(|x_i|, 1)`.
pub fn finite_diff_gradient<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    step: f64,
    coords: &[usize],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(coords.len());
    let mut buf = x.to_vec();
    for &i in coords {
        let h = step * buf[i].abs().max(1.0);
        let orig = buf[i];
        buf[i] = orig + h;
        let fp = f(&buf);
        buf[i] = orig - h;
        let fm = f(&buf);
        buf[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

// ---------------------------------------------------------------------------
// Verification battery
// ---------------------------------------------------------------------------

/// Budgets for [`run_verification_suite`].
#[derive(Debug, Clone, Copy)]
pub struct SuiteBudget {
    pub single_user_instances: usize,
    pub grid_points: usize,
    pub multi_user_instances: usize,
    pub predicate_instances: usize,
    pub signal_instances: usize,
    pub signal_samples: usize,
    pub wideband_points: usize,
}

impl SuiteBudget {
    pub fn full() -> Self {
        Self {
            single_user_instances: 200,
            grid_points: 100_000,
            multi_user_instances: 100,
            predicate_instances: 500,
            signal_instances: 5,
            signal_samples: 100_000,
            wideband_points: 3,
        }
    }

    pub fn quick() -> Self {
        Self {
            single_user_instances: 40,
            grid_points: 20_000,
            multi_user_instances: 25,
            predicate_instances: 100,
            signal_instances: 2,
            signal_samples: 30_000,
            wideband_points: 1,
        }
    }
}

/// Run every oracle against fresh random instances and report one aggregated
/// worst-case line per check.
pub fn run_verification_suite(seed: u64, budget: &SuiteBudget) -> Vec<OracleReport> {
    use crate::nb_multi;
    use crate::nb_single;
    use crate::wideband;
    use rand::SeedableRng;

    let mut reports = Vec::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    // Closed form vs dense grid, and the root bracketing of the optimality
    // quadratic.
    {
        let mut worst_excess = 0.0f64;
        let mut worst_digest = 0;
        let mut bracket_failures = 0u64;
        for _ in 0..budget.single_user_instances {
            let s = random_single_user_scenario(&mut rng);
            let sol = nb_single::ficic_optimal(&s).expect("closed form");
            let (_, grid) = grid_search_beta(&s, budget.grid_points).expect("grid");
            let excess = (grid - sol.sinr[0]) / sol.sinr[0];
            if excess > worst_excess {
                worst_excess = excess;
                worst_digest = scenario_digest(&s);
            }
            let bracket = optimality_root_bracketing(&s).expect("bracketing");
            if !bracket.ok {
                bracket_failures += 1;
            }
        }
        reports.push(OracleReport::evaluate(
            "grid_search_never_beats_closed_form",
            worst_digest,
            worst_excess,
            0.0,
            0.0,
            1e-6,
            (budget.single_user_instances * budget.grid_points) as u64,
        ));
        reports.push(OracleReport::evaluate(
            "optimality_quadratic_root_bracketing",
            0,
            bracket_failures as f64,
            0.0,
            0.0,
            0.0,
            budget.single_user_instances as u64,
        ));
    }

    // Multi-user residuals at solved points.
    {
        let mut worst_fp = 0.0f64;
        let mut worst_wf = 0.0f64;
        let mut worst_wd = 0.0f64;
        let mut worst_gap = 0.0f64;
        let mut worst_hit = 0.0f64;
        let mut worst_route = 0.0f64;
        let mut digest = 0;
        for i in 0..budget.multi_user_instances {
            let k_p = 2 + i % 2;
            let s = random_multi_user_scenario(k_p, &mut rng);
            let fairness = nb_multi::FairnessSpec::uniform(k_p);
            let report = match nb_multi::solve_sum_rate(&s, &fairness, 1e-4) {
                Ok(r) => r,
                Err(_) => continue,
            };
            if report.r_sum == 0.0 {
                continue;
            }
            let gamma = report.sinr.clone();
            let (_, sol, duals) = nb_multi::feasibility_power(&s, &gamma).expect("re-solve");
            let kkt = kkt_residuals(&s, &duals.lambda, &gamma, &sol);
            let gap = duality_gap(&s, &duals.lambda, &gamma, &sol);
            let probe = nb_multi::sinr_eval_multi_at(&s, &sol, s.p0).expect("probe eval");
            let hit = probe
                .iter()
                .zip(&gamma)
                .map(|(a, g)| (a - g).abs() / g.max(1e-300))
                .fold(0.0, f64::max);
            let ours = nb_multi::sinr_eval_multi(&s, &sol).expect("eval");
            let theirs = sinr_eval_multi_independent(&s, &sol).expect("independent eval");
            let route = ours
                .iter()
                .zip(&theirs)
                .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
                .fold(0.0, f64::max);
            if kkt.wf_stationarity > worst_wf {
                digest = scenario_digest(&s);
            }
            worst_fp = worst_fp.max(kkt.fixed_point);
            worst_wf = worst_wf.max(kkt.wf_stationarity);
            worst_wd = worst_wd.max(kkt.wd_stationarity);
            worst_gap = worst_gap.max(gap.rel_gap);
            worst_hit = worst_hit.max(hit);
            worst_route = worst_route.max(route);
        }
        let n = budget.multi_user_instances as u64;
        reports.push(OracleReport::evaluate(
            "dual_fixed_point_residual", digest, worst_fp, 0.0, 0.0, 1e-10, n,
        ));
        reports.push(OracleReport::evaluate(
            "forwarding_stationarity_residual", digest, worst_wf, 0.0, 0.0, 1e-8, n,
        ));
        reports.push(OracleReport::evaluate(
            "transmit_direction_stationarity_residual", digest, worst_wd, 0.0, 0.0, 1e-8, n,
        ));
        reports.push(OracleReport::evaluate(
            "duality_gap", digest, worst_gap, 0.0, 0.0, 1e-6, n,
        ));
        reports.push(OracleReport::evaluate(
            "sinr_targets_hit_at_final_probe", digest, worst_hit, 0.0, 0.0, 1e-6, n,
        ));
        reports.push(OracleReport::evaluate(
            "sinr_two_route_agreement", digest, worst_route, 0.0, 0.0, 1e-12, n,
        ));
    }

    // Dual-feasibility predicate equivalence.
    {
        let mut disagreements = 0u64;
        for _ in 0..budget.predicate_instances {
            let (h, lambda, gamma) = random_predicate_instance(&mut rng);
            let (e, s) = nb_multi::dual_feasibility_predicates(&h, &lambda, &gamma);
            if e != s {
                disagreements += 1;
            }
        }
        reports.push(OracleReport::evaluate(
            "dual_feasibility_predicate_agreement",
            0,
            disagreements as f64,
            0.0,
            0.0,
            0.0,
            budget.predicate_instances as u64,
        ));
    }

    // Signal-level transmit power, and divergence past the loop-gain bound.
    {
        let mut worst = 0.0f64;
        let mut digest = 0;
        for _ in 0..budget.signal_instances {
            let mut s = random_multi_user_scenario(2, &mut rng);
            if s.sigma_i2 == 0.0 {
                s.sigma_i2 = 1e-4 * s.p0;
            }
            let gamma = vec![0.5, 0.8];
            let (_, sol, _) = match nb_multi::feasibility_power(&s, &gamma) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let formula = nb_multi::p_out_multi(&s, &sol).expect("power");
            let est = signal_level_pout(&s, &sol, budget.signal_samples, &mut rng);
            if est.diverged {
                continue;
            }
            let rel = (est.estimate - formula).abs() / formula;
            if rel > worst {
                worst = rel;
                digest = scenario_digest(&s);
            }
        }
        reports.push(OracleReport::evaluate(
            "signal_level_transmit_power",
            digest,
            worst,
            0.0,
            0.0,
            0.02,
            (budget.signal_instances * budget.signal_samples) as u64,
        ));

        let mut s = random_multi_user_scenario(1, &mut rng);
        s.sigma_i2 = 0.3 * s.p0;
        let mut w_f = nalgebra::DMatrix::zeros(s.n_t(), s.n_r());
        w_f[(0, 0)] = Complex64::from((3.0 / 0.3f64).sqrt());
        let sol = FicicSolution {
            w_f,
            w_d: vec![DVector::from_element(s.n_t(), Complex64::from(0.1))],
            p_out: 0.0,
            sinr: vec![0.0],
            beta: None,
        };
        let est = signal_level_pout(&s, &sol, budget.signal_samples, &mut rng);
        reports.push(OracleReport::evaluate(
            "oscillation_bound_divergence",
            scenario_digest(&s),
            f64::from(u8::from(est.diverged)),
            1.0,
            0.0,
            0.0,
            budget.signal_samples as u64,
        ));
    }

    // Wideband: analytic gradient vs finite differences, water-filling, and
    // the narrowband reduction.
    {
        let geo = crate::channel::GeometryConfig::single_user_layout();
        let cfg = wideband::WidebandConfig::from_geometry(
            &geo,
            0,
            wideband::OfdmParams { n_subcarriers: 8, ..Default::default() },
        )
        .expect("wideband config");
        let mut worst_grad = 0.0f64;
        let mut worst_wf_gap = 0.0f64;
        for i in 0..budget.wideband_points {
            let ws = wideband::sample_wideband(&cfg, &mut rng).expect("sample");
            let l = 2;
            let sol = wideband::optimize_wideband(
                &ws,
                l,
                &wideband::WidebandOptions {
                    max_iterations: 60,
                    restarts: 1,
                    seed: seed ^ i as u64,
                    ..Default::default()
                },
            )
            .expect("solve");
            let mut fir = sol.fir.clone();
            for tap in &mut fir.taps {
                *tap *= Complex64::from(0.6);
            }
            let q: Vec<f64> = sol.q.iter().map(|&v| (0.7 * v).max(1e-4 * ws.p0)).collect();
            let tap_len = 2 * ws.n_t() * ws.n_r();
            let mut x = vec![0.0; l * tap_len + ws.n()];
            for (li, tap) in fir.taps.iter().enumerate() {
                for c in 0..ws.n_r() {
                    for r in 0..ws.n_t() {
                        let off = li * tap_len + 2 * (c * ws.n_t() + r);
                        x[off] = tap[(r, c)].re;
                        x[off + 1] = tap[(r, c)].im;
                    }
                }
            }
            x[l * tap_len..].copy_from_slice(&q);
            let analytic = wideband::gradient_flat(&ws, &fir, &q).expect("gradient");
            let coords: Vec<usize> =
                (0..l * tap_len).step_by(3).chain(x.len() - 2..x.len()).collect();
            let numeric = finite_diff_gradient(
                |y| wideband::objective_from_flat(&ws, l, y),
                &x,
                1e-6,
                &coords,
            );
            for (idx, &c) in coords.iter().enumerate() {
                let denom = numeric[idx].abs().max(analytic[c].abs()).max(1e-9);
                worst_grad = worst_grad.max((analytic[c] - numeric[idx]).abs() / denom);
            }

            let (_, wf_rate) = wideband::hd_water_filling(&ws);
            let frozen = wideband::optimize_wideband(
                &ws,
                1,
                &wideband::WidebandOptions { freeze_taps: true, ..Default::default() },
            )
            .expect("frozen solve");
            worst_wf_gap =
                worst_wf_gap.max((frozen.sum_rate - wf_rate).abs() / wf_rate.max(1e-12));
        }
        reports.push(OracleReport::evaluate(
            "wideband_gradient_vs_finite_differences",
            0,
            worst_grad,
            0.0,
            0.0,
            1e-4,
            budget.wideband_points as u64,
        ));
        reports.push(OracleReport::evaluate(
            "power_only_ascent_matches_water_filling",
            0,
            worst_wf_gap,
            0.0,
            0.0,
            1e-5,
            budget.wideband_points as u64,
        ));

        // Flat single-subcarrier problem vs the narrowband closed form.
        let mut flat = cfg.clone();
        flat.ofdm = wideband::OfdmParams {
            n_subcarriers: 1,
            tau_samples: 0,
            spread_mp: 0,
            spread_pk: 0,
            spread_mk: 0,
            spread_mue: 0,
            ..Default::default()
        };
        let ws = wideband::sample_wideband(&flat, &mut rng).expect("flat sample");
        let s = crate::channel::NarrowbandScenario {
            h_p: vec![ws.g_pk[0].clone()],
            hbar_m: vec![DVector::from_element(1, ws.gbar_mk[0])],
            hbar_mp: nalgebra::DMatrix::from_fn(1, ws.n_r(), |_, c| ws.gbar_mp[0][c].conj()),
            sigma_n2: ws.sigma_n2,
            sigma_i2: ws.p0 * ws.sigma_e2,
            p0: ws.p0,
            phi: 0.0,
        };
        let reference = (1.0 + nb_single::ficic_optimal(&s).expect("closed form").sinr[0]).log2();
        let sol = wideband::optimize_wideband(
            &ws,
            1,
            &wideband::WidebandOptions { max_iterations: 4000, restarts: 4, ..Default::default() },
        )
        .expect("solve");
        reports.push(OracleReport::evaluate(
            "wideband_narrowband_reduction",
            scenario_digest(&s),
            sol.sum_rate,
            reference,
            0.0,
            1e-4,
            1,
        ));
    }

    reports
}
