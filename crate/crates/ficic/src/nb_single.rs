//! Closed-form optimal fICIC for the narrowband single-user case, the
//! half-duplex reference, and the interference-dominated asymptotics.
//!
//! With one macro user and one pico user the optimal forwarding precoder is
//! rank one: it combines the listened interference with maximum ratio over the
//! listening antennas and re-transmits it with maximum ratio towards the user,
//! scaled by a positive gain `beta` and rotated to cancel the direct
//! interference. The optimal `beta` is the smaller root of a scalar quadratic,
//! and the transmit precoder is maximum-ratio with the power left over once
//! the power constraint is tight.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::NarrowbandScenario;
use crate::error::{FicicError, Result};

/// Scalar constants of the single-user problem:
/// `a = P0 ||h_Pk||^2`,
/// `b = ||h_Pk||^2 (||hbar_MP||^2 + sigma_I2 + sigma_n2)`,
/// `c = 2 |hbar_Mk| ||h_Pk|| ||hbar_MP||`,
/// `d = |hbar_Mk|^2 + sigma_n2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleUserConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl SingleUserConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.d > 0.0 && self.c >= 0.0) {
            return Err(FicicError::Domain(format!(
                "degenerate single-user constants: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Precoder pair with its realized power and SINR(s).
#[derive(Debug, Clone, PartialEq)]
pub struct FicicSolution {
    /// Forwarding precoder, `N_t x N_r`.
    pub w_f: DMatrix<Complex64>,
    /// Transmit precoders, one `N_t` vector per user.
    pub w_d: Vec<DVector<Complex64>>,
    /// Realized transmit power (W).
    pub p_out: f64,
    /// Realized per-user SINR.
    pub sinr: Vec<f64>,
    /// Forwarding gain of the rank-one solution (single-user only).
    pub beta: Option<f64>,
}

impl FicicSolution {
    /// Forwarding loop gain `sigma_e2 * tr(W_f^H W_f)`; must stay below one.
    pub fn loop_gain(&self, sigma_e2: f64) -> f64 {
        sigma_e2 * self.w_f.norm_squared()
    }
}

/// `x*x - y*z` with a compensated correction term, so the root selection stays
/// stable when the two products nearly cancel.
fn diff_of_products(x: f64, y: f64, z: f64) -> f64 {
    let w = y * z;
    let e = y.mul_add(z, -w);
    let f = x.mul_add(x, -w);
    f - e
}

/// Constants of the scalar problem for a single-user scenario.
pub fn single_user_constants(s: &NarrowbandScenario) -> Result<SingleUserConstants> {
    s.require_single_user()?;
    let hp2 = s.h_p[0].norm_squared();
    if hp2 == 0.0 {
        return Err(FicicError::Domain("zero serving channel".into()));
    }
    let hmk = s.hbar_mk_scalar().norm();
    let hmp2 = s.hbar_mp_col().norm_squared();
    let k = SingleUserConstants {
        a: s.p0 * hp2,
        b: hp2 * (hmp2 + s.sigma_i2 + s.sigma_n2),
        c: 2.0 * hmk * hp2.sqrt() * hmp2.sqrt(),
        d: hmk * hmk + s.sigma_n2,
    };
    k.validate()?;
    Ok(k)
}

/// Optimal forwarding gain: the smaller root of the quadratic optimality
/// condition, evaluated in rationalized form
/// `beta = 2a / (b (a + d + sqrt((a+d)^2 - a c^2 / b)))`,
/// which is exact for `c = 0` (limit `a / (b (a+d))`) and avoids the
/// cancellation of the textbook `(a + d - sqrt(...))` expression. The rescaled
/// root `(c/2) beta` always lies in `[0, sqrt(a/b)]`.
pub fn beta_star(k: &SingleUserConstants) -> Result<f64> {
    k.validate()?;
    let apd = k.a + k.d;
    let mut disc = diff_of_products(apd, k.c * k.c, k.a / k.b);
    if disc < 0.0 {
        if disc >= -1e-12 * apd * apd {
            disc = 0.0;
        } else {
            return Err(FicicError::Numerical(format!(
                "negative discriminant {disc:.3e} for constants {k:?}"
            )));
        }
    }
    Ok(2.0 * k.a / (k.b * (apd + disc.sqrt())))
}

fn phase(phi: f64) -> Complex64 {
    Complex64::from_polar(1.0, phi)
}

/// Transmit power for a single-user precoder pair:
/// `(||W_f hbar_MP||^2 + sigma_n2 tr(W_f^H W_f) + ||w_d||^2) / (1 - sigma_e2 tr(W_f^H W_f))`.
pub fn p_out_single(s: &NarrowbandScenario, sol: &FicicSolution) -> Result<f64> {
    s.require_single_user()?;
    let tr = sol.w_f.norm_squared();
    let denom = 1.0 - s.sigma_e2() * tr;
    if denom <= 0.0 {
        return Err(FicicError::Oscillation {
            loop_gain: s.sigma_e2() * tr,
            subcarrier: None,
        });
    }
    let fwd = (&sol.w_f * s.hbar_mp_col()).norm_squared();
    Ok((fwd + s.sigma_n2 * tr + sol.w_d[0].norm_squared()) / denom)
}

/// SINR of the single user for an arbitrary precoder pair. The realized
/// transmit power feeds back into the residual-self-interference term.
pub fn sinr_eval_single(s: &NarrowbandScenario, sol: &FicicSolution) -> Result<f64> {
    let p_out = p_out_single(s, sol)?;
    let h = &s.h_p[0];
    let hmp = s.hbar_mp_col();
    let signal = (h.adjoint() * &sol.w_d[0])[(0, 0)].norm_sqr();
    let hw = h.adjoint() * &sol.w_f; // 1 x N_r
    let ici = (s.hbar_mk_scalar().conj() + (&hw * &hmp)[(0, 0)] * phase(-s.phi)).norm_sqr();
    let fwd_noise = hw.norm_squared() * (p_out * s.sigma_e2() + s.sigma_n2);
    Ok(signal / (ici + fwd_noise + s.sigma_n2))
}

/// Half-duplex optimum: no forwarding, full-power maximum-ratio transmission.
pub fn hd_optimal(s: &NarrowbandScenario) -> Result<FicicSolution> {
    s.require_single_user()?;
    let h = &s.h_p[0];
    let hp2 = h.norm_squared();
    if hp2 == 0.0 {
        return Err(FicicError::Domain("zero serving channel".into()));
    }
    let w_d = h * Complex64::from((s.p0 / hp2).sqrt());
    let sinr = s.p0 * hp2 / (s.hbar_mk_scalar().norm_sqr() + s.sigma_n2);
    Ok(FicicSolution {
        w_f: DMatrix::zeros(s.n_t(), s.n_r()),
        w_d: vec![w_d],
        p_out: s.p0,
        sinr: vec![sinr],
        beta: None,
    })
}

/// Closed-form SINR at the optimal forwarding gain: `1 / (1/(b beta) - 1)`.
pub fn closed_form_sinr(k: &SingleUserConstants, beta: f64) -> f64 {
    1.0 / (1.0 / (k.b * beta) - 1.0)
}

/// Optimal single-user fICIC: rank-one forwarding precoder, maximum-ratio
/// transmit precoder, power constraint tight. The returned SINR is re-derived
/// through the general evaluator and cross-checked against the closed form.
pub fn ficic_optimal(s: &NarrowbandScenario) -> Result<FicicSolution> {
    let k = single_user_constants(s)?;
    let beta = beta_star(&k)?;
    let h = &s.h_p[0];
    let hmp = s.hbar_mp_col();
    let hmk = s.hbar_mk_scalar();

    let scale = -hmk.conj() * phase(s.phi) * Complex64::from(beta);
    let w_f = (h * hmp.adjoint()) * scale;

    let hmp2 = hmp.norm_squared();
    let mut radicand = s.p0 - 0.25 * (hmp2 + s.sigma_i2 + s.sigma_n2) * k.c * k.c * beta * beta;
    if radicand < 0.0 {
        if radicand >= -1e-12 * s.p0 {
            radicand = 0.0;
        } else {
            return Err(FicicError::Numerical(format!(
                "negative transmit-power radicand {radicand:.3e}"
            )));
        }
    }
    let w_d = h * Complex64::from(radicand.sqrt() / h.norm());

    let mut sol = FicicSolution {
        w_f,
        w_d: vec![w_d],
        p_out: 0.0,
        sinr: vec![0.0],
        beta: Some(beta),
    };
    sol.p_out = p_out_single(s, &sol)?;
    let sinr = sinr_eval_single(s, &sol)?;
    sol.sinr = vec![sinr];

    // The closed form amplifies round-off in `beta` by (1 + SINR), while the
    // direct evaluation is first-order flat at the optimum; the agreement
    // tolerance must carry that conditioning factor.
    let reference = closed_form_sinr(&k, beta);
    let tol = 1e-9 + 32.0 * f64::EPSILON * (1.0 + reference);
    if (sinr - reference).abs() > tol * reference.max(1e-300) {
        return Err(FicicError::Numerical(format!(
            "evaluated SINR {sinr:.12e} disagrees with closed form {reference:.12e}"
        )));
    }
    if (sol.p_out - s.p0).abs() > 1e-9 * s.p0 {
        return Err(FicicError::Numerical(format!(
            "power constraint not tight: {:.12e} vs budget {:.12e}",
            sol.p_out, s.p0
        )));
    }
    Ok(sol)
}

/// Power spent on forwarding the listened interference:
/// `||W_f hbar_MP||^2 + (sigma_I2 + sigma_n2) tr(W_f^H W_f)`.
pub fn forward_power(s: &NarrowbandScenario, sol: &FicicSolution) -> f64 {
    (&sol.w_f * s.hbar_mp_col()).norm_squared()
        + (s.sigma_i2 + s.sigma_n2) * sol.w_f.norm_squared()
}

/// Which side of the interference-vs-signal comparison an instance falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IciRegime {
    /// `|hbar_Mk|^2 < P0 ||h_Pk||^2`: interference weaker than the signal.
    Weak,
    /// `|hbar_Mk|^2 >= P0 ||h_Pk||^2`.
    Strong,
}

/// Vanishing-noise limits with ideal self-interference cancellation: the SINR
/// the scheme approaches when interference dominates noise.
#[derive(Debug, Clone, Copy)]
pub struct Asymptotics {
    pub regime: IciRegime,
    /// Weak-interference limit (full cancellation), when applicable.
    pub weak_ici_sinr: Option<f64>,
    /// Strong-interference limit, when applicable.
    pub strong_ici_sinr: Option<f64>,
    /// Very-strong-interference floor `P0||h_Pk||^2 / |hbar_Mk|^2`.
    pub strong_ici_floor: f64,
    /// Limit of the full-duplex over half-duplex SINR ratio (weak regime).
    pub fd_hd_gain: f64,
    /// Half-duplex SINR, the limit under large residual self-interference.
    pub hd_limit_sinr: f64,
    /// Forwarding power in the large-self-interference limit.
    pub forward_power_limit: f64,
}

fn single_user_scalars(s: &NarrowbandScenario) -> Result<(f64, f64, f64)> {
    s.require_single_user()?;
    let a = s.p0 * s.h_p[0].norm_squared();
    let i = s.hbar_mk_scalar().norm_sqr();
    let f = s.hbar_mp_col().norm_squared();
    Ok((a, i, f))
}

/// Weak-interference limit `(A - I) / ((I/F + 1) sigma_n2)`; errors outside
/// its regime.
pub fn weak_ici_sinr(s: &NarrowbandScenario) -> Result<f64> {
    let (a, i, f) = single_user_scalars(s)?;
    if i >= a {
        return Err(FicicError::Domain(
            "weak-interference limit needs |hbar_Mk|^2 < P0||h_Pk||^2".into(),
        ));
    }
    Ok((a - i) / ((i / f + 1.0) * s.sigma_n2))
}

/// Strong-interference limit `A / (I - A + ((A^2/F + I)/(I - A)) sigma_n2)`;
/// errors outside its regime.
pub fn strong_ici_sinr(s: &NarrowbandScenario) -> Result<f64> {
    let (a, i, f) = single_user_scalars(s)?;
    if i <= a {
        return Err(FicicError::Domain(
            "strong-interference limit needs |hbar_Mk|^2 > P0||h_Pk||^2".into(),
        ));
    }
    Ok(a / (i - a + ((a * a / f + i) / (i - a)) * s.sigma_n2))
}

/// All asymptotic quantities of an instance. Used for validation only; the
/// solvers never call this.
pub fn asymptotics(s: &NarrowbandScenario) -> Result<Asymptotics> {
    let (a, i, f) = single_user_scalars(s)?;
    let regime = if i < a { IciRegime::Weak } else { IciRegime::Strong };
    let hd = a / (i + s.sigma_n2);
    Ok(Asymptotics {
        regime,
        weak_ici_sinr: weak_ici_sinr(s).ok(),
        strong_ici_sinr: strong_ici_sinr(s).ok(),
        strong_ici_floor: a / i,
        fd_hd_gain: (1.0 - i / a) / ((1.0 / f + 1.0 / i) * s.sigma_n2),
        hd_limit_sinr: hd,
        forward_power_limit: s.p0 * s.p0 * f * i * (s.h_p[0].norm_squared())
            / ((i + a + s.sigma_n2).powi(2) * (f + s.sigma_i2 + s.sigma_n2)),
    })
}
