//! OFDM generalization: an L-tap FIR forwarding precoder shared by all
//! subcarriers, optimized jointly with per-subcarrier desired-signal powers to
//! maximize the sum rate of a single user.
//!
//! The frequency response of the FIR taps on subcarrier `n` is
//! `Wbar_n = sum_l T_l e^{-j 2 pi n l / N}`, so the `N` per-subcarrier
//! precoders share `L` matrix degrees of freedom. The forwarding delay of
//! `tau` samples appears as the per-subcarrier rotation `e^{-j 2 pi n tau / N}`
//! on the forwarded interference. Tap order is capped so the forwarded path's
//! delay spread stays inside the cyclic prefix.
//!
//! The optimizer is projected gradient ascent on the tap entries and the
//! per-subcarrier powers: steps are restored to the feasible set (per-subcarrier
//! oscillation bounds, total transmit power), a backtracking line search halves
//! the step until the objective gain clears the Armijo bound, and the power
//! coordinates are polished with an exact concave allocation at the end. The
//! problem is non-convex in the taps, so the best of several starts is kept.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{large_scale_gains, GeometryConfig};
use crate::error::{FicicError, Result};

/// Frequency-domain single-user scenario over `N` subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct WidebandScenario {
    /// Serving channels `g_Pkn`, one `N_t` vector per subcarrier.
    pub g_pk: Vec<DVector<Complex64>>,
    /// Equivalent macro-to-user channels, one scalar per subcarrier.
    pub gbar_mk: Vec<Complex64>,
    /// Equivalent macro-to-PBS channels, one `N_r` vector per subcarrier.
    pub gbar_mp: Vec<DVector<Complex64>>,
    pub sigma_n2: f64,
    pub sigma_e2: f64,
    pub p0: f64,
    /// Full-duplex processing delay in samples.
    pub tau_samples: usize,
    /// Sampling interval (s).
    pub ts: f64,
    /// Cyclic-prefix length in samples.
    pub cp_samples: usize,
    /// Delay spread of the macro-to-PBS link in samples.
    pub spread_mp: usize,
    /// Delay spread of the PBS-to-user link in samples.
    pub spread_pk: usize,
}

impl WidebandScenario {
    pub fn n(&self) -> usize {
        self.g_pk.len()
    }

    pub fn n_t(&self) -> usize {
        self.g_pk.first().map_or(0, |v| v.len())
    }

    pub fn n_r(&self) -> usize {
        self.gbar_mp.first().map_or(0, |v| v.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || self.gbar_mk.len() != n || self.gbar_mp.len() != n {
            return Err(FicicError::Domain("per-subcarrier arrays differ in length".into()));
        }
        if !(self.sigma_n2 > 0.0) || self.sigma_e2 < 0.0 || !(self.p0 > 0.0) {
            return Err(FicicError::Domain("powers out of range".into()));
        }
        Ok(())
    }

    /// Delay-induced rotation of the forwarded interference on subcarrier `n`.
    pub fn delay_phase(&self, n: usize) -> Complex64 {
        Complex64::from_polar(
            1.0,
            -std::f64::consts::TAU * ((n * self.tau_samples) % self.n()) as f64 / self.n() as f64,
        )
    }
}

/// L-tap FIR forwarding precoder; each tap is an `N_t x N_r` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FirPrecoder {
    pub taps: Vec<DMatrix<Complex64>>,
}

impl FirPrecoder {
    pub fn zeros(l: usize, n_t: usize, n_r: usize) -> Self {
        Self { taps: vec![DMatrix::zeros(n_t, n_r); l] }
    }

    pub fn order(&self) -> usize {
        self.taps.len()
    }

    /// Entrywise DFT of the taps: `Wbar_n = sum_l T_l e^{-j 2 pi n l / N}`.
    pub fn freq_response(&self, n_sub: usize) -> Vec<DMatrix<Complex64>> {
        let (n_t, n_r) = match self.taps.first() {
            Some(t) => (t.nrows(), t.ncols()),
            None => return vec![DMatrix::zeros(0, 0); n_sub],
        };
        (0..n_sub)
            .map(|n| {
                let mut acc = DMatrix::<Complex64>::zeros(n_t, n_r);
                for (l, tap) in self.taps.iter().enumerate() {
                    let w = Complex64::from_polar(
                        1.0,
                        -std::f64::consts::TAU * ((n * l) % n_sub) as f64 / n_sub as f64,
                    );
                    acc += tap * w;
                }
                acc
            })
            .collect()
    }

    /// Same taps, zero-extended (or truncated) to order `l`.
    pub fn zero_padded(&self, l: usize, n_t: usize, n_r: usize) -> Self {
        let mut taps = self.taps.clone();
        while taps.len() < l {
            taps.push(DMatrix::zeros(n_t, n_r));
        }
        taps.truncate(l);
        Self { taps }
    }
}

/// Largest usable FIR order: the forwarded path consumes the processing delay
/// plus both link delay spreads out of the cyclic prefix, and the taps must
/// fit in the remaining budget. More taps than subcarriers are redundant in an
/// `N`-point DFT, so the bound is also clamped to `N`.
pub fn fir_order_bound(ws: &WidebandScenario) -> Result<usize> {
    ws.validate()?;
    let used = ws.tau_samples + ws.spread_mp + ws.spread_pk;
    if used >= ws.cp_samples {
        return Err(FicicError::Domain(format!(
            "forwarded path ({used} samples) exceeds the cyclic prefix ({} samples) even with one tap",
            ws.cp_samples
        )));
    }
    Ok((ws.cp_samples - used).min(ws.n()))
}

/// Per-subcarrier transmit power for explicit per-subcarrier precoders:
/// `(||Wbar_n gbar_MPn||^2 + sigma_n2 tr(Wbar_n Wbar_n^H) + ||wbar_dn||^2)
///  / (1 - sigma_e2 tr(Wbar_n Wbar_n^H))`.
pub fn p_out_subcarrier(
    ws: &WidebandScenario,
    fir: &FirPrecoder,
    wd: &[DVector<Complex64>],
) -> Result<Vec<f64>> {
    ws.validate()?;
    if wd.len() != ws.n() {
        return Err(FicicError::Domain("need one transmit precoder per subcarrier".into()));
    }
    let freq = fir.freq_response(ws.n());
    (0..ws.n())
        .map(|n| {
            let t = freq[n].norm_squared();
            let denom = 1.0 - ws.sigma_e2 * t;
            if denom <= 0.0 {
                return Err(FicicError::Oscillation {
                    loop_gain: ws.sigma_e2 * t,
                    subcarrier: Some(n),
                });
            }
            let fwd = (&freq[n] * &ws.gbar_mp[n]).norm_squared();
            Ok((fwd + ws.sigma_n2 * t + wd[n].norm_squared()) / denom)
        })
        .collect()
}

/// SINR on subcarrier `n` for explicit precoders.
pub fn sinr_subcarrier(
    ws: &WidebandScenario,
    fir: &FirPrecoder,
    wd: &[DVector<Complex64>],
    n: usize,
) -> Result<f64> {
    let p = p_out_subcarrier(ws, fir, wd)?;
    let freq = fir.freq_response(ws.n());
    let u = &ws.g_pk[n];
    let signal = (u.adjoint() * &wd[n])[(0, 0)].norm_sqr();
    let uw = u.adjoint() * &freq[n]; // 1 x N_r
    let z = ws.gbar_mk[n].conj() + (&uw * &ws.gbar_mp[n])[(0, 0)] * ws.delay_phase(n);
    let leak = uw.norm_squared();
    Ok(signal / (z.norm_sqr() + leak * (p[n] * ws.sigma_e2 + ws.sigma_n2) + ws.sigma_n2))
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Options for [`optimize_wideband`].
#[derive(Debug, Clone)]
pub struct WidebandOptions {
    pub max_iterations: usize,
    /// Stop once the relative objective gain stays below this for a few
    /// consecutive accepted steps.
    pub tolerance: f64,
    /// Random tap starts tried in addition to the zero-tap start.
    pub restarts: usize,
    pub seed: u64,
    /// Extra start, e.g. a zero-padded lower-order solution.
    pub warm_start: Option<(FirPrecoder, Vec<f64>)>,
    /// Keep the taps pinned at zero (half-duplex mode: power loading only).
    pub freeze_taps: bool,
}

impl Default for WidebandOptions {
    fn default() -> Self {
        Self {
            max_iterations: 800,
            tolerance: 1e-11,
            restarts: 3,
            seed: 0,
            warm_start: None,
            freeze_taps: false,
        }
    }
}

/// Optimized FIR precoder and power loading.
#[derive(Debug, Clone)]
pub struct WidebandSolution {
    pub fir: FirPrecoder,
    /// Per-subcarrier desired-signal powers `||wbar_dn||^2`.
    pub q: Vec<f64>,
    /// Materialized transmit precoders (maximum-ratio directions).
    pub wd: Vec<DVector<Complex64>>,
    /// Sum rate over all subcarriers (b/s/Hz).
    pub sum_rate: f64,
    /// Total transmit power of the returned iterate.
    pub p_total: f64,
    /// Objective after every accepted step of the winning start.
    pub trace: Vec<f64>,
}

/// Per-subcarrier channel scalars reused across optimizer iterations.
struct SubcarrierData {
    u: Vec<DVector<Complex64>>,
    u_norm2: Vec<f64>,
    m: Vec<DVector<Complex64>>,
    c: Vec<Complex64>,
    e: Vec<Complex64>,
}

impl SubcarrierData {
    fn new(ws: &WidebandScenario) -> Self {
        let n = ws.n();
        Self {
            u: ws.g_pk.clone(),
            u_norm2: ws.g_pk.iter().map(|v| v.norm_squared()).collect(),
            m: ws.gbar_mp.clone(),
            c: ws.gbar_mk.clone(),
            e: (0..n).map(|i| ws.delay_phase(i)).collect(),
        }
    }
}

/// Per-subcarrier quantities of one tap iterate.
struct TapState {
    freq: Vec<DMatrix<Complex64>>,
    t: Vec<f64>,
    leak: Vec<f64>,
    z: Vec<Complex64>,
    /// Tap overhead power `(f + sigma_n2 t) / (1 - sigma_e2 t)`.
    a: Vec<f64>,
}

fn tap_state(ws: &WidebandScenario, data: &SubcarrierData, fir: &FirPrecoder) -> Option<TapState> {
    let n = ws.n();
    let freq = fir.freq_response(n);
    let mut t = Vec::with_capacity(n);
    let mut leak = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for i in 0..n {
        let ti = freq[i].norm_squared();
        if ws.sigma_e2 * ti >= 1.0 {
            return None;
        }
        let fi = (&freq[i] * &data.m[i]).norm_squared();
        let uw = data.u[i].adjoint() * &freq[i];
        let zi = data.c[i].conj() + (&uw * &data.m[i])[(0, 0)] * data.e[i];
        t.push(ti);
        leak.push(uw.norm_squared());
        z.push(zi);
        a.push((fi + ws.sigma_n2 * ti) / (1.0 - ws.sigma_e2 * ti));
    }
    Some(TapState { freq, t, leak, z, a })
}

fn objective_given_state(
    ws: &WidebandScenario,
    data: &SubcarrierData,
    st: &TapState,
    q: &[f64],
) -> f64 {
    let mut rate = 0.0;
    for i in 0..ws.n() {
        let denom_pow = 1.0 - ws.sigma_e2 * st.t[i];
        let p = st.a[i] + q[i] / denom_pow;
        let b = st.z[i].norm_sqr() + st.leak[i] * (p * ws.sigma_e2 + ws.sigma_n2) + ws.sigma_n2;
        let s = q[i] * data.u_norm2[i] / b;
        rate += (1.0 + s).log2();
    }
    rate
}

/// Sum rate for an explicit tap/power iterate, `None` past an oscillation
/// bound.
pub fn wideband_sum_rate(ws: &WidebandScenario, fir: &FirPrecoder, q: &[f64]) -> Option<f64> {
    let data = SubcarrierData::new(ws);
    tap_state(ws, &data, fir).map(|st| objective_given_state(ws, &data, &st, q))
}

/// Objective over the flat real parameterization used by the derivative
/// checks: `2 L N_t N_r` tap reals (per tap, column-major, re/im interleaved)
/// followed by the `N` powers.
pub fn objective_from_flat(ws: &WidebandScenario, l: usize, x: &[f64]) -> f64 {
    let (n_t, n_r, n) = (ws.n_t(), ws.n_r(), ws.n());
    let tap_len = 2 * n_t * n_r;
    assert_eq!(x.len(), l * tap_len + n);
    let mut fir = FirPrecoder::zeros(l, n_t, n_r);
    for (li, tap) in fir.taps.iter_mut().enumerate() {
        let base = li * tap_len;
        for col in 0..n_r {
            for row in 0..n_t {
                let off = base + 2 * (col * n_t + row);
                tap[(row, col)] = Complex64::new(x[off], x[off + 1]);
            }
        }
    }
    let q = &x[l * tap_len..];
    let data = SubcarrierData::new(ws);
    match tap_state(ws, &data, &fir) {
        Some(st) => objective_given_state(ws, &data, &st, q),
        None => f64::NEG_INFINITY,
    }
}

/// Analytic gradient of the sum rate in the flat parameterization of
/// [`objective_from_flat`].
pub fn gradient_flat(ws: &WidebandScenario, fir: &FirPrecoder, q: &[f64]) -> Option<Vec<f64>> {
    let data = SubcarrierData::new(ws);
    let st = tap_state(ws, &data, fir)?;
    let (g_taps, g_q) = gradient_given_state(ws, &data, &st, q, fir.order());
    let (n_t, n_r) = (ws.n_t(), ws.n_r());
    let tap_len = 2 * n_t * n_r;
    let mut out = vec![0.0; fir.order() * tap_len + ws.n()];
    for (li, g) in g_taps.iter().enumerate() {
        let base = li * tap_len;
        for col in 0..n_r {
            for row in 0..n_t {
                let off = base + 2 * (col * n_t + row);
                out[off] = 2.0 * g[(row, col)].re;
                out[off + 1] = 2.0 * g[(row, col)].im;
            }
        }
    }
    out[fir.order() * tap_len..].copy_from_slice(&g_q);
    Some(out)
}

/// Wirtinger gradients with respect to the conjugated tap entries, plus the
/// plain gradient in the powers.
fn gradient_given_state(
    ws: &WidebandScenario,
    data: &SubcarrierData,
    st: &TapState,
    q: &[f64],
    l: usize,
) -> (Vec<DMatrix<Complex64>>, Vec<f64>) {
    let n = ws.n();
    let (n_t, n_r) = (ws.n_t(), ws.n_r());
    let ln2 = std::f64::consts::LN_2;
    let mut g_taps = vec![DMatrix::<Complex64>::zeros(n_t, n_r); l];
    let mut g_q = vec![0.0; n];
    for i in 0..n {
        let denom_pow = 1.0 - ws.sigma_e2 * st.t[i];
        let p = st.a[i] + q[i] / denom_pow;
        let noise_fw = p * ws.sigma_e2 + ws.sigma_n2;
        let b = st.z[i].norm_sqr() + st.leak[i] * noise_fw + ws.sigma_n2;
        let a_num = q[i] * data.u_norm2[i];
        let s = a_num / b;
        let common = 1.0 / (ln2 * (1.0 + s));

        // Power coordinate.
        let db_dq = st.leak[i] * ws.sigma_e2 / denom_pow;
        g_q[i] = common * (b * data.u_norm2[i] - a_num * db_dq) / (b * b);

        if a_num == 0.0 {
            continue; // the tap derivative carries the factor q_n ||u_n||^2
        }
        // dB/dWbar^* assembled term by term.
        let u = &data.u[i];
        let m = &data.m[i];
        let w = &st.freq[i];
        let mut db = (u * m.adjoint()) * (st.z[i] * data.e[i].conj());
        db += (u * (u.adjoint() * w)) * Complex64::from(noise_fw);
        let dp = ((w * m) * m.adjoint() + w * Complex64::from(ws.sigma_n2 + p * ws.sigma_e2))
            / Complex64::from(denom_pow);
        db += dp * Complex64::from(st.leak[i] * ws.sigma_e2);

        let gw = db * Complex64::from(-common * a_num / (b * b));
        // Chain rule through the DFT map onto each tap.
        for (li, slot) in g_taps.iter_mut().enumerate() {
            let rot = Complex64::from_polar(
                1.0,
                std::f64::consts::TAU * ((i * li) % n) as f64 / n as f64,
            );
            *slot += &gw * rot;
        }
    }
    (g_taps, g_q)
}

/// Water-filling over linear-SINR slopes: maximize `sum log2(1 + q_i s_i)`
/// subject to `sum q_i <= budget`, `q_i >= 0`.
pub fn water_filling(slopes: &[f64], budget: f64) -> Vec<f64> {
    let n = slopes.len();
    let mut idx: Vec<usize> = (0..n).filter(|&i| slopes[i] > 0.0).collect();
    idx.sort_by(|&a, &b| slopes[b].partial_cmp(&slopes[a]).unwrap());
    let mut q = vec![0.0; n];
    if idx.is_empty() || budget <= 0.0 {
        return q;
    }
    let mut active = idx.len();
    loop {
        let inv_sum: f64 = idx[..active].iter().map(|&i| 1.0 / slopes[i]).sum();
        let level = (budget + inv_sum) / active as f64;
        if active == 1 || level >= 1.0 / slopes[idx[active - 1]] {
            for &i in &idx[..active] {
                q[i] = (level - 1.0 / slopes[i]).max(0.0);
            }
            return q;
        }
        active -= 1;
    }
}

/// Half-duplex reference: zero taps, closed-form water-filling over the
/// per-subcarrier slopes `||g_Pkn||^2 / (|gbar_Mkn|^2 + sigma_n2)`.
pub fn hd_water_filling(ws: &WidebandScenario) -> (Vec<f64>, f64) {
    let slopes: Vec<f64> = (0..ws.n())
        .map(|i| ws.g_pk[i].norm_squared() / (ws.gbar_mk[i].norm_sqr() + ws.sigma_n2))
        .collect();
    let q = water_filling(&slopes, ws.p0);
    let rate = q.iter().zip(&slopes).map(|(&qi, &si)| (1.0 + qi * si).log2()).sum();
    (q, rate)
}

/// Exact concave allocation of the power budget for fixed taps, by bisection
/// on the common marginal rate. Returns the physical per-subcarrier powers
/// and the budget multiplier (marginal nat-rate per unit of scaled power).
fn allocate_powers(
    ws: &WidebandScenario,
    data: &SubcarrierData,
    st: &TapState,
    budget: f64,
) -> (Vec<f64>, f64) {
    let n = ws.n();
    let mut q = vec![0.0; n];
    // Scaled coordinates qt_i = q_i / (1 - sigma_e2 t_i) enter the budget
    // linearly; the per-subcarrier rate is still concave and increasing in
    // them.
    let mut alpha = vec![0.0; n];
    let mut kappa = vec![0.0; n];
    let mut bcoef = vec![0.0; n];
    for i in 0..n {
        let denom_pow = 1.0 - ws.sigma_e2 * st.t[i];
        alpha[i] = denom_pow * data.u_norm2[i];
        kappa[i] =
            st.z[i].norm_sqr() + st.leak[i] * (st.a[i] * ws.sigma_e2 + ws.sigma_n2) + ws.sigma_n2;
        bcoef[i] = st.leak[i] * ws.sigma_e2;
    }
    let qt_for_level = |mu: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let (al, ka, be) = (alpha[i], kappa[i], bcoef[i]);
                if al <= 0.0 || al / ka <= mu {
                    return 0.0;
                }
                if be == 0.0 {
                    return 1.0 / mu - ka / al;
                }
                // mu (ka + (al+be) x)(ka + be x) = al ka, positive root.
                let a2 = mu * be * (al + be);
                let a1 = mu * ka * (al + 2.0 * be);
                let a0 = ka * (mu * ka - al);
                let disc = (a1 * a1 - 4.0 * a2 * a0).max(0.0);
                (-a1 + disc.sqrt()) / (2.0 * a2)
            })
            .collect()
    };
    let mu_hi = (0..n).fold(0.0f64, |m, i| {
        if alpha[i] > 0.0 {
            m.max(alpha[i] / kappa[i])
        } else {
            m
        }
    });
    if mu_hi == 0.0 || budget <= 0.0 {
        return (q, mu_hi);
    }
    let mut lo = mu_hi * 1e-18;
    let mut hi = mu_hi;
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let total: f64 = qt_for_level(mid).iter().sum();
        if total > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-15 {
            break;
        }
    }
    let qt = qt_for_level(hi);
    let total: f64 = qt.iter().sum();
    let fix = if total > 0.0 { budget / total } else { 0.0 };
    for i in 0..n {
        q[i] = qt[i] * fix * (1.0 - ws.sigma_e2 * st.t[i]);
    }
    (q, hi)
}

/// Gradient of the reduced objective `F(taps) = max_q R(taps, q)` with the
/// power budget active: the rate gradient in the scaled-power coordinates at
/// the allocated powers, plus the budget multiplier times the overhead-power
/// gradient (envelope theorem). Wirtinger derivatives with respect to the
/// conjugated tap entries, one matrix per tap.
fn envelope_tap_gradient(
    ws: &WidebandScenario,
    data: &SubcarrierData,
    st: &TapState,
    q: &[f64],
    mu: f64,
    l: usize,
) -> Vec<DMatrix<Complex64>> {
    let n = ws.n();
    let (n_t, n_r) = (ws.n_t(), ws.n_r());
    let ln2 = std::f64::consts::LN_2;
    let mut out = vec![DMatrix::<Complex64>::zeros(n_t, n_r); l];
    for i in 0..n {
        let denom_pow = 1.0 - ws.sigma_e2 * st.t[i];
        let u = &data.u[i];
        let m = &data.m[i];
        let w = &st.freq[i];
        let u2 = data.u_norm2[i];
        let qt = q[i] / denom_pow;
        let alpha = denom_pow * u2;
        let bcoef = st.leak[i] * ws.sigma_e2;
        let kappa = st.z[i].norm_sqr()
            + st.leak[i] * (st.a[i] * ws.sigma_e2 + ws.sigma_n2)
            + ws.sigma_n2;

        let d_t = w.clone();
        let d_leak = u * (u.adjoint() * w);
        let d_ici = (u * m.adjoint()) * (st.z[i] * data.e[i].conj());
        let d_a = ((w * m) * m.adjoint()
            + &d_t * Complex64::from(ws.sigma_n2 + st.a[i] * ws.sigma_e2))
            / Complex64::from(denom_pow);
        let d_alpha = &d_t * Complex64::from(-u2 * ws.sigma_e2);
        let d_b = &d_leak * Complex64::from(ws.sigma_e2);
        let d_kappa = &d_ici
            + &d_leak * Complex64::from(st.a[i] * ws.sigma_e2 + ws.sigma_n2)
            + &d_a * Complex64::from(st.leak[i] * ws.sigma_e2);

        let d1 = kappa + (alpha + bcoef) * qt;
        let d0 = kappa + bcoef * qt;
        let mut g = (&d_kappa + (&d_alpha + &d_b) * Complex64::from(qt))
            * Complex64::from(1.0 / d1)
            - (&d_kappa + &d_b * Complex64::from(qt)) * Complex64::from(1.0 / d0);
        g -= &d_a * Complex64::from(mu);
        g *= Complex64::from(1.0 / ln2);
        // Chain through the DFT map onto each tap.
        for (li, slot) in out.iter_mut().enumerate() {
            let rot = Complex64::from_polar(
                1.0,
                std::f64::consts::TAU * ((i * li) % n) as f64 / n as f64,
            );
            *slot += &g * rot;
        }
    }
    out
}

/// Scale the taps until the overhead power fits the budget fraction and every
/// oscillation bound holds; the zero-tap point is always feasible.
fn restore_taps(
    ws: &WidebandScenario,
    data: &SubcarrierData,
    fir: &mut FirPrecoder,
    reserve: f64,
) -> TapState {
    const OSC_MARGIN: f64 = 0.999;
    let feasible = |st: &TapState| {
        let gmax = st.t.iter().fold(0.0f64, |m, &t| m.max(ws.sigma_e2 * t));
        gmax <= OSC_MARGIN && st.a.iter().sum::<f64>() <= reserve * ws.p0
    };
    if let Some(st) = tap_state(ws, data, fir) {
        if feasible(&st) {
            return st;
        }
    }
    let base = fir.clone();
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let mut cand = base.clone();
        for tap in &mut cand.taps {
            *tap *= Complex64::from(mid);
        }
        let ok = tap_state(ws, data, &cand).is_some_and(|st| feasible(&st));
        if ok {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for (tap, b) in fir.taps.iter_mut().zip(&base.taps) {
        *tap = b * Complex64::from(lo);
    }
    tap_state(ws, data, fir).expect("scaled-down taps are feasible")
}

struct Iterate {
    fir: FirPrecoder,
    q: Vec<f64>,
    objective: f64,
}

/// Natural magnitude of a tap entry: taps of this size spend roughly the
/// whole budget on forwarding, and stay clear of the oscillation bound.
fn tap_scale(ws: &WidebandScenario) -> f64 {
    let rms_m = (ws.gbar_mp.iter().map(|v| v.norm_squared()).sum::<f64>() / ws.n() as f64).sqrt();
    let budget_scale = if rms_m > 0.0 { ws.p0.sqrt() / rms_m } else { 1.0 };
    if ws.sigma_e2 > 0.0 {
        budget_scale.min((0.5 / ws.sigma_e2).sqrt())
    } else {
        budget_scale
    }
}

fn run_start(
    ws: &WidebandScenario,
    data: &SubcarrierData,
    start: (FirPrecoder, Vec<f64>),
    opts: &WidebandOptions,
) -> (Iterate, Vec<f64>) {
    const RESERVE: f64 = 1.0 - 1e-9;
    const ARMIJO: f64 = 1e-4;
    let l = start.0.order();
    // Diagonal preconditioner: tap steps in units of the natural tap scale,
    // so convergence does not depend on the absolute channel magnitudes.
    let g_tap = tap_scale(ws);

    // Powers are kept implicitly optimal for the current taps; the ascent
    // runs over the taps with the budget-aware envelope gradient.
    let mut fir = start.0;
    let mut st = restore_taps(ws, data, &mut fir, RESERVE);
    let (mut q, mut mu) = allocate_powers(ws, data, &st, ws.p0 - st.a.iter().sum::<f64>());
    let mut objective = objective_given_state(ws, data, &st, &q);
    let mut trace = vec![objective];
    let mut stall = 0;

    if !opts.freeze_taps {
        for _ in 0..opts.max_iterations {
            let g_taps = envelope_tap_gradient(ws, data, &st, &q, mu, l);
            let g_norm2: f64 =
                g_taps.iter().map(|g| 4.0 * g_tap * g_tap * g.norm_squared()).sum();
            if g_norm2 == 0.0 {
                break;
            }
            let x_norm =
                (fir.taps.iter().map(|t| t.norm_squared()).sum::<f64>()).sqrt() / g_tap;
            // First trial displacement comparable to the normalized iterate
            // scale, at least one natural tap unit.
            let mut step = (x_norm + 1.0) / g_norm2.sqrt();
            let mut accepted = false;
            for _ in 0..60 {
                let mut cand_fir = fir.clone();
                for (tap, g) in cand_fir.taps.iter_mut().zip(&g_taps) {
                    *tap += g * Complex64::from(2.0 * step * g_tap * g_tap);
                }
                let cand_st = restore_taps(ws, data, &mut cand_fir, RESERVE);
                let (cand_q, cand_mu) =
                    allocate_powers(ws, data, &cand_st, ws.p0 - cand_st.a.iter().sum::<f64>());
                let cand_obj = objective_given_state(ws, data, &cand_st, &cand_q);

                // Armijo on the realized tap move.
                let mut inner = 0.0;
                for (g, (new, old)) in g_taps.iter().zip(cand_fir.taps.iter().zip(&fir.taps)) {
                    let delta = new - old;
                    inner += 2.0
                        * delta
                            .iter()
                            .zip(g.iter())
                            .map(|(d, gg)| (gg.conj() * d).re)
                            .sum::<f64>();
                }
                if cand_obj > objective && cand_obj >= objective + ARMIJO * inner.max(0.0) {
                    let gain = cand_obj - objective;
                    fir = cand_fir;
                    st = cand_st;
                    q = cand_q;
                    mu = cand_mu;
                    objective = cand_obj;
                    trace.push(objective);
                    accepted = true;
                    stall = if gain <= opts.tolerance * objective.abs().max(1e-12) {
                        stall + 1
                    } else {
                        0
                    };
                    break;
                }
                step *= 0.5;
            }
            if !accepted || stall >= 8 {
                break;
            }
        }
    }
    (Iterate { fir, q, objective }, trace)
}

/// Maximize the single-user sum rate over the FIR taps and the per-subcarrier
/// powers. Transmit directions are maximum-ratio per subcarrier; they only
/// scale the desired-signal power.
pub fn optimize_wideband(
    ws: &WidebandScenario,
    l: usize,
    opts: &WidebandOptions,
) -> Result<WidebandSolution> {
    use rand::SeedableRng;
    ws.validate()?;
    let bound = fir_order_bound(ws)?;
    if l == 0 || l > bound {
        return Err(FicicError::Domain(format!(
            "tap order {l} outside the cyclic-prefix bound {bound}"
        )));
    }
    let (n_t, n_r, n) = (ws.n_t(), ws.n_r(), ws.n());
    let data = SubcarrierData::new(ws);

    let mut starts: Vec<(FirPrecoder, Vec<f64>)> = Vec::new();
    if let Some((fir, q)) = &opts.warm_start {
        starts.push((fir.zero_padded(l, n_t, n_r), q.clone()));
    }
    starts.push((FirPrecoder::zeros(l, n_t, n_r), Vec::new()));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let avg_m2: f64 = ws.gbar_mp.iter().map(|v| v.norm_squared()).sum::<f64>() / n as f64;
    for _ in 0..opts.restarts {
        // Random taps scaled so their overhead consumes a random slice of the
        // budget.
        let frac: f64 = rng.gen_range(0.02..0.5);
        let raw_scale =
            (frac * ws.p0 / ((avg_m2 + ws.sigma_n2) * (l * n_t * n_r) as f64).max(1e-300)).sqrt();
        let mut fir = FirPrecoder::zeros(l, n_t, n_r);
        for tap in &mut fir.taps {
            for v in tap.iter_mut() {
                *v = Complex64::new(
                    raw_scale * rng.sample::<f64, _>(StandardNormal),
                    raw_scale * rng.sample::<f64, _>(StandardNormal),
                );
            }
        }
        starts.push((fir, Vec::new()));
    }
    if opts.freeze_taps {
        starts = vec![(FirPrecoder::zeros(l, n_t, n_r), Vec::new())];
    }

    let mut best: Option<(Iterate, Vec<f64>)> = None;
    for start in starts {
        let (it, trace) = run_start(ws, &data, start, opts);
        if best.as_ref().is_none_or(|(b, _)| it.objective > b.objective) {
            best = Some((it, trace));
        }
    }
    let (it, trace) = best.expect("at least one start");

    let wd: Vec<DVector<Complex64>> = (0..n)
        .map(|i| {
            let u = &ws.g_pk[i];
            let norm = u.norm();
            if norm == 0.0 || it.q[i] <= 0.0 {
                DVector::zeros(n_t)
            } else {
                u * Complex64::from(it.q[i].sqrt() / norm)
            }
        })
        .collect();
    let p_total = p_out_subcarrier(ws, &it.fir, &wd)?.iter().sum();
    Ok(WidebandSolution { fir: it.fir, q: it.q, wd, sum_rate: it.objective, p_total, trace })
}

// ---------------------------------------------------------------------------
// Channel generation
// ---------------------------------------------------------------------------

/// OFDM numerology and per-link delay spreads for wideband sampling.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OfdmParams {
    pub n_subcarriers: usize,
    pub cp_samples: usize,
    pub tau_samples: usize,
    pub ts: f64,
    pub spread_mp: usize,
    pub spread_pk: usize,
    pub spread_mk: usize,
    pub spread_mue: usize,
}

impl Default for OfdmParams {
    fn default() -> Self {
        Self {
            n_subcarriers: 25,
            cp_samples: 36,
            tau_samples: 4,
            ts: 0.13e-6,
            spread_mp: 3,
            spread_pk: 6,
            spread_mk: 6,
            spread_mue: 6,
        }
    }
}

/// Inputs for [`sample_wideband`]: linear large-scale gains per link (macro
/// side includes the per-stream macro power), dimensions, numerology, powers.
#[derive(Debug, Clone)]
pub struct WidebandConfig {
    pub m: usize,
    pub n_t: usize,
    pub n_r: usize,
    pub gain_mue: f64,
    pub gain_mk: f64,
    pub gain_mp: f64,
    pub gain_pk: f64,
    pub ofdm: OfdmParams,
    pub sigma_n2: f64,
    pub sigma_e2: f64,
    pub p0: f64,
}

impl WidebandConfig {
    /// Wideband view of one cell of a narrowband layout (single-user).
    pub fn from_geometry(geo: &GeometryConfig, cell: usize, ofdm: OfdmParams) -> Result<Self> {
        geo.validate()?;
        if geo.k_m() != 1 || geo.k_p(cell) != 1 {
            return Err(FicicError::Config("wideband sampling is single-user".into()));
        }
        let gains = large_scale_gains(geo, cell)?;
        let sigma_n2 = geo.sigma_n2_w()?;
        Ok(Self {
            m: geo.m,
            n_t: geo.n_t,
            n_r: geo.n_r,
            gain_mue: gains.g_mue[0],
            gain_mk: gains.g_mk[0],
            gain_mp: gains.g_mp,
            gain_pk: gains.g_pk[0],
            ofdm,
            sigma_n2,
            sigma_e2: geo.self_interference.sigma_e2(sigma_n2)?,
            p0: crate::units::dbm_to_watts(geo.p0_dbm),
        })
    }
}

/// Tapped-delay-line draw: one complex Gaussian matrix tap per delay with an
/// exponentially decaying power profile normalized to the link gain.
fn sample_taps<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    gain: f64,
    spread: usize,
    rng: &mut R,
) -> Vec<DMatrix<Complex64>> {
    let count = spread + 1;
    let delta = (spread.max(1) as f64) / 3.0;
    let weights: Vec<f64> = (0..count).map(|i| (-(i as f64) / delta).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| {
            let var = gain * w / total;
            let s = (var / 2.0).sqrt();
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(Complex64::new(
                    s * rng.sample::<f64, _>(StandardNormal),
                    s * rng.sample::<f64, _>(StandardNormal),
                ));
            }
            DMatrix::from_vec(rows, cols, data)
        })
        .collect()
}

fn taps_to_freq(taps: &[DMatrix<Complex64>], n: usize) -> Vec<DMatrix<Complex64>> {
    FirPrecoder { taps: taps.to_vec() }.freq_response(n)
}

/// Draw a wideband scenario: per-link tapped-delay-line fading, DFT to the
/// subcarrier domain, maximum-ratio macro precoding per subcarrier, equivalent
/// channels.
pub fn sample_wideband<R: Rng + ?Sized>(
    cfg: &WidebandConfig,
    rng: &mut R,
) -> Result<WidebandScenario> {
    let n = cfg.ofdm.n_subcarriers;
    if n == 0 {
        return Err(FicicError::Config("need at least one subcarrier".into()));
    }
    let h_mue = sample_taps(cfg.m, 1, cfg.gain_mue, cfg.ofdm.spread_mue, rng);
    let h_mk = sample_taps(cfg.m, 1, cfg.gain_mk, cfg.ofdm.spread_mk, rng);
    let h_mp = sample_taps(cfg.m, cfg.n_r, cfg.gain_mp, cfg.ofdm.spread_mp, rng);
    let h_pk = sample_taps(cfg.n_t, 1, cfg.gain_pk, cfg.ofdm.spread_pk, rng);

    let f_mue = taps_to_freq(&h_mue, n);
    let f_mk = taps_to_freq(&h_mk, n);
    let f_mp = taps_to_freq(&h_mp, n);
    let f_pk = taps_to_freq(&h_pk, n);

    let mut g_pk = Vec::with_capacity(n);
    let mut gbar_mk = Vec::with_capacity(n);
    let mut gbar_mp = Vec::with_capacity(n);
    for i in 0..n {
        let mue = DVector::from_column_slice(f_mue[i].as_slice());
        let norm = mue.norm();
        if norm == 0.0 {
            return Err(FicicError::Numerical("zero macro user channel draw".into()));
        }
        let w_m = mue / Complex64::from(norm);
        gbar_mp.push(f_mp[i].adjoint() * &w_m);
        gbar_mk.push((w_m.adjoint() * DVector::from_column_slice(f_mk[i].as_slice()))[(0, 0)]);
        g_pk.push(DVector::from_column_slice(f_pk[i].as_slice()));
    }
    let ws = WidebandScenario {
        g_pk,
        gbar_mk,
        gbar_mp,
        sigma_n2: cfg.sigma_n2,
        sigma_e2: cfg.sigma_e2,
        p0: cfg.p0,
        tau_samples: cfg.ofdm.tau_samples,
        ts: cfg.ofdm.ts,
        cp_samples: cfg.ofdm.cp_samples,
        spread_mp: cfg.ofdm.spread_mp,
        spread_pk: cfg.ofdm.spread_pk,
    };
    ws.validate()?;
    Ok(ws)
}
