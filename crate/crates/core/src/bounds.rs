//! Non-asymptotic Wasserstein bound machinery: local-error constants of the
//! kinetic integrators, the contraction-plus-bias mixing bound, `(h, n)`
//! planning to a target accuracy, and the scalar recursion lemma behind the
//! bound, exposed as a property check.

use serde::Serialize;

use crate::contractivity::{discrete_rate, MetricP};
use crate::error::{Error, Result};
use crate::integrators::{Scheme, SchemeStep};

/// Golden ratio; also `sqrt(p_max)` for the canonical kinetic metric, the
/// factor converting Euclidean local-error bounds into `P`-norm bounds.
const PHI: f64 = 1.618033988749895;

/// Inputs to the mixing bound: strong order `p`, local-error constants
/// `(C0, C1, C2)`, the per-step contraction rate `r` (meaning
/// `rho_h <= (1 - r h)^2`), and the step-size validity threshold `h0`.
#[derive(Clone, Debug, Serialize)]
pub struct BoundParams {
    pub p: u32,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub r: f64,
    pub h0: f64,
}

impl BoundParams {
    pub fn with_rate(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    pub fn with_h0(mut self, h0: f64) -> Self {
        self.h0 = h0;
        self
    }

    /// Largest `h` with `(1 - r h)^2 + C0 h^2 < 1`; infinite when `C0 = 0`.
    pub fn rate_validity_cap(&self) -> f64 {
        if self.c0 <= 0.0 {
            f64::INFINITY
        } else {
            2.0 * self.r / (self.c0 + self.r * self.r)
        }
    }

    /// Effective contraction rate
    /// `R_h = (1 - sqrt((1 - r h)^2 + C0 h^2)) / h`; tends to `r` as
    /// `h -> 0` and never exceeds it.
    pub fn r_h(&self, h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("need h > 0, got {h}")));
        }
        let base = 1.0 - self.r * h;
        let q = base * base + self.c0 * h * h;
        if q >= 1.0 {
            return Err(Error::BoundUnavailable(format!(
                "(1 - r h)^2 + C0 h^2 = {q} >= 1 at h = {h}; step too large for these constants"
            )));
        }
        // (1 - sqrt(q))/h = (1 - q)/(h (1 + sqrt(q))) with
        // 1 - q = h (r (2 - r h) - C0 h); exact equality R_h = r at C0 = 0
        let one_minus_q = self.r * (2.0 - self.r * h) - self.c0 * h;
        Ok(one_minus_q / (1.0 + q.sqrt()))
    }
}

/// Local-error constants of the exponential Euler integrator in the
/// canonical metric at friction 2: strong order one, with
/// `C2 = K c^{3/2} L sqrt(d)` and `K = sqrt(6 + 2 sqrt 5)/3 = (1 + sqrt 5)/3`.
/// Valid for `h <= 1`.
pub fn constants_ee(c: f64, l: f64, d: usize) -> BoundParams {
    let k = (1.0 + 5.0f64.sqrt()) / 3.0;
    BoundParams {
        p: 1,
        c0: 0.0,
        c1: 0.0,
        c2: k * c.powf(1.5) * l * (d as f64).sqrt(),
        r: 0.0,
        h0: 1.0,
    }
}

/// Local-error constants of UBU in the canonical metric at friction 2,
/// valid for `h <= 2`.
///
/// With a third-derivative bound `L1` the scheme is strong order two with
/// ```text
/// C0 = K0 (2 + c L),
/// C1 = K1 c^{3/2} L sqrt(d),
/// C2 = K2 ((1 + 4 sqrt 3) c^2 L^{3/2} + (3 + sqrt(42)/2) c^{3/2} L
///          + 6 c L^{1/2} + sqrt 3 c^2 L1) sqrt(d),
/// K0 = sqrt(2 sqrt 2 / (3 - sqrt 5)), K1 = sqrt(3)/12,
/// K2 = sqrt((3 + sqrt 5)/2) / 24.
/// ```
/// Without one (`l1 = None`) it falls back to the order-one envelope of the
/// UBU local error, evaluated at the validity edge `h = 2` and converted to
/// the `P`-norm by `sqrt(p_max)`.
pub fn constants_ubu(c: f64, l: f64, l1: Option<f64>, d: usize) -> BoundParams {
    let root_d = (d as f64).sqrt();
    match l1 {
        Some(l1) => {
            let k0 = (2.0 * 2.0f64.sqrt() / (3.0 - 5.0f64.sqrt())).sqrt();
            let k1 = 3.0f64.sqrt() / 12.0;
            let k2 = ((3.0 + 5.0f64.sqrt()) / 2.0).sqrt() / 24.0;
            let c2 = k2
                * ((1.0 + 4.0 * 3.0f64.sqrt()) * c * c * l.powf(1.5)
                    + (3.0 + 42.0f64.sqrt() / 2.0) * c.powf(1.5) * l
                    + 6.0 * c * l.sqrt()
                    + 3.0f64.sqrt() * c * c * l1)
                * root_d;
            BoundParams {
                p: 2,
                c0: k0 * (2.0 + c * l),
                c1: k1 * c.powf(1.5) * l * root_d,
                c2,
                r: 0.0,
                h0: 2.0,
            }
        }
        None => {
            // order-one envelope of the UBU local error, monotone in h,
            // taken at h = 2
            let h = 2.0;
            let euclidean =
                0.25 * (1.0 + (1.0 / 6.0 + 42.0f64.sqrt() / 12.0) * h) * c.powf(1.5) * l
                    + 0.5 * (1.0 + h / 6.0) * c * l.sqrt()
                    + 3.0f64.sqrt() / 12.0 * h * (1.0 + h / 2.0) * c * c * l.powf(1.5);
            BoundParams {
                p: 1,
                c0: 0.0,
                c1: 0.0,
                c2: PHI * euclidean * root_d,
                r: 0.0,
                h0: 2.0,
            }
        }
    }
}

/// The contraction-plus-bias bound after `n` steps from an initial
/// `W_P`-distance `w0`:
/// `(1 - h R_h)^n w0 + (sqrt(2) C1 / sqrt(R_h) + C2 / R_h) h^p`.
/// Monotone nonincreasing in `n`; the `n -> infinity` limit is the bias
/// term alone.
pub fn mixing_bound(params: &BoundParams, w0: f64, h: f64, n: f64) -> Result<f64> {
    if !(w0 >= 0.0) || !(n >= 0.0) {
        return Err(Error::InvalidParameter("need w0 >= 0 and n >= 0".into()));
    }
    if h > params.h0 {
        return Err(Error::InvalidParameter(format!(
            "h = {h} exceeds the validity threshold h0 = {}",
            params.h0
        )));
    }
    let r_h = params.r_h(h)?;
    if r_h <= 0.0 {
        return Err(Error::BoundUnavailable(format!(
            "R_h = {r_h} <= 0 at h = {h}"
        )));
    }
    let bias = (2.0f64.sqrt() * params.c1 / r_h.sqrt() + params.c2 / r_h) * h.powi(params.p as i32);
    Ok((1.0 - h * r_h).max(0.0).powf(n) * w0 + bias)
}

/// A planned run: step size, step count, and the bound value they achieve.
#[derive(Clone, Debug, Serialize)]
pub struct MixingPlan {
    pub scheme: Scheme,
    pub h: f64,
    /// Integer step count (kept as a float: extreme accuracy demands can
    /// push it beyond integer range).
    pub n_steps: f64,
    /// Steps needed per unit of log contraction, `-1 / ln(1 - h R_h)`; the
    /// accuracy-independent cost factor that the scaling laws govern.
    pub steps_per_log_contraction: f64,
    pub eps: f64,
    pub kappa: f64,
    pub m: f64,
    pub d: usize,
    pub w0: f64,
    pub rbar: f64,
    pub l1: Option<f64>,
    pub split: f64,
    /// Bound value at `(h, n_steps)`; at most `eps` by construction.
    pub achieved_bound: f64,
    pub params: BoundParams,
}

/// Plan `(h, n)` so the mixing bound is at most `eps`, at the conventional
/// choice `c = 1/L`, `gamma = 2`. The per-step rate is `r = rbar / kappa`
/// (default `rbar = 0.45`); `split` is the fraction of `eps` given to the
/// bias term (default one half). The candidate step is additionally checked
/// for empirical contractivity and halved if necessary.
#[allow(clippy::too_many_arguments)]
pub fn plan(
    scheme: Scheme,
    eps: f64,
    kappa: f64,
    m: f64,
    d: usize,
    w0: f64,
    rbar: Option<f64>,
    h0: Option<f64>,
    l1: Option<f64>,
    split: Option<f64>,
) -> Result<MixingPlan> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("need eps > 0, got {eps}")));
    }
    if !(kappa >= 1.0) || !(m > 0.0) || !(w0 >= 0.0) {
        return Err(Error::InvalidParameter(
            "need kappa >= 1, m > 0, w0 >= 0".into(),
        ));
    }
    let rbar = rbar.unwrap_or(0.45);
    if !(rbar > 0.0 && rbar < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "rbar must lie in (0, 1/2), got {rbar}"
        )));
    }
    let split = split.unwrap_or(0.5);
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split must lie in (0, 1), got {split}"
        )));
    }
    let l = kappa * m;
    let c = 1.0 / l;
    let mut params = match scheme {
        Scheme::Ee => constants_ee(c, l, d),
        Scheme::Ubu => constants_ubu(c, l, l1, d),
        other => {
            return Err(Error::InvalidParameter(format!(
                "plans cover the EE and UBU integrators, not {other}"
            )))
        }
    };
    params = params.with_rate(rbar / kappa);
    if let Some(cap) = h0 {
        if !(cap > 0.0) {
            return Err(Error::InvalidParameter(format!("need h0 > 0, got {cap}")));
        }
        let merged = params.h0.min(cap);
        params = params.with_h0(merged);
    }

    let bias_at = |h: f64| -> f64 {
        match params.r_h(h) {
            Ok(r_h) if r_h > 0.0 => {
                (2.0f64.sqrt() * params.c1 / r_h.sqrt() + params.c2 / r_h) * h.powi(params.p as i32)
            }
            _ => f64::INFINITY,
        }
    };

    let bias_target = split * eps;
    let cap = params.h0.min(0.999 * params.rate_validity_cap());
    let mut h = if bias_at(cap) <= bias_target {
        cap
    } else {
        // bias is monotone increasing in h, so bisect
        let mut lo = 0.0;
        let mut hi = cap;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bias_at(mid) <= bias_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    if !(h > 0.0) {
        return Err(Error::BoundUnavailable(
            "no positive step satisfies the bias budget".into(),
        ));
    }

    // empirical contractivity guard at the conventional parameters
    let metric = MetricP::canonical_underdamped();
    for _ in 0..60 {
        let step = SchemeStep::new(scheme, 2.0, c, h)?;
        if discrete_rate(&metric, &step, m, l)?.contractive {
            break;
        }
        h *= 0.5;
    }

    let bias = bias_at(h);
    let remaining = eps - bias;
    let r_h = params.r_h(h)?;
    let per_step = -(-h * r_h).ln_1p(); // -ln(1 - h R_h)
    let raw = (w0 / remaining).ln() / per_step;
    let n_steps = (raw.ceil() + 1.0).max(1.0);
    let mut n_steps = n_steps;
    let mut achieved = mixing_bound(&params, w0, h, n_steps)?;
    for _ in 0..64 {
        if achieved <= eps {
            break;
        }
        n_steps *= 2.0;
        achieved = mixing_bound(&params, w0, h, n_steps)?;
    }
    if achieved > eps {
        return Err(Error::BoundUnavailable(format!(
            "bound {achieved} stuck above eps = {eps}"
        )));
    }
    Ok(MixingPlan {
        scheme,
        h,
        n_steps,
        steps_per_log_contraction: 1.0 / per_step,
        eps,
        kappa,
        m,
        d,
        w0,
        rbar,
        l1,
        split,
        achieved_bound: achieved,
        params,
    })
}

/// Trace of the scalar recursion `z_{k+1} = sqrt((1-A)^2 z_k^2 + B) + C`
/// (the equality case of the recursion lemma) against its closed-form
/// envelope `(1-A)^k z_0 + sqrt(B/A) + C/A`.
#[derive(Clone, Debug, Serialize)]
pub struct GronwallReport {
    pub sequence: Vec<f64>,
    pub envelope: Vec<f64>,
    pub holds: bool,
    /// Largest `z_k - envelope_k` (negative when the bound holds strictly).
    pub max_gap: f64,
}

pub fn gronwall_recursion_check(
    a: f64,
    b: f64,
    c: f64,
    z0: f64,
    n: usize,
) -> Result<GronwallReport> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need A in (0, 1), got {a}"
        )));
    }
    if !(b >= 0.0 && c >= 0.0 && z0 >= 0.0) {
        return Err(Error::InvalidParameter("need B, C, z0 >= 0".into()));
    }
    let tail = (b / a).sqrt() + c / a;
    let mut sequence = Vec::with_capacity(n + 1);
    let mut envelope = Vec::with_capacity(n + 1);
    let mut z = z0;
    let mut decay = 1.0;
    let mut max_gap = f64::NEG_INFINITY;
    for _ in 0..=n {
        sequence.push(z);
        let env = decay * z0 + tail;
        envelope.push(env);
        max_gap = max_gap.max(z - env);
        z = ((1.0 - a) * (1.0 - a) * z * z + b).sqrt() + c;
        decay *= 1.0 - a;
    }
    let tol = 1e-12 * (1.0 + z0 + tail);
    Ok(GronwallReport {
        holds: max_gap <= tol,
        sequence,
        envelope,
        max_gap,
    })
}
