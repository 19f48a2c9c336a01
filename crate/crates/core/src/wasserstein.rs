//! Exact Wasserstein machinery: the Gaussian closed form, the discrete
//! Lyapunov solver giving every shipped scheme's exact invariant law on
//! quadratic targets, and exact-assignment empirical distances for
//! ensembles.

use nalgebra::{DMatrix, DVector};

use crate::contractivity::{discrete_rate, MetricP};
use crate::error::{Error, Result};
use crate::integrators::{Scheme, SchemeStep};
use crate::kernels::{ie_variance, integral_f};
use crate::linalg;
use crate::state_space::{HatModel, ModelKind};

/// A Gaussian law by mean and covariance. Covariances are symmetrized on
/// construction; eigenvalues below `-1e-12` are rejected, small negative
/// ones are clipped when square roots are taken.
#[derive(Clone, Debug)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch(
                "covariance must be square and match the mean".into(),
            ));
        }
        if linalg::asymmetry(&cov) > 1e-12 * cov.norm().max(1.0) {
            return Err(Error::InvalidParameter(
                "covariance must be symmetric".into(),
            ));
        }
        let cov = linalg::symmetrize(&cov);
        if linalg::symmetric_eigenvalues(&cov)[0] < -1e-12 * cov.norm().max(1.0) {
            return Err(Error::InvalidParameter(
                "covariance must be positive semidefinite".into(),
            ));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal over a contiguous coordinate range.
    pub fn marginal(&self, start: usize, len: usize) -> Self {
        Self {
            mean: DVector::from_fn(len, |i, _| self.mean[start + i]),
            cov: self.cov.view((start, start), (len, len)).into_owned(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMethod {
    GaussianClosedForm,
    EmpiricalAssignment,
    EmpiricalSorted,
}

/// A computed distance, tagged with the metric it was measured in.
#[derive(Clone, Debug)]
pub struct WassersteinResult {
    pub value: f64,
    /// `None` means the Euclidean `W_2`; otherwise the `P` defining `W_P`.
    pub metric: Option<DMatrix<f64>>,
    pub method: DistanceMethod,
}

impl WassersteinResult {
    /// JSON form with the metric as row-major nested arrays.
    pub fn to_json(&self) -> serde_json::Value {
        let metric = self.metric.as_ref().map(|p| {
            (0..p.nrows())
                .map(|i| (0..p.ncols()).map(|j| p[(i, j)]).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        });
        serde_json::json!({
            "value": self.value,
            "metric": metric,
            "method": self.method,
        })
    }
}

fn transformed(law: &GaussianLaw, metric: &MetricP) -> Result<GaussianLaw> {
    let n = metric.dim();
    if !law.dim().is_multiple_of(n) {
        return Err(Error::DimensionMismatch(format!(
            "law dimension {} is not a multiple of the hat size {n}",
            law.dim()
        )));
    }
    let d = law.dim() / n;
    let t = metric.lift_factor_t(d);
    Ok(GaussianLaw {
        mean: &t * &law.mean,
        cov: linalg::symmetrize(&(&t * &law.cov * t.transpose())),
    })
}

/// Closed-form `W_2` between Gaussians:
/// `W_2^2 = ||mu_1 - mu_2||^2 + Tr(S_1 + S_2 - 2 (S_2^{1/2} S_1 S_2^{1/2})^{1/2})`.
/// With a metric, both laws are pushed through `L^T (x) I` first, which
/// turns `W_P` into the Euclidean `W_2` of the transformed laws.
pub fn gaussian_w2(
    g1: &GaussianLaw,
    g2: &GaussianLaw,
    metric: Option<&MetricP>,
) -> Result<WassersteinResult> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "laws have dimensions {} and {}",
            g1.dim(),
            g2.dim()
        )));
    }
    let (a, b) = match metric {
        None => (g1.clone(), g2.clone()),
        Some(p) => (transformed(g1, p)?, transformed(g2, p)?),
    };
    let root2 = linalg::psd_sqrt(&b.cov);
    let inner = &root2 * &a.cov * &root2;
    let cross: f64 = linalg::symmetric_eigenvalues(&inner)
        .iter()
        .map(|&v| v.max(0.0).sqrt())
        .sum();
    let mean_gap = (&a.mean - &b.mean).norm_squared();
    let value = (mean_gap + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0);
    Ok(WassersteinResult {
        value: value.sqrt(),
        metric: metric.map(|p| p.matrix().clone()),
        method: DistanceMethod::GaussianClosedForm,
    })
}

/// Invariant law of the SDE on the quadratic target with precision `Q`:
/// kinetic models give `v ~ N(0, c I)` independent of `x ~ N(0, Q^{-1})`,
/// the overdamped model gives `x ~ N(0, Q^{-1})` alone.
pub fn sde_invariant(model: &HatModel, q: &DMatrix<f64>) -> Result<GaussianLaw> {
    let d = q.nrows();
    let q_inv = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("precision must be positive definite".into()))?
        .inverse();
    match model.kind {
        ModelKind::Overdamped => GaussianLaw::new(DVector::zeros(d), q_inv),
        ModelKind::Underdamped => {
            let mut cov = DMatrix::zeros(2 * d, 2 * d);
            for i in 0..d {
                cov[(i, i)] = model.force_scale;
            }
            cov.view_mut((d, d), (d, d)).copy_from(&q_inv);
            GaussianLaw::new(DVector::zeros(2 * d), cov)
        }
        ModelKind::Custom => Err(Error::InvalidParameter(
            "invariant law is shipped for the overdamped/underdamped models".into(),
        )),
    }
}

/// Row of the per-step noise map over the functional vector
/// `(dW_1, IE_1, dW_2, IE_2)`: coefficient of the identity and of `Q` for
/// each functional.
struct NoiseRow {
    id: [f64; 4],
    q: [f64; 4],
}

/// Full-step linear map `M` and per-step noise covariance `N` of a scheme
/// on the quadratic target with precision `q`; the invariant covariance is
/// the fixed point of `S -> M S M^T + N`.
pub fn scheme_transition(step: &SchemeStep, q: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = q.nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let gamma = step.gamma;
    let (e, f, g) = (step.e_full, step.f_full, step.g_full);
    let (eh, fh) = (step.e_half, step.f_half);
    let (c, h) = (step.c, step.h);
    let amp = (2.0 * gamma * c).sqrt();

    if step.scheme == Scheme::Em {
        let m = &id - h * c * q;
        let n = 2.0 * c * h * &id;
        return (m, n);
    }

    let row_e = [0.0, eh, 0.0, 1.0];
    let row_f = [1.0 / gamma, -eh / gamma, 1.0 / gamma, -1.0 / gamma];
    let row_f1 = [1.0 / gamma, -1.0 / gamma, 0.0, 0.0];
    let scale = |r: &[f64; 4], s: f64| -> [f64; 4] { [r[0] * s, r[1] * s, r[2] * s, r[3] * s] };

    let (m, row_v, row_x): (DMatrix<f64>, NoiseRow, NoiseRow) = match step.scheme {
        Scheme::Ee => {
            let mut m = DMatrix::zeros(2 * d, 2 * d);
            m.view_mut((0, 0), (d, d)).copy_from(&(e * &id));
            m.view_mut((0, d), (d, d)).copy_from(&(-c * f * q));
            m.view_mut((d, 0), (d, d)).copy_from(&(f * &id));
            m.view_mut((d, d), (d, d)).copy_from(&(&id - c * g * q));
            (
                m,
                NoiseRow {
                    id: scale(&row_e, amp),
                    q: [0.0; 4],
                },
                NoiseRow {
                    id: scale(&row_f, amp),
                    q: [0.0; 4],
                },
            )
        }
        Scheme::Ubu => {
            let mut m = DMatrix::zeros(2 * d, 2 * d);
            m.view_mut((0, 0), (d, d))
                .copy_from(&(e * &id - h * c * eh * fh * q));
            m.view_mut((0, d), (d, d)).copy_from(&(-h * c * eh * q));
            m.view_mut((d, 0), (d, d))
                .copy_from(&(f * &id - h * c * fh * fh * q));
            m.view_mut((d, d), (d, d))
                .copy_from(&(&id - h * c * fh * q));
            (
                m,
                NoiseRow {
                    id: scale(&row_e, amp),
                    q: scale(&row_f1, -h * c * eh * amp),
                },
                NoiseRow {
                    id: scale(&row_f, amp),
                    q: scale(&row_f1, -h * c * fh * amp),
                },
            )
        }
        Scheme::Bub => {
            let half_kick = -(h / 2.0) * c;
            let mut kick = DMatrix::identity(2 * d, 2 * d);
            kick.view_mut((0, d), (d, d)).copy_from(&(half_kick * q));
            let mut transport = DMatrix::zeros(2 * d, 2 * d);
            transport.view_mut((0, 0), (d, d)).copy_from(&(e * &id));
            transport.view_mut((d, 0), (d, d)).copy_from(&(f * &id));
            transport.view_mut((d, d), (d, d)).copy_from(&id);
            let m = &kick * &transport * &kick;
            (
                m,
                NoiseRow {
                    id: scale(&row_e, amp),
                    q: scale(&row_f, half_kick * amp),
                },
                NoiseRow {
                    id: scale(&row_f, amp),
                    q: [0.0; 4],
                },
            )
        }
        Scheme::Em => unreachable!(),
    };

    // covariance of (dW1, IE1, dW2, IE2): block diagonal per half step
    let delta = h / 2.0;
    let cov_w = delta;
    let cov_wi = integral_f(gamma, delta);
    let cov_ii = ie_variance(gamma, delta);
    let mut c4 = [[0.0; 4]; 4];
    c4[0][0] = cov_w;
    c4[0][1] = cov_wi;
    c4[1][0] = cov_wi;
    c4[1][1] = cov_ii;
    c4[2][2] = cov_w;
    c4[2][3] = cov_wi;
    c4[3][2] = cov_wi;
    c4[3][3] = cov_ii;

    let q2 = q * q;
    let block = |r1: &NoiseRow, r2: &NoiseRow| -> DMatrix<f64> {
        let mut w_ii = 0.0;
        let mut w_iq = 0.0;
        let mut w_qq = 0.0;
        for (k, row) in c4.iter().enumerate() {
            for (l, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                w_ii += w * r1.id[k] * r2.id[l];
                w_iq += w * (r1.id[k] * r2.q[l] + r1.q[k] * r2.id[l]);
                w_qq += w * r1.q[k] * r2.q[l];
            }
        }
        w_ii * &id + w_iq * q + w_qq * &q2
    };
    let n_vv = block(&row_v, &row_v);
    let n_vx = block(&row_v, &row_x);
    let n_xx = block(&row_x, &row_x);
    let mut n = DMatrix::zeros(2 * d, 2 * d);
    n.view_mut((0, 0), (d, d)).copy_from(&n_vv);
    n.view_mut((0, d), (d, d)).copy_from(&n_vx);
    n.view_mut((d, 0), (d, d)).copy_from(&n_vx.transpose());
    n.view_mut((d, d), (d, d)).copy_from(&n_xx);
    (m, n)
}

/// Fixed point of `S -> M S M^T + N` by squaring-doubling; returns the
/// solution and its re-substitution residual `||M S M^T + N - S|| / ||S||`.
pub fn lyapunov_doubling(m: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let mut mk = m.clone();
    let mut nk = linalg::symmetrize(n);
    for _ in 0..200 {
        if mk.norm() < 1e-12 {
            break;
        }
        nk = linalg::symmetrize(&(&mk * &nk * mk.transpose() + &nk));
        mk = &mk * &mk;
        if !nk.iter().all(|v| v.is_finite()) {
            return Err(Error::NoInvariant(
                "covariance recursion diverged (map is not a contraction)".into(),
            ));
        }
    }
    if mk.norm() >= 1e-12 {
        return Err(Error::NoInvariant(
            "covariance recursion did not converge".into(),
        ));
    }
    let residual = (m * &nk * m.transpose() + n - &nk).norm() / nk.norm();
    Ok((nk, residual))
}

/// Exact invariant Gaussian of a scheme on the quadratic target with
/// precision `Q`, from the discrete Lyapunov equation. Errors when the
/// scheme is not contractive over the spectrum of `Q` at this step size.
pub fn numerical_invariant(step: &SchemeStep, q: &DMatrix<f64>) -> Result<GaussianLaw> {
    if linalg::asymmetry(q) > 1e-12 * q.norm().max(1.0) {
        return Err(Error::InvalidParameter(
            "precision must be symmetric".into(),
        ));
    }
    let ev = linalg::symmetric_eigenvalues(q);
    let (lam_min, lam_max) = (ev[0], *ev.last().unwrap());
    if lam_min <= 0.0 {
        return Err(Error::InvalidParameter(
            "precision must be positive definite".into(),
        ));
    }
    let metric = MetricP::canonical_for(step.scheme);
    let report = discrete_rate(&metric, step, lam_min, lam_max)?;
    if !report.contractive {
        return Err(Error::NoInvariant(format!(
            "{} is not contractive at h={} over the spectrum [{lam_min}, {lam_max}]",
            step.scheme, step.h
        )));
    }
    let (m, n) = scheme_transition(step, q);
    let (cov, residual) = lyapunov_doubling(&m, &n)?;
    if residual > 1e-12 {
        return Err(Error::NoInvariant(format!(
            "Lyapunov residual {residual:.2e} exceeds 1e-12"
        )));
    }
    GaussianLaw::new(DVector::zeros(cov.nrows()), cov)
}

const ASSIGNMENT_CAP: usize = 2048;
const UNASSIGNED: usize = usize::MAX;

/// Exact square linear assignment (Jonker-Volgenant: column reduction,
/// reduction transfer, augmenting row reduction, shortest augmenting
/// paths). Returns the row-to-column assignment and the total cost.
fn solve_assignment(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    let mut row_to_col = vec![UNASSIGNED; n];
    let mut col_to_row = vec![UNASSIGNED; n];
    let mut v = vec![0.0f64; n];

    // column reduction, scanning columns in reverse
    let mut matches = vec![0usize; n];
    for j in (0..n).rev() {
        let mut imin = 0;
        let mut min = cost[(0, j)];
        for i in 1..n {
            if cost[(i, j)] < min {
                min = cost[(i, j)];
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            row_to_col[imin] = j;
            col_to_row[j] = imin;
        }
    }

    // reduction transfer from singly-assigned rows
    let mut free_rows: Vec<usize> = Vec::new();
    for i in 0..n {
        if matches[i] == 0 {
            free_rows.push(i);
        } else if matches[i] == 1 && n > 1 {
            let j1 = row_to_col[i];
            let mut min = f64::INFINITY;
            for j in 0..n {
                if j != j1 {
                    let r = cost[(i, j)] - v[j];
                    if r < min {
                        min = r;
                    }
                }
            }
            v[j1] -= min;
        }
    }

    // two rounds of augmenting row reduction
    for _ in 0..2 {
        let mut k = 0;
        let mut still_free: Vec<usize> = Vec::new();
        let mut guard = 0usize;
        while k < free_rows.len() {
            guard += 1;
            if guard > 20 * n + 100 {
                // hand the remaining rows to the exact augmentation phase
                still_free.extend_from_slice(&free_rows[k..]);
                break;
            }
            let i = free_rows[k];
            k += 1;
            let mut u1 = f64::INFINITY;
            let mut u2 = f64::INFINITY;
            let mut j1 = 0;
            let mut j2 = 0;
            for j in 0..n {
                let r = cost[(i, j)] - v[j];
                if r < u1 {
                    u2 = u1;
                    j2 = j1;
                    u1 = r;
                    j1 = j;
                } else if r < u2 {
                    u2 = r;
                    j2 = j;
                }
            }
            let mut jbest = j1;
            if u1 < u2 {
                v[j1] -= u2 - u1;
            } else if col_to_row[j1] != UNASSIGNED {
                jbest = j2;
            }
            let displaced = col_to_row[jbest];
            row_to_col[i] = jbest;
            col_to_row[jbest] = i;
            if displaced != UNASSIGNED {
                row_to_col[displaced] = UNASSIGNED;
                if u1 < u2 {
                    k -= 1;
                    free_rows[k] = displaced;
                } else {
                    still_free.push(displaced);
                }
            }
        }
        free_rows = still_free;
    }

    // shortest augmenting path for each remaining free row
    for &source in &free_rows {
        let mut dist: Vec<f64> = (0..n).map(|j| cost[(source, j)] - v[j]).collect();
        let mut pred = vec![source; n];
        let mut settled = vec![false; n];
        let sink;
        let path_cost;
        loop {
            let mut jmin = UNASSIGNED;
            let mut dmin = f64::INFINITY;
            for j in 0..n {
                if !settled[j] && dist[j] < dmin {
                    dmin = dist[j];
                    jmin = j;
                }
            }
            let j = jmin;
            settled[j] = true;
            if col_to_row[j] == UNASSIGNED {
                sink = j;
                path_cost = dmin;
                break;
            }
            let i = col_to_row[j];
            let base = dmin - (cost[(i, j)] - v[j]);
            for j2 in 0..n {
                if !settled[j2] {
                    let alt = base + cost[(i, j2)] - v[j2];
                    if alt < dist[j2] {
                        dist[j2] = alt;
                        pred[j2] = i;
                    }
                }
            }
        }
        for j in 0..n {
            if settled[j] {
                v[j] += dist[j] - path_cost;
            }
        }
        // augment along the predecessor chain
        let mut j = sink;
        loop {
            let i = pred[j];
            let previous = row_to_col[i];
            row_to_col[i] = j;
            col_to_row[j] = i;
            if i == source {
                break;
            }
            j = previous;
        }
    }

    let total = (0..n).map(|i| cost[(i, row_to_col[i])]).sum();
    (row_to_col, total)
}

fn metric_transform_samples(
    samples: &[DVector<f64>],
    metric: &MetricP,
) -> Result<Vec<DVector<f64>>> {
    let n = metric.dim();
    samples
        .iter()
        .map(|s| {
            if !s.len().is_multiple_of(n) {
                return Err(Error::DimensionMismatch(format!(
                    "sample dimension {} is not a multiple of the hat size {n}",
                    s.len()
                )));
            }
            let d = s.len() / n;
            let l = metric.factor();
            let mut out = DVector::zeros(s.len());
            for i in 0..n {
                for j in 0..n {
                    let w = l[(j, i)]; // (L^T)_{ij}
                    if w != 0.0 {
                        for k in 0..d {
                            out[i * d + k] += w * s[j * d + k];
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// Exact empirical `W_2` (or `W_P`) between two equally sized ensembles:
/// sort-and-pair in one dimension, exact optimal assignment on squared
/// distances otherwise (capped at 2048 samples).
pub fn empirical_w2(
    first: &[DVector<f64>],
    second: &[DVector<f64>],
    metric: Option<&MetricP>,
) -> Result<WassersteinResult> {
    if first.len() != second.len() {
        return Err(Error::DimensionMismatch(format!(
            "ensembles have {} and {} samples",
            first.len(),
            second.len()
        )));
    }
    let n = first.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty ensembles".into()));
    }
    let dim = first[0].len();
    if first.iter().chain(second.iter()).any(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch("ragged ensemble".into()));
    }
    let (a, b) = match metric {
        None => (first.to_vec(), second.to_vec()),
        Some(p) => (
            metric_transform_samples(first, p)?,
            metric_transform_samples(second, p)?,
        ),
    };
    let (mean_sq, method) = if dim == 1 {
        let mut xs: Vec<f64> = a.iter().map(|s| s[0]).collect();
        let mut ys: Vec<f64> = b.iter().map(|s| s[0]).collect();
        xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
        ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let total: f64 = xs.iter().zip(&ys).map(|(p, q)| (p - q) * (p - q)).sum();
        (total / n as f64, DistanceMethod::EmpiricalSorted)
    } else {
        if n > ASSIGNMENT_CAP {
            return Err(Error::InvalidParameter(format!(
                "exact assignment is capped at {ASSIGNMENT_CAP} samples, got {n}"
            )));
        }
        let cost = DMatrix::from_fn(n, n, |i, j| (&a[i] - &b[j]).norm_squared());
        let (_, total) = solve_assignment(&cost);
        (total / n as f64, DistanceMethod::EmpiricalAssignment)
    };
    Ok(WassersteinResult {
        value: mean_sq.max(0.0).sqrt(),
        metric: metric.map(|p| p.matrix().clone()),
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{simulate, ChainState, InitialCondition};
    use crate::state_space::make_model;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn law(mean: &[f64], cov_rows: &[&[f64]]) -> GaussianLaw {
        let n = mean.len();
        GaussianLaw::new(
            DVector::from_row_slice(mean),
            DMatrix::from_fn(n, n, |i, j| cov_rows[i][j]),
        )
        .unwrap()
    }

    #[test]
    fn w2_trivial_cases() {
        let g = law(&[0.0, 0.0], &[&[1.0, 0.2], &[0.2, 2.0]]);
        // the closed form cancels traces of order one, so identical laws
        // come out at the square root of machine epsilon
        assert!(gaussian_w2(&g, &g, None).unwrap().value < 1e-7);

        let shifted = law(&[3.0, 4.0], &[&[1.0, 0.2], &[0.2, 2.0]]);
        assert_relative_eq!(
            gaussian_w2(&g, &shifted, None).unwrap().value,
            5.0,
            max_relative = 1e-12
        );

        let a = law(&[0.0], &[&[4.0]]);
        let b = law(&[0.0], &[&[9.0]]);
        assert_relative_eq!(
            gaussian_w2(&a, &b, None).unwrap().value,
            1.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn sandwich_between_wp_and_w2() {
        let metric = MetricP::canonical_underdamped();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let d = 3;
            let mk_law = |rng: &mut ChaCha8Rng| {
                let f = DMatrix::from_fn(2 * d, 2 * d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let cov = &f * f.transpose() / (2.0 * d as f64);
                let mean = DVector::from_fn(2 * d, |_, _| rng.sample::<f64, _>(StandardNormal));
                GaussianLaw::new(mean, linalg::symmetrize(&cov)).unwrap()
            };
            let g1 = mk_law(&mut rng);
            let g2 = mk_law(&mut rng);
            let w2 = gaussian_w2(&g1, &g2, None).unwrap().value;
            let wp = gaussian_w2(&g1, &g2, Some(&metric)).unwrap().value;
            let lo = metric.eigen_min().sqrt() * w2;
            let hi = metric.eigen_max().sqrt() * w2;
            assert!(
                wp >= lo - 1e-10 && wp <= hi + 1e-10,
                "sandwich violated: {lo} <= {wp} <= {hi}"
            );
        }
    }

    #[test]
    fn sde_invariant_examples() {
        let model = make_model(ModelKind::Underdamped, 2.0, 1.0).unwrap();
        let q = DMatrix::identity(2, 2);
        let law = sde_invariant(&model, &q).unwrap();
        assert!((law.cov.clone() - DMatrix::identity(4, 4)).norm() < 1e-14);

        let l = 5.0;
        let model = make_model(ModelKind::Underdamped, 2.0, 1.0 / l).unwrap();
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, l]));
        let law = sde_invariant(&model, &q).unwrap();
        assert_relative_eq!(law.cov[(0, 0)], 1.0 / l, max_relative = 1e-14);
        assert_relative_eq!(law.cov[(1, 1)], 1.0 / l, max_relative = 1e-14);
        assert_relative_eq!(law.cov[(2, 2)], 1.0, max_relative = 1e-14);
        assert_relative_eq!(law.cov[(3, 3)], 1.0 / l, max_relative = 1e-12);

        let model = make_model(ModelKind::Overdamped, 0.0, 1.0).unwrap();
        let q = DMatrix::from_element(1, 1, 2.0);
        let law = sde_invariant(&model, &q).unwrap();
        assert_relative_eq!(law.cov[(0, 0)], 0.5, max_relative = 1e-14);
    }

    #[test]
    fn lyapunov_residual_is_tiny() {
        let step = SchemeStep::new(Scheme::Ubu, 2.0, 0.2, 0.25).unwrap();
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 5.0]));
        let (m, n) = scheme_transition(&step, &q);
        let (_, residual) = lyapunov_doubling(&m, &n).unwrap();
        assert!(residual <= 1e-12, "residual {residual}");
    }

    #[test]
    fn invariant_bias_slopes_for_scalar_target() {
        let q = DMatrix::from_element(1, 1, 1.0);
        let model = make_model(ModelKind::Underdamped, 2.0, 1.0).unwrap();
        let exact = sde_invariant(&model, &q).unwrap();
        let hs = [0.2, 0.1, 0.05, 0.025];
        let mut gaps_ee = Vec::new();
        let mut gaps_ubu = Vec::new();
        for &h in &hs {
            let ee = SchemeStep::new(Scheme::Ee, 2.0, 1.0, h).unwrap();
            let num = numerical_invariant(&ee, &q).unwrap();
            gaps_ee.push(gaussian_w2(&num, &exact, None).unwrap().value);
            let ubu = SchemeStep::new(Scheme::Ubu, 2.0, 1.0, h).unwrap();
            let num = numerical_invariant(&ubu, &q).unwrap();
            gaps_ubu.push(gaussian_w2(&num, &exact, None).unwrap().value);
        }
        let slope_ee = linalg::log_log_slope(&hs, &gaps_ee);
        let slope_ubu = linalg::log_log_slope(&hs, &gaps_ubu);
        assert!((slope_ee - 1.0).abs() < 0.1, "EE slope {slope_ee}");
        assert!((slope_ubu - 2.0).abs() < 0.1, "UBU slope {slope_ubu}");
        // consistency: the gap itself vanishes as h -> 0
        assert!(gaps_ee.windows(2).all(|w| w[1] < w[0]));
        assert!(gaps_ubu.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn non_contractive_scheme_has_no_invariant() {
        // EM with h c lambda_max = 3 > 2 diverges
        let step = SchemeStep::new(Scheme::Em, 2.0, 1.0, 3.0).unwrap();
        let q = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            numerical_invariant(&step, &q),
            Err(Error::NoInvariant(_))
        ));
    }

    #[test]
    fn numerical_invariant_matches_long_simulation() {
        let q = DMatrix::from_element(1, 1, 2.0);
        let target = crate::targets::make_gaussian_target(&[2.0], None).unwrap();
        for (scheme, seed) in [(Scheme::Ubu, 2024), (Scheme::Bub, 2025), (Scheme::Ee, 2026)] {
            let step = SchemeStep::new(scheme, 2.0, 0.3, 0.25).unwrap();
            let law = numerical_invariant(&step, &q).unwrap();
            let n_chains = 4000u64;
            let ens = simulate(
                &step,
                &target,
                &InitialCondition::Point(ChainState::new(DVector::zeros(1), DVector::zeros(1))),
                400,
                n_chains,
                seed,
                None,
            )
            .unwrap();
            let xs: Vec<f64> = ens.final_states.iter().map(|s| s.x[0]).collect();
            let vs: Vec<f64> = ens.final_states.iter().map(|s| s.v[0]).collect();
            let nn = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / nn;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nn - 1.0);
            let sigma_xx = law.cov[(1, 1)];
            let se = sigma_xx * (2.0 / (nn - 1.0)).sqrt();
            assert!(
                (var - sigma_xx).abs() < 3.0 * se,
                "{scheme}: sample var {var} vs Lyapunov {sigma_xx} (3se = {})",
                3.0 * se
            );
            let mean_v = vs.iter().sum::<f64>() / nn;
            let var_v = vs.iter().map(|v| (v - mean_v) * (v - mean_v)).sum::<f64>() / (nn - 1.0);
            let sigma_vv = law.cov[(0, 0)];
            let se_v = sigma_vv * (2.0 / (nn - 1.0)).sqrt();
            assert!(
                (var_v - sigma_vv).abs() < 3.0 * se_v,
                "{scheme}: velocity var {var_v} vs Lyapunov {sigma_vv}"
            );
        }
    }

    #[test]
    fn invariant_law_is_rotation_equivariant() {
        // Sigma(R Q R^T) must equal blockdiag(R, R) Sigma(Q) blockdiag(R, R)^T
        let theta: f64 = 0.6;
        let r = DMatrix::from_row_slice(
            2,
            2,
            &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        );
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let q_rot = linalg::symmetrize(&(&r * &q * r.transpose()));
        for scheme in [Scheme::Ee, Scheme::Ubu, Scheme::Bub] {
            let step = SchemeStep::new(scheme, 2.0, 0.2, 0.3).unwrap();
            let plain = numerical_invariant(&step, &q).unwrap();
            let rotated = numerical_invariant(&step, &q_rot).unwrap();
            let mut lift = DMatrix::zeros(4, 4);
            lift.view_mut((0, 0), (2, 2)).copy_from(&r);
            lift.view_mut((2, 2), (2, 2)).copy_from(&r);
            let transported = &lift * &plain.cov * lift.transpose();
            assert!(
                (rotated.cov.clone() - transported).norm() <= 1e-11 * plain.cov.norm(),
                "{scheme}: invariant law is not rotation-equivariant"
            );
        }
    }

    #[test]
    fn result_json_includes_metric_and_method() {
        let metric = MetricP::canonical_underdamped();
        let g = law(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let shifted = law(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let result = gaussian_w2(&g, &shifted, Some(&metric)).unwrap();
        let json = result.to_json();
        assert_eq!(json["method"], "gaussian-closed-form");
        assert_eq!(json["metric"][0][1], 1.0);
        assert_eq!(json["metric"][1][1], 2.0);
        assert!(json["value"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn empirical_trivial_cases() {
        let a: Vec<DVector<f64>> = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])];
        assert_eq!(empirical_w2(&a, &a.clone(), None).unwrap().value, 0.0);
        let b: Vec<DVector<f64>> = vec![DVector::from_vec(vec![2.0]), DVector::from_vec(vec![3.0])];
        assert_relative_eq!(
            empirical_w2(&a, &b, None).unwrap().value,
            2.0,
            max_relative = 1e-14
        );
        assert!(empirical_w2(&a, &b[..1], None).is_err());

        // single-pair ensembles reduce to the point distance
        let p1 = vec![DVector::from_vec(vec![1.0, 2.0])];
        let p2 = vec![DVector::from_vec(vec![4.0, 6.0])];
        assert_relative_eq!(
            empirical_w2(&p1, &p2, None).unwrap().value,
            5.0,
            max_relative = 1e-14
        );
    }

    /// Independent exact assignment oracle (potential-based Hungarian),
    /// used to cross-check the production solver.
    fn hungarian_oracle(cost: &DMatrix<f64>) -> f64 {
        let n = cost.nrows();
        let mut u = vec![0.0f64; n + 1];
        let mut v = vec![0.0f64; n + 1];
        let mut p = vec![usize::MAX; n + 1];
        let mut way = vec![0usize; n + 1];
        for i in 0..n {
            p[0] = i;
            let mut j0 = 0usize;
            let mut minv = vec![f64::INFINITY; n + 1];
            let mut used = vec![false; n + 1];
            loop {
                used[j0] = true;
                let i0 = p[j0];
                let mut delta = f64::INFINITY;
                let mut j1 = 0;
                for j in 1..=n {
                    if !used[j] {
                        let cur = cost[(i0, j - 1)] - u[i0 + 1] - v[j];
                        if cur < minv[j] {
                            minv[j] = cur;
                            way[j] = j0;
                        }
                        if minv[j] < delta {
                            delta = minv[j];
                            j1 = j;
                        }
                    }
                }
                for j in 0..=n {
                    if used[j] {
                        if p[j] != usize::MAX {
                            u[p[j] + 1] += delta;
                        }
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if p[j0] == usize::MAX {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                p[j0] = p[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        let mut total = 0.0;
        for j in 1..=n {
            total += cost[(p[j], j - 1)];
        }
        total
    }

    fn brute_force_assignment(cost: &DMatrix<f64>) -> f64 {
        fn recurse(
            cost: &DMatrix<f64>,
            row: usize,
            used: &mut Vec<bool>,
            acc: f64,
            best: &mut f64,
        ) {
            let n = cost.nrows();
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    recurse(cost, row + 1, used, acc + cost[(row, j)], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        recurse(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
        best
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..300 {
            let n = 2 + trial % 6;
            let cost = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 10.0);
            let (perm, total) = solve_assignment(&cost);
            let exact = brute_force_assignment(&cost);
            assert!((total - exact).abs() < 1e-9, "n={n}: {total} vs {exact}");
            // permutation validity
            let mut seen = vec![false; n];
            for &j in &perm {
                assert!(!seen[j]);
                seen[j] = true;
            }
        }
    }

    #[test]
    fn assignment_matches_independent_hungarian() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let n = 64;
            let cost = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
            let (_, total) = solve_assignment(&cost);
            let oracle = hungarian_oracle(&cost);
            assert!((total - oracle).abs() < 1e-8, "{total} vs {oracle}");
        }
    }

    #[test]
    fn empirical_w2_close_to_closed_form_at_desk_scale() {
        let n = 2048usize;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let g1 = law(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let g2 = law(&[2.0, -1.0], &[&[0.5, 0.1], &[0.1, 1.5]]);
        let chol2 = g2.cov.clone().cholesky().unwrap().l();
        let draw1 =
            |rng: &mut ChaCha8Rng| DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a: Vec<DVector<f64>> = (0..n).map(|_| draw1(&mut rng)).collect();
        let b: Vec<DVector<f64>> = (0..n)
            .map(|_| &g2.mean + &chol2 * draw1(&mut rng))
            .collect();
        let exact = gaussian_w2(&g1, &g2, None).unwrap().value;
        let emp = empirical_w2(&a, &b, None).unwrap().value;
        assert!(
            (emp - exact).abs() < 0.1 * exact,
            "empirical {emp} vs exact {exact}"
        );
    }

    #[test]
    fn empirical_w2_symmetry_and_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draw_ens = |rng: &mut ChaCha8Rng, shift: f64| -> Vec<DVector<f64>> {
            (0..24)
                .map(|_| DVector::from_fn(2, |_, _| shift + rng.sample::<f64, _>(StandardNormal)))
                .collect()
        };
        for _ in 0..10 {
            let a = draw_ens(&mut rng, 0.0);
            let b = draw_ens(&mut rng, 0.7);
            let c = draw_ens(&mut rng, -0.4);
            let ab = empirical_w2(&a, &b, None).unwrap().value;
            let ba = empirical_w2(&b, &a, None).unwrap().value;
            assert!((ab - ba).abs() <= 1e-10);
            let ac = empirical_w2(&a, &c, None).unwrap().value;
            let cb = empirical_w2(&c, &b, None).unwrap().value;
            assert!(ab <= ac + cb + 1e-10);
        }
    }

    #[test]
    fn assignment_cap_enforced_beyond_one_dimension() {
        let a: Vec<DVector<f64>> = (0..2049)
            .map(|i| DVector::from_vec(vec![i as f64, 0.0]))
            .collect();
        assert!(empirical_w2(&a, &a.clone(), None).is_err());
    }
}
