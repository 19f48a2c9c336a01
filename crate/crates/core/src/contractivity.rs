//! Contraction rates for the SDE and its discretizations, computed from
//! small generalized eigenvalue problems `Z(H) x = Lambda P x` swept over
//! the Hessian-eigenvalue interval `[m, L]`.
//!
//! The sweep uses a dense geometric grid (endpoints included) plus
//! golden-section refinement around the grid extremum; in every shipped
//! example the extremum sits at an interval endpoint, but the grid guards
//! against interior extrema.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrators::{Scheme, SchemeStep};
use crate::linalg;
use crate::state_space::HatModel;

/// Default H-grid density for rate sweeps.
pub const SWEEP_GRID: usize = 2048;

/// Weighting matrix `P` (hat-sized) for the `W_P` metric, with its
/// Cholesky factor and eigenvalue extremes.
#[derive(Clone, Debug)]
pub struct MetricP {
    p: DMatrix<f64>,
    l_factor: DMatrix<f64>,
    p_min: f64,
    p_max: f64,
}

impl MetricP {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::InvalidMetric("P must be square".into()));
        }
        if linalg::asymmetry(&p) > 1e-12 * p.norm().max(1.0) {
            return Err(Error::InvalidMetric("P must be symmetric".into()));
        }
        let sym = linalg::symmetrize(&p);
        let chol = sym
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidMetric("P must be positive definite".into()))?;
        let ev = linalg::symmetric_eigenvalues(&sym);
        Ok(Self {
            p: sym,
            l_factor: chol.l(),
            p_min: ev[0],
            p_max: *ev.last().unwrap(),
        })
    }

    /// The canonical kinetic choice `[[1, 1], [1, 2]]` over `(v, x)`.
    pub fn canonical_underdamped() -> Self {
        Self::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0])).unwrap()
    }

    /// The overdamped choice `P = 1`.
    pub fn canonical_overdamped() -> Self {
        Self::new(DMatrix::from_element(1, 1, 1.0)).unwrap()
    }

    /// Canonical metric matching a scheme's state layout.
    pub fn canonical_for(scheme: Scheme) -> Self {
        if scheme.is_kinetic() {
            Self::canonical_underdamped()
        } else {
            Self::canonical_overdamped()
        }
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }
    /// Lower-triangular factor with `P = L L^T`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l_factor
    }
    pub fn eigen_min(&self) -> f64 {
        self.p_min
    }
    pub fn eigen_max(&self) -> f64 {
        self.p_max
    }

    /// `alpha P` as a metric (used by scale-invariance checks).
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(alpha * &self.p)
    }

    /// `L^T (x) I_d` lifted to a full-state transform; `W_P` of two laws is
    /// the Euclidean `W_2` of the transformed laws.
    pub fn lift_factor_t(&self, d: usize) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            for j in 0..n {
                let val = self.l_factor[(j, i)]; // (L^T)_{ij}
                if val != 0.0 {
                    for k in 0..d {
                        out[(i * d + k, j * d + k)] = val;
                    }
                }
            }
        }
        out
    }

    /// Squared `P`-norm of a full state laid out as hat-blocks of length `d`.
    pub fn norm_squared(&self, xi: &nalgebra::DVector<f64>) -> f64 {
        let n = self.dim();
        assert_eq!(
            xi.len() % n,
            0,
            "state length must be a multiple of the hat size"
        );
        let d = xi.len() / n;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let pij = self.p[(i, j)];
                if pij != 0.0 {
                    for k in 0..d {
                        total += pij * xi[i * d + k] * xi[j * d + k];
                    }
                }
            }
        }
        total
    }
}

/// `Z(H) = -P (A + H B C) - (A + H B C)^T P` for the continuous model.
pub fn z_continuous(metric: &MetricP, model: &HatModel, hessian_eigenvalue: f64) -> DMatrix<f64> {
    let m = &model.a + hessian_eigenvalue * &model.b * &model.c_out;
    let pm = metric.matrix() * &m;
    linalg::symmetrize(&(-(&pm) - pm.transpose()))
}

/// Generalized eigenvalues of `Z x = Lambda P x`, ascending, via the
/// Cholesky reduction `L^{-1} Z L^{-T}` and a symmetric eigensolve.
pub fn generalized_eigenvalues(metric: &MetricP, z: &DMatrix<f64>) -> Vec<f64> {
    let l = metric.factor();
    // X = L^{-1} Z L^{-T}: solve L Y = Z, then L X^T = Y^T
    let y = l
        .clone()
        .solve_lower_triangular(z)
        .expect("factor invertible");
    let x = l
        .clone()
        .solve_lower_triangular(&y.transpose())
        .expect("factor invertible");
    linalg::symmetric_eigenvalues(&x)
}

/// Closed-form generalized eigenvalues for the 2x2 pencil
/// `det(Z - Lambda P) = 0`, ascending. Returns `None` for other sizes.
pub fn generalized_eigenvalues_quadratic(metric: &MetricP, z: &DMatrix<f64>) -> Option<[f64; 2]> {
    if z.nrows() != 2 || metric.dim() != 2 {
        return None;
    }
    let p = metric.matrix();
    let a = p[(0, 0)] * p[(1, 1)] - p[(0, 1)] * p[(1, 0)];
    let b = z[(0, 0)] * p[(1, 1)] + z[(1, 1)] * p[(0, 0)] - 2.0 * z[(0, 1)] * p[(0, 1)];
    let c = z[(0, 0)] * z[(1, 1)] - z[(0, 1)] * z[(1, 0)];
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    // the root nearest zero through the product of roots, so eigenvalues of
    // size 1/kappa keep full relative precision
    let q = if b >= 0.0 {
        0.5 * (b + disc)
    } else {
        0.5 * (b - disc)
    };
    let (r1, r2) = if q != 0.0 {
        (q / a, c / q)
    } else {
        ((b - disc) / (2.0 * a), (b + disc) / (2.0 * a))
    };
    Some([r1.min(r2), r1.max(r2)])
}

fn min_generalized_eigenvalue(metric: &MetricP, z: &DMatrix<f64>) -> f64 {
    if let Some([lo, _]) = generalized_eigenvalues_quadratic(metric, z) {
        lo
    } else {
        generalized_eigenvalues(metric, z)[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RateKind {
    Continuous,
    Discrete,
}

/// Result of a rate sweep. For continuous rates `rate` is the exponential
/// decay `lambda`; for discrete rates it is the per-step squared-distance
/// factor `rho_h`, with `decay_per_h = (1 - sqrt(rho_h)) / h` evaluated
/// through a cancellation-free path.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ContractivityReport {
    pub kind: RateKind,
    pub rate: f64,
    pub decay_per_h: Option<f64>,
    /// Hessian eigenvalue at which the extremum over `[m, L]` occurs.
    pub hessian_at_extremum: f64,
    pub contractive: bool,
    pub grid_points: usize,
    pub refine_iterations: usize,
}

struct Sweep {
    h_star: f64,
    value: f64,
    iterations: usize,
}

/// Extremum of `f` over `[lo, hi]`: geometric grid plus golden-section
/// refinement (in log space) around the grid extremum.
fn sweep_extremum(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, grid: usize, maximize: bool) -> Sweep {
    let better = |a: f64, b: f64| if maximize { a > b } else { a < b };
    if lo == hi {
        return Sweep {
            h_star: lo,
            value: f(lo),
            iterations: 0,
        };
    }
    let n = grid.max(2);
    let ratio = (hi / lo).ln();
    let mut best_idx = 0;
    let mut best_val = f64::NAN;
    let at = |i: usize| -> f64 {
        if i + 1 == n {
            hi
        } else {
            lo * (ratio * i as f64 / (n - 1) as f64).exp()
        }
    };
    for i in 0..n {
        let v = f(at(i));
        if i == 0 || better(v, best_val) {
            best_val = v;
            best_idx = i;
        }
    }
    // refine inside the bracket around the best grid point
    let mut a = at(best_idx.saturating_sub(1)).ln();
    let mut b = at((best_idx + 1).min(n - 1)).ln();
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut iterations = 0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = f(x1.exp());
    let mut f2 = f(x2.exp());
    while (b - a) > 1e-12 && iterations < 400 {
        if better(f1, f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1.exp());
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2.exp());
        }
        iterations += 1;
    }
    let (xr, fr) = if better(f1, f2) {
        (x1.exp(), f1)
    } else {
        (x2.exp(), f2)
    };
    if better(fr, best_val) {
        Sweep {
            h_star: xr,
            value: fr,
            iterations,
        }
    } else {
        Sweep {
            h_star: at(best_idx),
            value: best_val,
            iterations,
        }
    }
}

/// `lambda = inf_{H in [m, L]}` of the smallest generalized eigenvalue of
/// `Z(H) x = Lambda P x`; the SDE contracts in `W_P` iff `lambda > 0`.
pub fn continuous_rate(
    metric: &MetricP,
    model: &HatModel,
    m: f64,
    l: f64,
) -> Result<ContractivityReport> {
    if !(m > 0.0 && l >= m) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < m <= L, got m={m}, L={l}"
        )));
    }
    if metric.dim() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "metric is {}x{}, model state is {}",
            metric.dim(),
            metric.dim(),
            model.dim()
        )));
    }
    let f = |h_eig: f64| min_generalized_eigenvalue(metric, &z_continuous(metric, model, h_eig));
    let sweep = sweep_extremum(&f, m, l, SWEEP_GRID, false);
    Ok(ContractivityReport {
        kind: RateKind::Continuous,
        rate: sweep.value,
        decay_per_h: None,
        hessian_at_extremum: sweep.h_star,
        contractive: sweep.value > 0.0,
        grid_points: SWEEP_GRID,
        refine_iterations: sweep.iterations,
    })
}

/// Per-step propagator `M_h(H)` of the scheme on a quadratic mode.
pub fn discrete_propagator(scheme: &SchemeStep, hessian_eigenvalue: f64) -> DMatrix<f64> {
    scheme.propagator(hessian_eigenvalue)
}

/// `G = L^T M L^{-T}`; the generalized eigenvalues of `M^T P M` against `P`
/// are the squared singular values of `G`.
fn whitened_propagator(metric: &MetricP, m: &DMatrix<f64>) -> DMatrix<f64> {
    let l = metric.factor();
    // X = M L^{-T}: X L^T = M  <=>  L X^T = M^T
    let xt = l
        .clone()
        .solve_lower_triangular(&m.transpose())
        .expect("factor invertible");
    l.transpose() * xt.transpose()
}

/// `(rho, 1 - rho)` with the complement computed without cancellation
/// amplification; needed because Table-1-scale rates are `1 - rho ~ 1e-9`.
fn rho_and_complement(metric: &MetricP, m: &DMatrix<f64>) -> (f64, f64) {
    let g = whitened_propagator(metric, m);
    if g.nrows() == 1 {
        let v = g[(0, 0)];
        return (v * v, (1.0 - v) * (1.0 + v));
    }
    if g.nrows() == 2 {
        let a = g[(0, 0)] * g[(0, 0)] + g[(1, 0)] * g[(1, 0)];
        let b = g[(0, 0)] * g[(0, 1)] + g[(1, 0)] * g[(1, 1)];
        let d = g[(0, 1)] * g[(0, 1)] + g[(1, 1)] * g[(1, 1)];
        let half_t = 0.5 * (a + d);
        let s = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        return (half_t + s, (1.0 - half_t) - s);
    }
    let gram = g.transpose() * &g;
    let rho = *linalg::symmetric_eigenvalues(&gram).last().unwrap();
    (rho, 1.0 - rho)
}

/// `rho_h = sup_{H in [m, L]}` of the largest generalized eigenvalue of
/// `M^T P M x = R P x`. Non-contractive (`rho_h >= 1`) is a valid report,
/// with `decay_per_h = None`.
pub fn discrete_rate(
    metric: &MetricP,
    scheme: &SchemeStep,
    m: f64,
    l: f64,
) -> Result<ContractivityReport> {
    if !(m > 0.0 && l >= m) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < m <= L, got m={m}, L={l}"
        )));
    }
    let state_dim = scheme.propagator(m).nrows();
    if metric.dim() != state_dim {
        return Err(Error::DimensionMismatch(format!(
            "metric is {}x{}, scheme state is {}",
            metric.dim(),
            metric.dim(),
            state_dim
        )));
    }
    let f = |h_eig: f64| rho_and_complement(metric, &scheme.propagator(h_eig)).0;
    let sweep = sweep_extremum(&f, m, l, SWEEP_GRID, true);
    let (rho, complement) = rho_and_complement(metric, &scheme.propagator(sweep.h_star));
    let contractive = rho < 1.0;
    let decay = if contractive {
        // (1 - sqrt(rho)) / h = (1 - rho) / (h (1 + sqrt(rho)))
        Some(complement / (scheme.h * (1.0 + rho.sqrt())))
    } else {
        None
    };
    Ok(ContractivityReport {
        kind: RateKind::Discrete,
        rate: rho,
        decay_per_h: decay,
        hessian_at_extremum: sweep.h_star,
        contractive,
        grid_points: SWEEP_GRID,
        refine_iterations: sweep.iterations,
    })
}

/// Per-point diagnostic for eigencurve tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveFlag {
    Ok,
    /// The propagator's eigenvalue pair is complex; the split is by
    /// proximity of the modulus curves.
    ComplexPair,
    /// Some discrete eigenvalue exceeds one at this point.
    NonContractive,
}

/// Columns of one eigencurve plot: continuous eigenvalues paired with
/// `tilde Lambda = 2 (1 - sqrt(R)) / h` from the discrete problem. The `+`
/// label goes to the curve closest to the continuous `c H` branch.
#[derive(Clone, Debug, serde::Serialize)]
pub struct EigencurveTable {
    pub step: f64,
    pub hessian_grid: Vec<f64>,
    pub lambda_plus: Vec<f64>,
    pub lambda_minus: Vec<f64>,
    pub tilde_plus: Vec<f64>,
    pub tilde_minus: Vec<f64>,
    pub flags: Vec<CurveFlag>,
}

impl EigencurveTable {
    /// Maximum over the grid of the distance between a discrete curve and
    /// its continuous counterpart.
    pub fn max_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.hessian_grid.len() {
            worst = worst
                .max((self.tilde_plus[i] - self.lambda_plus[i]).abs())
                .max((self.tilde_minus[i] - self.lambda_minus[i]).abs());
        }
        worst
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("H,lambda_plus,lambda_minus,tilde_plus,tilde_minus,flag\n");
        for i in 0..self.hessian_grid.len() {
            let flag = match self.flags[i] {
                CurveFlag::Ok => "ok",
                CurveFlag::ComplexPair => "complex-pair",
                CurveFlag::NonContractive => "non-contractive",
            };
            out.push_str(&format!(
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}\n",
                self.hessian_grid[i],
                self.lambda_plus[i],
                self.lambda_minus[i],
                self.tilde_plus[i],
                self.tilde_minus[i],
                flag
            ));
        }
        out
    }
}

/// Sample both discrete eigencurves of a kinetic scheme on a uniform grid
/// over `[m, L]`, against the continuous eigenvalues of the matching SDE.
pub fn eigencurves(
    scheme: Scheme,
    gamma: f64,
    c: f64,
    m: f64,
    l: f64,
    h: f64,
    grid: usize,
) -> Result<EigencurveTable> {
    if grid < 2 {
        return Err(Error::InvalidParameter(
            "grid must have at least 2 points".into(),
        ));
    }
    if !scheme.is_kinetic() {
        return Err(Error::InvalidParameter(
            "eigencurves are defined for the kinetic schemes".into(),
        ));
    }
    if !(m > 0.0 && l >= m) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < m <= L, got m={m}, L={l}"
        )));
    }
    let metric = MetricP::canonical_underdamped();
    let step = SchemeStep::new(scheme, gamma, c, h)?;
    // continuous counterpart shares (gamma, c); c = 0 is allowed here for
    // the force-off diagnostic, where the continuous pair is {0, 2 gamma}
    let model = crate::state_space::HatModel {
        kind: crate::state_space::ModelKind::Underdamped,
        gamma,
        force_scale: c,
        a: DMatrix::from_row_slice(2, 2, &[-gamma, 0.0, 1.0, 0.0]),
        b: DMatrix::from_row_slice(2, 1, &[-c, 0.0]),
        c_out: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        sigma: DMatrix::from_row_slice(2, 1, &[(2.0 * gamma * c).sqrt(), 0.0]),
        s_quad: DMatrix::zeros(2, 2),
    };

    let n = grid;
    let mut table = EigencurveTable {
        step: h,
        hessian_grid: Vec::with_capacity(n),
        lambda_plus: Vec::with_capacity(n),
        lambda_minus: Vec::with_capacity(n),
        tilde_plus: Vec::with_capacity(n),
        tilde_minus: Vec::with_capacity(n),
        flags: Vec::with_capacity(n),
    };
    for i in 0..n {
        let h_eig = m + (l - m) * i as f64 / (n - 1) as f64;
        let [cont_lo, cont_hi] =
            generalized_eigenvalues_quadratic(&metric, &z_continuous(&metric, &model, h_eig))
                .expect("2x2 pencil");
        // continuous + branch: the eigenvalue closest to c H
        let target = c * h_eig;
        let (lam_p, lam_m) = if (cont_lo - target).abs() <= (cont_hi - target).abs() {
            (cont_lo, cont_hi)
        } else {
            (cont_hi, cont_lo)
        };

        let prop = step.propagator(h_eig);
        let g = whitened_propagator(&metric, &prop);
        let gram = g.transpose() * &g;
        let ev = linalg::symmetric_eigenvalues(&gram);
        let (r_lo, r_hi) = (ev[0].max(0.0), ev[1].max(0.0));
        let t_of = |r: f64| 2.0 / h * (1.0 - r.sqrt());
        let (t_lo, t_hi) = (t_of(r_lo), t_of(r_hi));
        let (tilde_p, tilde_m) = if (t_lo - lam_p).abs() <= (t_hi - lam_p).abs() {
            (t_lo, t_hi)
        } else {
            (t_hi, t_lo)
        };
        // eigenvalues of the propagator itself, for the complex-pair flag
        let tr = prop[(0, 0)] + prop[(1, 1)];
        let det = prop[(0, 0)] * prop[(1, 1)] - prop[(0, 1)] * prop[(1, 0)];
        let flag = if r_hi > 1.0 {
            CurveFlag::NonContractive
        } else if tr * tr - 4.0 * det < 0.0 {
            CurveFlag::ComplexPair
        } else {
            CurveFlag::Ok
        };
        table.hessian_grid.push(h_eig);
        table.lambda_plus.push(lam_p);
        table.lambda_minus.push(lam_m);
        table.tilde_plus.push(tilde_p);
        table.tilde_minus.push(tilde_m);
        table.flags.push(flag);
    }
    Ok(table)
}

/// Outcome of the decay-rate optimization over the metric factor and the
/// force scale.
#[derive(Clone, Debug, serde::Serialize)]
pub struct OptimalMetric {
    pub l21: f64,
    pub l22: f64,
    pub c: f64,
    pub lambda: f64,
    pub objective_evaluations: usize,
}

/// Numerically maximize the kinetic decay rate over the Cholesky factor
/// `[[1, 0], [l21, l22]]` of `P` and the force scale `c` (friction fixed at
/// 2 by time rescaling). For fixed `(l21, l22)` the optimal `c` centers the
/// interval `[c m, c L]` on the vertex of the endpoint parabola, so the
/// outer search is a smooth two-variable problem handled by Nelder-Mead
/// with restarts.
pub fn optimal_underdamped(m: f64, l: f64) -> Result<OptimalMetric> {
    if !(m > 0.0) || !(l > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need positive m, L; got {m}, {l}"
        )));
    }
    if m == l {
        return Err(Error::DegenerateCase(
            "m = L collapses the Hessian interval; every c < 4/L gives lambda = 2 - |2 - cL|"
                .into(),
        ));
    }
    if m > l {
        return Err(Error::InvalidParameter(format!(
            "need m < L, got m={m}, L={l}"
        )));
    }
    let evals = std::cell::Cell::new(0usize);
    let inner_c = |l21: f64, l22: f64| -> Option<f64> {
        let x = l22 * l22;
        if !(x > 0.0) {
            return None;
        }
        let a = x + 2.0 * l21 - l21 * l21;
        if !(a > 0.0) {
            return None;
        }
        Some(2.0 * a / (l + m))
    };
    let objective = |p: &[f64; 2]| -> f64 {
        evals.set(evals.get() + 1);
        let (l21, l22) = (p[0], p[1]);
        let x = l22 * l22;
        let c = match inner_c(l21, l22) {
            Some(c) => c,
            None => return f64::INFINITY,
        };
        let a = x + 2.0 * l21 - l21 * l21;
        let braces = |h_eig: f64| {
            let t = c * h_eig - a;
            t * t / x + 4.0 * (1.0 - l21) * (1.0 - l21)
        };
        braces(m).max(braces(l))
    };
    let mut best = nelder_mead_2d(&objective, [0.5, 0.5], 0.25);
    for scale in [1e-3, 1e-6] {
        best = nelder_mead_2d(&objective, best.0, scale);
    }
    let (point, value) = best;
    let c = inner_c(point[0], point[1])
        .ok_or_else(|| Error::InvalidParameter("optimizer left the feasible region".into()))?;
    Ok(OptimalMetric {
        l21: point[0],
        l22: point[1],
        c,
        lambda: 2.0 - value.sqrt(),
        objective_evaluations: evals.get(),
    })
}

/// Plain Nelder-Mead on two variables; returns (best point, best value).
fn nelder_mead_2d(f: &dyn Fn(&[f64; 2]) -> f64, start: [f64; 2], scale: f64) -> ([f64; 2], f64) {
    let mut pts = [
        start,
        [start[0] + scale, start[1]],
        [start[0], start[1] + scale],
    ];
    let mut vals = [f(&pts[0]), f(&pts[1]), f(&pts[2])];
    for _ in 0..800 {
        // order ascending
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        pts = [pts[idx[0]], pts[idx[1]], pts[idx[2]]];
        vals = [vals[idx[0]], vals[idx[1]], vals[idx[2]]];
        let spread = (pts[0][0] - pts[2][0])
            .abs()
            .max((pts[0][1] - pts[2][1]).abs());
        if (vals[2] - vals[0]).abs() <= 1e-15 * (vals[0].abs() + 1e-300) && spread < 1e-12 {
            break;
        }
        let centroid = [0.5 * (pts[0][0] + pts[1][0]), 0.5 * (pts[0][1] + pts[1][1])];
        let reflect = [
            centroid[0] + (centroid[0] - pts[2][0]),
            centroid[1] + (centroid[1] - pts[2][1]),
        ];
        let fr = f(&reflect);
        if fr < vals[0] {
            let expand = [
                centroid[0] + 2.0 * (centroid[0] - pts[2][0]),
                centroid[1] + 2.0 * (centroid[1] - pts[2][1]),
            ];
            let fe = f(&expand);
            if fe < fr {
                pts[2] = expand;
                vals[2] = fe;
            } else {
                pts[2] = reflect;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            pts[2] = reflect;
            vals[2] = fr;
        } else {
            let contract = [
                centroid[0] + 0.5 * (pts[2][0] - centroid[0]),
                centroid[1] + 0.5 * (pts[2][1] - centroid[1]),
            ];
            let fc = f(&contract);
            if fc < vals[2] {
                pts[2] = contract;
                vals[2] = fc;
            } else {
                for i in 1..3 {
                    pts[i] = [
                        pts[0][0] + 0.5 * (pts[i][0] - pts[0][0]),
                        pts[0][1] + 0.5 * (pts[i][1] - pts[0][1]),
                    ];
                    vals[i] = f(&pts[i]);
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..3 {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    (pts[best], vals[best])
}

/// Symbolic step-size-to-force-scale mapping used by rate tables so column
/// headers can mirror the conventional choices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CChoice {
    /// `c = k / L`.
    OverL(f64),
    /// `c = k / (L + m)`.
    OverLPlusM(f64),
    /// Fixed numeric value.
    Literal(f64),
}

impl CChoice {
    pub fn value(&self, m: f64, l: f64) -> f64 {
        match *self {
            CChoice::OverL(k) => k / l,
            CChoice::OverLPlusM(k) => k / (l + m),
            CChoice::Literal(v) => v,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim().replace(' ', "");
        if let Ok(v) = t.parse::<f64>() {
            return Ok(CChoice::Literal(v));
        }
        if let Some(num) = t.strip_suffix("/(L+m)") {
            let k = num
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("cannot parse c choice {text:?}")))?;
            return Ok(CChoice::OverLPlusM(k));
        }
        if let Some(num) = t.strip_suffix("/L") {
            let k = num
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("cannot parse c choice {text:?}")))?;
            return Ok(CChoice::OverL(k));
        }
        Err(Error::InvalidParameter(format!(
            "cannot parse c choice {text:?}"
        )))
    }
}

impl std::fmt::Display for CChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            CChoice::OverL(k) => {
                if k == 1.0 {
                    write!(f, "1/L")
                } else {
                    write!(f, "{k}/L")
                }
            }
            CChoice::OverLPlusM(k) => write!(f, "{k}/(L+m)"),
            CChoice::Literal(v) => write!(f, "{v}"),
        }
    }
}

/// One rate table: rows are step sizes, columns are (c-choice, scheme)
/// pairs, cells hold `(1 - sqrt(rho_h)) / h` or `None` when the scheme is
/// not contractive at that combination.
#[derive(Clone, Debug)]
pub struct RateTable {
    pub kappa: f64,
    pub gamma: f64,
    pub step_sizes: Vec<f64>,
    pub columns: Vec<(CChoice, Scheme)>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl RateTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h");
        for (choice, scheme) in &self.columns {
            out.push_str(&format!(",{scheme} c={choice}"));
        }
        out.push('\n');
        for (i, h) in self.step_sizes.iter().enumerate() {
            out.push_str(&format!("{h}"));
            for cell in &self.cells[i] {
                match cell {
                    Some(v) => out.push_str(&format!(",{}", format_mantissa_exponent(*v))),
                    None => out.push_str(",***"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Rate tables over `kappa` values with `m = 1`, `L = kappa`: one cell per
/// `(h, c-choice, scheme)`. Cells are computed in parallel.
pub fn rate_tables(
    kappas: &[f64],
    c_choices: &[CChoice],
    step_sizes: &[f64],
    schemes: &[Scheme],
    gamma: f64,
) -> Result<Vec<RateTable>> {
    let metric = MetricP::canonical_underdamped();
    kappas
        .iter()
        .map(|&kappa| {
            if !(kappa >= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "condition number must be >= 1, got {kappa}"
                )));
            }
            let m = 1.0;
            let l = kappa;
            let columns: Vec<(CChoice, Scheme)> = c_choices
                .iter()
                .flat_map(|&c| schemes.iter().map(move |&s| (c, s)))
                .collect();
            let jobs: Vec<(usize, usize)> = (0..step_sizes.len())
                .flat_map(|i| (0..columns.len()).map(move |j| (i, j)))
                .collect();
            type CellResults = Result<Vec<((usize, usize), Option<f64>)>>;
            let results: CellResults = jobs
                .par_iter()
                .map(|&(i, j)| {
                    let (choice, scheme) = columns[j];
                    let c = choice.value(m, l);
                    let step = SchemeStep::new(scheme, gamma, c, step_sizes[i])?;
                    let report = discrete_rate(&metric, &step, m, l)?;
                    Ok(((i, j), report.decay_per_h))
                })
                .collect();
            let mut cells = vec![vec![None; columns.len()]; step_sizes.len()];
            for ((i, j), v) in results? {
                cells[i][j] = v;
            }
            Ok(RateTable {
                kappa,
                gamma,
                step_sizes: step_sizes.to_vec(),
                columns,
                cells,
            })
        })
        .collect()
}

/// Format with four significant digits in mantissa-exponent style, e.g.
/// `5.000(-10)`.
pub fn format_mantissa_exponent(v: f64) -> String {
    if v == 0.0 {
        return "0.000(0)".to_string();
    }
    let mut exp = v.abs().log10().floor() as i32;
    let mut mant = v / 10f64.powi(exp);
    if format!("{:.3}", mant.abs()).parse::<f64>().unwrap() >= 10.0 {
        mant /= 10.0;
        exp += 1;
    }
    format!("{mant:.3}({exp})")
}
