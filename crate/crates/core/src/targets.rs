//! Strongly log-concave potentials `f` with gradient oracles and the
//! smoothness constants `(m, L, L1)` the contraction and bound machinery
//! consumes.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

type ValueFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    Gaussian,
    RidgeLogistic,
    Custom,
}

/// An `m`-strongly-convex, `L`-smooth potential. Immutable after
/// construction; evaluation is safe from any number of threads.
#[derive(Clone)]
pub struct Target {
    dim: usize,
    m: f64,
    l: f64,
    l1: Option<f64>,
    kind: TargetKind,
    value: ValueFn,
    gradient: GradFn,
    /// Precision matrix, populated for Gaussian targets only.
    precision: Option<Arc<DMatrix<f64>>>,
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Target")
            .field("dim", &self.dim)
            .field("m", &self.m)
            .field("l", &self.l)
            .field("l1", &self.l1)
            .field("kind", &self.kind)
            .finish()
    }
}

impl Target {
    pub fn custom(
        dim: usize,
        m: f64,
        l: f64,
        l1: Option<f64>,
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(m > 0.0 && l >= m) {
            return Err(Error::InvalidTarget(format!(
                "need 0 < m <= L, got m={m}, L={l}"
            )));
        }
        Ok(Self {
            dim,
            m,
            l,
            l1,
            kind: TargetKind::Custom,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            precision: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn strong_convexity(&self) -> f64 {
        self.m
    }
    pub fn smoothness(&self) -> f64 {
        self.l
    }
    /// Third-derivative bound, when known.
    pub fn hessian_lipschitz(&self) -> Option<f64> {
        self.l1
    }
    pub fn condition_number(&self) -> f64 {
        self.l / self.m
    }
    pub fn kind(&self) -> TargetKind {
        self.kind
    }
    /// Precision matrix of a Gaussian target, `None` otherwise.
    pub fn precision(&self) -> Option<&DMatrix<f64>> {
        self.precision.as_deref()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }
}

/// Gaussian target `f(x) = x^T Q x / 2` with `Q` built from `spectrum`,
/// optionally conjugated by an orthogonal `rotation`. `m`/`L` are the
/// spectrum extremes and the third-derivative bound is exactly zero.
pub fn make_gaussian_target(spectrum: &[f64], rotation: Option<&DMatrix<f64>>) -> Result<Target> {
    if spectrum.is_empty() {
        return Err(Error::InvalidTarget("empty spectrum".into()));
    }
    if let Some(&bad) = spectrum.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::InvalidTarget(format!(
            "spectrum entries must be positive, got {bad}"
        )));
    }
    let d = spectrum.len();
    let diag = DMatrix::from_diagonal(&DVector::from_row_slice(spectrum));
    let q = match rotation {
        None => diag,
        Some(r) => {
            if r.nrows() != d || r.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "rotation is {}x{}, spectrum has length {d}",
                    r.nrows(),
                    r.ncols()
                )));
            }
            let defect = (r.transpose() * r - DMatrix::identity(d, d)).norm();
            if defect > 1e-10 {
                return Err(Error::InvalidTarget(format!(
                    "rotation is not orthogonal (||R^T R - I|| = {defect:.2e})"
                )));
            }
            linalg::symmetrize(&(r * diag * r.transpose()))
        }
    };
    let m = spectrum.iter().cloned().fold(f64::INFINITY, f64::min);
    let l = spectrum.iter().cloned().fold(0.0, f64::max);
    let q = Arc::new(q);
    let qv = Arc::clone(&q);
    let qg = Arc::clone(&q);
    Ok(Target {
        dim: d,
        m,
        l,
        l1: Some(0.0),
        kind: TargetKind::Gaussian,
        value: Arc::new(move |x| 0.5 * x.dot(&(&*qv * x))),
        gradient: Arc::new(move |x| &*qg * x),
        precision: Some(q),
    })
}

/// Ridge-regularized logistic potential
/// `f(x) = sum_i log(1 + exp(-y_i a_i^T x)) + ridge/2 ||x||^2`.
///
/// Constants: `m = ridge`; `L = ridge + lambda_max(A^T A)/4` (the logistic
/// second derivative is at most 1/4); `L1 = sum_i ||a_i||^3 / (6 sqrt(3))`
/// (the logistic third derivative is at most `1/(6 sqrt 3)`). Both bounds
/// are deliberately crude: safe constants are all the downstream analysis
/// needs.
pub fn make_ridge_logistic_target(
    features: &DMatrix<f64>,
    labels: &[f64],
    ridge: f64,
) -> Result<Target> {
    if !(ridge > 0.0) {
        return Err(Error::InvalidTarget(format!(
            "ridge must be positive, got {ridge}"
        )));
    }
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows vs {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidTarget("non-finite feature entry".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidTarget(format!(
            "labels must be +/-1, got {bad}"
        )));
    }
    let d = features.ncols();
    let gram = features.transpose() * features;
    let lam_max = linalg::symmetric_eigenvalues(&gram)
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(0.0);
    let l = ridge + 0.25 * lam_max;
    let cubic_sum: f64 = (0..features.nrows())
        .map(|i| features.row(i).norm().powi(3))
        .sum();
    let l1 = cubic_sum / (6.0 * 3.0f64.sqrt());

    let a = Arc::new(features.clone());
    let y = Arc::new(labels.to_vec());

    let av = Arc::clone(&a);
    let yv = Arc::clone(&y);
    let value = move |x: &DVector<f64>| -> f64 {
        let mut total = 0.5 * ridge * x.norm_squared();
        for i in 0..av.nrows() {
            let z = yv[i] * av.row(i).transpose().dot(x);
            // log(1 + exp(-z)) evaluated without overflow
            total += (-z).max(0.0) + (-z.abs()).exp().ln_1p();
        }
        total
    };
    let ag = Arc::clone(&a);
    let yg = Arc::clone(&y);
    let gradient = move |x: &DVector<f64>| -> DVector<f64> {
        let mut g = ridge * x;
        for i in 0..ag.nrows() {
            let ai = ag.row(i).transpose();
            let z = yg[i] * ai.dot(x);
            // sigma(-z) = 1 / (1 + exp(z)), computed from the stable side
            let s = if z >= 0.0 {
                let e = (-z).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + z.exp())
            };
            g -= yg[i] * s * ai;
        }
        g
    };

    Ok(Target {
        dim: d,
        m: ridge,
        l,
        l1: Some(l1),
        kind: TargetKind::RidgeLogistic,
        value: Arc::new(value),
        gradient: Arc::new(gradient),
        precision: None,
    })
}

/// Load a ridge-logistic dataset from CSV: one row per sample, features in
/// the leading columns and the +/-1 label in the last column.
pub fn load_ridge_logistic_csv(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::InvalidTarget(
                "each CSV row needs at least one feature and a label".into(),
            ));
        }
        let mut vals = Vec::with_capacity(record.len());
        for field in record.iter() {
            vals.push(
                field.parse::<f64>().map_err(|_| {
                    Error::InvalidTarget(format!("non-numeric CSV field {field:?}"))
                })?,
            );
        }
        let label = vals.pop().unwrap();
        if label != 1.0 && label != -1.0 {
            return Err(Error::InvalidTarget(format!(
                "label column must be +/-1, got {label}"
            )));
        }
        if let Some(first) = rows.first() {
            if vals.len() != first.len() {
                return Err(Error::InvalidTarget("ragged CSV rows".into()));
            }
        }
        rows.push(vals);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::InvalidTarget("empty CSV".into()));
    }
    let d = rows[0].len();
    let features = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    Ok((features, labels))
}

/// Outcome of randomized probing of the declared `(m, L)` constants.
#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub observed_m: f64,
    pub observed_l: f64,
    pub declared_m: f64,
    pub declared_l: f64,
    /// Pair achieving the smallest Rayleigh quotient.
    pub worst_low: (DVector<f64>, DVector<f64>),
    /// Pair achieving the largest Rayleigh quotient.
    pub worst_high: (DVector<f64>, DVector<f64>),
    pub samples: usize,
    pub tolerance: f64,
    /// True when `observed_m >= m - tol` and `observed_l <= L + tol`.
    pub declared_ok: bool,
}

/// Probe gradient monotonicity: the quotient
/// `<grad f(x) - grad f(y), x - y> / ||x - y||^2` must lie in `[m, L]`.
/// Report-only; a violation flips `declared_ok` instead of erroring.
pub fn probe_constants(
    target: &Target,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<ProbeReport> {
    if samples < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 probe samples, got {samples}"
        )));
    }
    let tol = 1e-8;
    let d = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |scale: f64, rng: &mut ChaCha8Rng| {
        DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
    };
    let mut best = (f64::INFINITY, DVector::zeros(d), DVector::zeros(d));
    let mut worst = (f64::NEG_INFINITY, DVector::zeros(d), DVector::zeros(d));
    for k in 0..samples {
        let x = draw(radius, &mut rng);
        // alternate far pairs with near pairs so both curvature scales probe
        let y = if k % 2 == 0 {
            draw(radius, &mut rng)
        } else {
            &x + draw(radius * 1e-3, &mut rng)
        };
        let diff = &x - &y;
        let ns = diff.norm_squared();
        if ns == 0.0 {
            continue;
        }
        let q = (target.gradient(&x) - target.gradient(&y)).dot(&diff) / ns;
        if q < best.0 {
            best = (q, x.clone(), y.clone());
        }
        if q > worst.0 {
            worst = (q, x, y);
        }
    }
    let declared_ok =
        best.0 >= target.strong_convexity() - tol && worst.0 <= target.smoothness() + tol;
    Ok(ProbeReport {
        observed_m: best.0,
        observed_l: worst.0,
        declared_m: target.strong_convexity(),
        declared_l: target.smoothness(),
        worst_low: (best.1, best.2),
        worst_high: (worst.1, worst.2),
        samples,
        tolerance: tol,
        declared_ok,
    })
}
