//! Compact ("hat") state-space form of the sampling SDEs
//!
//! ```text
//! d xi = A xi dt + B grad f(C xi) dt + sigma dW
//! ```
//!
//! with `A = Ahat (x) I_d` etc. All invariance and contraction analysis runs
//! on the small hat matrices; the Kronecker lift is never materialized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Overdamped,
    Underdamped,
    Custom,
}

/// Hat-matrix description of one SDE model. `s_quad` is the quadratic form
/// `S` in the invariant density `exp(-f(C xi) - xi^T S xi / 2)`.
#[derive(Clone, Debug)]
pub struct HatModel {
    pub kind: ModelKind,
    /// Friction; 0 for overdamped and custom models.
    pub gamma: f64,
    /// Force scale multiplying the gradient.
    pub force_scale: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c_out: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub s_quad: DMatrix<f64>,
}

impl HatModel {
    /// State dimension of the hat system (1 overdamped, 2 underdamped).
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Diffusion matrix `D = sigma sigma^T / 2`.
    pub fn diffusion(&self) -> DMatrix<f64> {
        0.5 * &self.sigma * self.sigma.transpose()
    }
}

/// The shipped models. Overdamped: `A=0, B=-c, C=1, sigma=sqrt(2c)`, with
/// `S = 0` (the target density is carried entirely by `f`; the marginal
/// condition is vacuous because `C` spans the state). Underdamped over
/// `xi = (v, x)`: `A = [[-gamma, 0], [1, 0]]`, `B = [-c; 0]`, `C = [0, 1]`,
/// `sigma = [sqrt(2 gamma c); 0]`, `S = diag(1/c, 0)`.
pub fn make_model(kind: ModelKind, gamma: f64, c: f64) -> Result<HatModel> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "force scale must be positive, got c={c}"
        )));
    }
    match kind {
        ModelKind::Overdamped => Ok(HatModel {
            kind,
            gamma: 0.0,
            force_scale: c,
            a: DMatrix::zeros(1, 1),
            b: DMatrix::from_element(1, 1, -c),
            c_out: DMatrix::from_element(1, 1, 1.0),
            sigma: DMatrix::from_element(1, 1, (2.0 * c).sqrt()),
            s_quad: DMatrix::zeros(1, 1),
        }),
        ModelKind::Underdamped => {
            if !(gamma > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "friction must be positive, got gamma={gamma}"
                )));
            }
            Ok(HatModel {
                kind,
                gamma,
                force_scale: c,
                a: DMatrix::from_row_slice(2, 2, &[-gamma, 0.0, 1.0, 0.0]),
                b: DMatrix::from_row_slice(2, 1, &[-c, 0.0]),
                c_out: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
                sigma: DMatrix::from_row_slice(2, 1, &[(2.0 * gamma * c).sqrt(), 0.0]),
                s_quad: DMatrix::from_row_slice(2, 2, &[1.0 / c, 0.0, 0.0, 0.0]),
            })
        }
        ModelKind::Custom => Err(Error::InvalidParameter(
            "custom models are built via build_from_skew or JSON".into(),
        )),
    }
}

/// Residuals of the four algebraic relations that certify
/// `exp(-f(C xi) - xi^T S xi / 2)` as an invariant density, plus the
/// marginal condition `S C^T = 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelationReport {
    /// |Tr(A + D S)|
    pub trace_residual: f64,
    /// ||C B + C D C^T||
    pub output_residual: f64,
    /// ||C A + B^T S + 2 C D S||
    pub cross_residual: f64,
    /// ||S A + A^T S + 2 S D S||
    pub quadratic_residual: f64,
    /// ||S C^T|| (marginal-on-x condition, reported separately)
    pub marginal_residual: f64,
    pub tolerance: f64,
    /// All four invariance relations within tolerance.
    pub relations_pass: bool,
    /// Marginal condition within tolerance.
    pub marginal_pass: bool,
    /// Both of the above.
    pub pass: bool,
}

pub fn check_invariance_relations(model: &HatModel, tolerance: f64) -> RelationReport {
    let d = model.diffusion();
    let a = &model.a;
    let c = &model.c_out;
    let b = &model.b;
    let s = &model.s_quad;

    let trace_residual = (a + &d * s).trace().abs();
    let output_residual = (c * b + c * &d * c.transpose()).norm();
    let cross_residual = (c * a + b.transpose() * s + 2.0 * c * &d * s).norm();
    let quadratic_residual = (s * a + a.transpose() * s + 2.0 * s * &d * s).norm();
    let marginal_residual = (s * c.transpose()).norm();

    let relations_pass = trace_residual <= tolerance
        && output_residual <= tolerance
        && cross_residual <= tolerance
        && quadratic_residual <= tolerance;
    let marginal_pass = marginal_residual <= tolerance;
    RelationReport {
        trace_residual,
        output_residual,
        cross_residual,
        quadratic_residual,
        marginal_residual,
        tolerance,
        relations_pass,
        marginal_pass,
        pass: relations_pass && marginal_pass,
    }
}

/// Build a model guaranteed to satisfy the invariance relations:
/// `A = -(D + R) S`, `B = -(D + R) C^T` with `R` skew-symmetric and
/// `D`, `S` positive semidefinite. The noise matrix is recovered as
/// `sigma = sqrt(2) D^{1/2}`, so `D = sigma sigma^T / 2` holds by
/// construction. The marginal condition `S C^T = 0` is not implied and
/// must be checked separately.
pub fn build_from_skew(
    d_diff: &DMatrix<f64>,
    r_skew: &DMatrix<f64>,
    s_quad: &DMatrix<f64>,
    c_out: &DMatrix<f64>,
) -> Result<HatModel> {
    let n = d_diff.nrows();
    if d_diff.ncols() != n
        || r_skew.nrows() != n
        || r_skew.ncols() != n
        || s_quad.nrows() != n
        || s_quad.ncols() != n
        || c_out.nrows() != 1
        || c_out.ncols() != n
    {
        return Err(Error::DimensionMismatch(
            "build_from_skew needs square NxN matrices and a 1xN output row".into(),
        ));
    }
    let scale = r_skew.norm().max(1.0);
    if (r_skew + r_skew.transpose()).norm() > 1e-12 * scale {
        return Err(Error::InvalidParameter("R is not skew-symmetric".into()));
    }
    if !linalg::is_psd(d_diff, 1e-10) {
        return Err(Error::InvalidParameter(
            "D is not positive semidefinite".into(),
        ));
    }
    if !linalg::is_psd(s_quad, 1e-10) {
        return Err(Error::InvalidParameter(
            "S is not positive semidefinite".into(),
        ));
    }
    let dr = d_diff + r_skew;
    let sigma = 2.0f64.sqrt() * linalg::psd_sqrt(d_diff);
    Ok(HatModel {
        kind: ModelKind::Custom,
        gamma: 0.0,
        force_scale: 1.0,
        a: -(&dr) * s_quad,
        b: -(&dr) * c_out.transpose(),
        c_out: c_out.clone(),
        sigma,
        s_quad: s_quad.clone(),
    })
}

/// JSON wire format for models: matrices as nested row-major arrays.
#[derive(Serialize, Deserialize)]
struct ModelJson {
    kind: ModelKind,
    gamma: f64,
    c: f64,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c_out: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    if nr == 0 {
        return Err(Error::InvalidParameter("empty matrix in JSON model".into()));
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::InvalidParameter(
            "ragged matrix in JSON model".into(),
        ));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl HatModel {
    pub fn to_json(&self) -> Result<String> {
        let json = ModelJson {
            kind: self.kind,
            gamma: self.gamma,
            c: self.force_scale,
            a: rows_of(&self.a),
            b: self.b.column(0).iter().copied().collect(),
            c_out: self.c_out.row(0).iter().copied().collect(),
            sigma: rows_of(&self.sigma),
            s: rows_of(&self.s_quad),
        };
        Ok(serde_json::to_string_pretty(&json)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let json: ModelJson = serde_json::from_str(text)?;
        let a = matrix_from_rows(&json.a)?;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidParameter("A must be square".into()));
        }
        if json.b.len() != n || json.c_out.len() != n {
            return Err(Error::DimensionMismatch(
                "B and C must have the state dimension".into(),
            ));
        }
        Ok(HatModel {
            kind: json.kind,
            gamma: json.gamma,
            force_scale: json.c,
            a,
            b: DMatrix::from_fn(n, 1, |i, _| json.b[i]),
            c_out: DMatrix::from_fn(1, n, |_, j| json.c_out[j]),
            sigma: matrix_from_rows(&json.sigma)?,
            s_quad: matrix_from_rows(&json.s)?,
        })
    }
}

/// Convenience used by tests and the skew property check: random PSD matrix
/// from a seeded factor.
pub fn random_psd(n: usize, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    use rand_distr::StandardNormal;
    let f = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let p = &f * f.transpose() / n as f64;
    linalg::symmetrize(&p)
}

/// Random skew-symmetric matrix.
pub fn random_skew(n: usize, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    use rand_distr::StandardNormal;
    let f = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    0.5 * (&f - f.transpose())
}

/// Random unit row vector.
pub fn random_row(n: usize, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    use rand_distr::StandardNormal;
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = &v / v.norm();
    DMatrix::from_fn(1, n, |_, j| v[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn overdamped_matrices() {
        let m = make_model(ModelKind::Overdamped, 0.0, 1.0).unwrap();
        assert_eq!(m.dim(), 1);
        assert_eq!(m.a[(0, 0)], 0.0);
        assert_eq!(m.b[(0, 0)], -1.0);
        assert_eq!(m.c_out[(0, 0)], 1.0);
        assert_relative_eq!(m.diffusion()[(0, 0)], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn underdamped_matrices() {
        let m = make_model(ModelKind::Underdamped, 2.0, 0.5).unwrap();
        assert_eq!(m.a, DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 1.0, 0.0]));
        assert_eq!(m.b, DMatrix::from_row_slice(2, 1, &[-0.5, 0.0]));
        let d = m.diffusion();
        assert_relative_eq!(d[(0, 0)], 1.0, max_relative = 1e-15);
        assert_eq!(d[(1, 1)], 0.0);
        assert_eq!(m.s_quad[(0, 0)], 2.0);
    }

    #[test]
    fn zero_force_scale_rejected() {
        assert!(make_model(ModelKind::Underdamped, 2.0, 0.0).is_err());
        assert!(make_model(ModelKind::Overdamped, 0.0, -1.0).is_err());
    }

    #[test]
    fn shipped_models_satisfy_relations() {
        for model in [
            make_model(ModelKind::Underdamped, 2.0, 0.25).unwrap(),
            make_model(ModelKind::Overdamped, 0.0, 1.0).unwrap(),
            make_model(ModelKind::Underdamped, 3.7, 1.9).unwrap(),
        ] {
            let report = check_invariance_relations(&model, 1e-12);
            assert!(report.pass, "{report:?}");
            assert!(report.trace_residual < 1e-14);
        }
    }

    #[test]
    fn perturbed_model_fails_trace_relation() {
        let mut m = make_model(ModelKind::Underdamped, 2.0, 0.25).unwrap();
        m.a[(0, 0)] = -2.1;
        let report = check_invariance_relations(&m, 1e-12);
        assert!(!report.pass);
        assert!(report.trace_residual > 0.05);
    }

    #[test]
    fn skew_zero_instance() {
        // rank-deficient D: the output row is annihilated, B = 0
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = DMatrix::zeros(2, 2);
        let s = d.clone();
        let c = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let m = build_from_skew(&d, &r, &s, &c).unwrap();
        assert!(
            (m.a.clone() - DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0])).norm() == 0.0
        );
        assert!(m.b.norm() == 0.0);
        assert!(check_invariance_relations(&m, 1e-12).relations_pass);

        // full-rank D = I: B picks up the output direction
        let d = DMatrix::identity(2, 2);
        let m = build_from_skew(&d, &r, &s, &c).unwrap();
        assert!((m.b.clone() - DMatrix::from_row_slice(2, 1, &[0.0, -1.0])).norm() == 0.0);
        assert!(check_invariance_relations(&m, 1e-12).relations_pass);
    }

    #[test]
    fn skew_recovers_underdamped() {
        let gamma = 2.0;
        let c = 0.5;
        let d = DMatrix::from_row_slice(2, 2, &[gamma * c, 0.0, 0.0, 0.0]);
        let r = DMatrix::from_row_slice(2, 2, &[0.0, c, -c, 0.0]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0 / c, 0.0, 0.0, 0.0]);
        let cr = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let m = build_from_skew(&d, &r, &s, &cr).unwrap();
        let reference = make_model(ModelKind::Underdamped, gamma, c).unwrap();
        assert!((m.a.clone() - reference.a).norm() < 1e-14);
        assert!((m.b.clone() - reference.b).norm() < 1e-14);
    }

    #[test]
    fn non_skew_rejected() {
        let d = DMatrix::identity(2, 2);
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let s = DMatrix::identity(2, 2);
        let c = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(build_from_skew(&d, &r, &s, &c).is_err());
    }

    #[test]
    fn randomized_skew_constructions_pass_relations() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let n = 1 + (trial % 4);
            let d = random_psd(n, &mut rng);
            let r = random_skew(n, &mut rng);
            let s = random_psd(n, &mut rng);
            let c = random_row(n, &mut rng);
            let m = build_from_skew(&d, &r, &s, &c).unwrap();
            let report = check_invariance_relations(&m, 1e-12);
            assert!(report.relations_pass, "trial {trial}: {report:?}");
            // D = sigma sigma^T / 2 by construction
            assert!((m.diffusion() - &d).norm() <= 1e-12 * (1.0 + d.norm()));
        }
    }

    #[test]
    fn json_round_trip() {
        let m = make_model(ModelKind::Underdamped, 2.0, 0.25).unwrap();
        let text = m.to_json().unwrap();
        let back = HatModel::from_json(&text).unwrap();
        assert_eq!(back.kind, ModelKind::Underdamped);
        assert_eq!(back.a, m.a);
        assert_eq!(back.sigma, m.sigma);
        assert_eq!(back.s_quad, m.s_quad);
        assert_eq!(back.force_scale, 0.25);
    }
}
