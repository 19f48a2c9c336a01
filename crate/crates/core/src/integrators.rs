//! One-step maps for the EM, EE, UBU and BUB integrators with exactly
//! distributed Gaussian noise functionals, synchronous-coupling steps,
//! ensemble simulation, and the shared-path strong-order harness.
//!
//! Every kinetic step consumes two half-interval [`NoiseBlock`]s in a fixed
//! order. UBU evaluates the gradient at a point that involves the first
//! half-block only; EE combines both halves into full-step functionals;
//! BUB keeps the gradient of the current position cached in the chain state
//! so one new evaluation per step suffices.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{decay_e, integral_f, integral_g};
use crate::linalg;
use crate::noise::{aggregate_noise, chain_rng, sample_noise_block, NoiseBlock};
use crate::targets::Target;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Euler-Maruyama on the overdamped equation; position-only state.
    Em,
    /// Exponential Euler (left point) on the kinetic equation.
    Ee,
    /// Splitting: half OU-transport, full kick, half OU-transport.
    Ubu,
    /// Splitting: half kick, full OU-transport, half kick.
    Bub,
}

impl Scheme {
    pub fn is_kinetic(self) -> bool {
        !matches!(self, Scheme::Em)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::Em => "EM",
            Scheme::Ee => "EE",
            Scheme::Ubu => "UBU",
            Scheme::Bub => "BUB",
        };
        f.write_str(s)
    }
}

/// One integrator step: scheme tag, parameters, precomputed kernels, and the
/// per-step hat matrices used by the contraction analysis.
#[derive(Clone, Debug)]
pub struct SchemeStep {
    pub scheme: Scheme,
    pub gamma: f64,
    pub c: f64,
    pub h: f64,
    pub e_full: f64,
    pub f_full: f64,
    pub g_full: f64,
    pub e_half: f64,
    pub f_half: f64,
}

impl SchemeStep {
    /// `gamma` parameterizes the noise functionals for every scheme (EM only
    /// consumes the Brownian increments, so its dynamics do not depend on
    /// it). `c = 0` is allowed: it switches the force off, which is useful
    /// for diagnostics.
    pub fn new(scheme: Scheme, gamma: f64, c: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {h}"
            )));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "friction must be positive, got {gamma}"
            )));
        }
        if !(c >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "force scale must be nonnegative, got {c}"
            )));
        }
        Ok(Self {
            scheme,
            gamma,
            c,
            h,
            e_full: decay_e(gamma, h),
            f_full: integral_f(gamma, h),
            g_full: integral_g(gamma, h),
            e_half: decay_e(gamma, h / 2.0),
            f_half: integral_f(gamma, h / 2.0),
        })
    }

    /// Hat matrices `(A_h, B_h, C_h)` of the one-gradient-evaluation form,
    /// for the schemes that admit it. The propagator on a quadratic mode
    /// with curvature `H` is `A_h + H B_h C_h`.
    pub fn hat_matrices(&self) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let (e, f, g) = (self.e_full, self.f_full, self.g_full);
        let (eh, fh) = (self.e_half, self.f_half);
        let (c, h) = (self.c, self.h);
        match self.scheme {
            Scheme::Em => Some((
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, -h * c),
                DMatrix::from_element(1, 1, 1.0),
            )),
            Scheme::Ee => Some((
                DMatrix::from_row_slice(2, 2, &[e, 0.0, f, 1.0]),
                DMatrix::from_row_slice(2, 1, &[-c * f, -c * g]),
                DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            )),
            Scheme::Ubu => Some((
                DMatrix::from_row_slice(2, 2, &[e, 0.0, f, 1.0]),
                DMatrix::from_row_slice(2, 1, &[-h * c * eh, -h * c * fh]),
                DMatrix::from_row_slice(1, 2, &[fh, 1.0]),
            )),
            // BUB evaluates the gradient at two positions per step, so it
            // has no (A, B, C) factorization; see `propagator`.
            Scheme::Bub => None,
        }
    }

    /// Per-step linear map on one quadratic mode with curvature `H`.
    pub fn propagator(&self, hessian_eigenvalue: f64) -> DMatrix<f64> {
        let hh = hessian_eigenvalue;
        match self.scheme {
            Scheme::Bub => {
                let kick =
                    DMatrix::from_row_slice(2, 2, &[1.0, -(self.h / 2.0) * self.c * hh, 0.0, 1.0]);
                let transport =
                    DMatrix::from_row_slice(2, 2, &[self.e_full, 0.0, self.f_full, 1.0]);
                &kick * transport * &kick
            }
            _ => {
                let (a, b, c) = self.hat_matrices().expect("one-evaluation form");
                a + hh * b * c
            }
        }
    }
}

/// State of one chain: `(v, x)` for kinetic schemes, `x` alone for EM
/// (empty `v`). BUB carries the gradient at `x` between steps so each step
/// costs one fresh evaluation.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub v: DVector<f64>,
    pub x: DVector<f64>,
    pub step_index: u64,
    pub cached_grad: Option<DVector<f64>>,
}

impl ChainState {
    pub fn new(v: DVector<f64>, x: DVector<f64>) -> Self {
        Self {
            v,
            x,
            step_index: 0,
            cached_grad: None,
        }
    }

    pub fn position_only(x: DVector<f64>) -> Self {
        Self {
            v: DVector::zeros(0),
            x,
            step_index: 0,
            cached_grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|v| v.is_finite()) && self.x.iter().all(|v| v.is_finite())
    }
}

fn check_step_inputs(
    step: &SchemeStep,
    target: &Target,
    state: &ChainState,
    first: &NoiseBlock,
    second: &NoiseBlock,
) -> Result<()> {
    let d = target.dim();
    if state.x.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "state has dimension {}, target {}",
            state.x.len(),
            d
        )));
    }
    if step.scheme.is_kinetic() && state.v.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "velocity has dimension {}, target {}",
            state.v.len(),
            d
        )));
    }
    for b in [first, second] {
        if b.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "noise block has dimension {}, target {}",
                b.dim(),
                d
            )));
        }
        if (b.delta - step.h / 2.0).abs() > 1e-12 * step.h {
            return Err(Error::InvalidParameter(format!(
                "noise block covers {}, expected half-step {}",
                b.delta,
                step.h / 2.0
            )));
        }
    }
    Ok(())
}

/// Full-step functionals `(dW, I_E, I_F)` assembled from the two
/// half-blocks via the semigroup identities.
fn full_step_functionals(
    step: &SchemeStep,
    first: &NoiseBlock,
    second: &NoiseBlock,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let dw = &first.dw + &second.dw;
    let ie = step.e_half * &first.ie + &second.ie;
    let i_f = (&dw - &ie) / step.gamma;
    (dw, ie, i_f)
}

/// Advance one chain by one step of the scheme. Exactly one gradient
/// evaluation for EM, EE and UBU; BUB also uses one when its cache is warm
/// (two on the first step of a cold chain).
pub fn step(
    scheme_step: &SchemeStep,
    target: &Target,
    state: &ChainState,
    first: &NoiseBlock,
    second: &NoiseBlock,
) -> Result<ChainState> {
    check_step_inputs(scheme_step, target, state, first, second)?;
    let ss = scheme_step;
    let amp = (2.0 * ss.gamma * ss.c).sqrt();
    let next = match ss.scheme {
        Scheme::Em => {
            let g = target.gradient(&state.x);
            let x = &state.x - ss.h * ss.c * g + (2.0 * ss.c).sqrt() * (&first.dw + &second.dw);
            ChainState {
                v: DVector::zeros(0),
                x,
                step_index: state.step_index + 1,
                cached_grad: None,
            }
        }
        Scheme::Ee => {
            let (_, ie, i_f) = full_step_functionals(ss, first, second);
            let g = target.gradient(&state.x);
            let v = ss.e_full * &state.v - ss.f_full * ss.c * &g + amp * ie;
            let x = &state.x + ss.f_full * &state.v - ss.g_full * ss.c * &g + amp * i_f;
            ChainState {
                v,
                x,
                step_index: state.step_index + 1,
                cached_grad: None,
            }
        }
        Scheme::Ubu => {
            let (_, ie, i_f) = full_step_functionals(ss, first, second);
            let y = &state.x + ss.f_half * &state.v + amp * first.i_f();
            let g = target.gradient(&y);
            let v = ss.e_full * &state.v - ss.h * ss.e_half * ss.c * &g + amp * ie;
            let x = &state.x + ss.f_full * &state.v - ss.h * ss.f_half * ss.c * &g + amp * i_f;
            ChainState {
                v,
                x,
                step_index: state.step_index + 1,
                cached_grad: None,
            }
        }
        Scheme::Bub => {
            let (_, ie, i_f) = full_step_functionals(ss, first, second);
            let g0 = match &state.cached_grad {
                Some(g) => g.clone(),
                None => target.gradient(&state.x),
            };
            let v_kicked = &state.v - (ss.h / 2.0) * ss.c * g0;
            let v_mid = ss.e_full * &v_kicked + amp * ie;
            let x = &state.x + ss.f_full * &v_kicked + amp * i_f;
            let g1 = target.gradient(&x);
            let v = v_mid - (ss.h / 2.0) * ss.c * &g1;
            ChainState {
                v,
                x,
                step_index: state.step_index + 1,
                cached_grad: Some(g1),
            }
        }
    };
    Ok(next)
}

/// Exact flow of the OU-with-transport subsystem over the block's interval:
/// `v' = E v + amp I_E`, `x' = x + F v + amp I_F`.
pub fn transport_flow(c: f64, state: &ChainState, block: &NoiseBlock) -> ChainState {
    let gamma = block.gamma;
    let amp = (2.0 * gamma * c).sqrt();
    let e = decay_e(gamma, block.delta);
    let f = integral_f(gamma, block.delta);
    ChainState {
        v: e * &state.v + amp * &block.ie,
        x: &state.x + f * &state.v + amp * block.i_f(),
        step_index: state.step_index,
        cached_grad: None,
    }
}

/// Impulsive gradient kick over a nominal time `dt`: `v' = v - dt c grad f(x)`.
pub fn kick_flow(c: f64, dt: f64, target: &Target, state: &ChainState) -> ChainState {
    ChainState {
        v: &state.v - dt * c * target.gradient(&state.x),
        x: state.x.clone(),
        step_index: state.step_index,
        cached_grad: None,
    }
}

/// Advance two chains with identical noise functionals (synchronous
/// coupling).
pub fn coupled_step(
    scheme_step: &SchemeStep,
    target: &Target,
    state1: &ChainState,
    state2: &ChainState,
    first: &NoiseBlock,
    second: &NoiseBlock,
) -> Result<(ChainState, ChainState)> {
    if state1.x.len() != state2.x.len() || state1.v.len() != state2.v.len() {
        return Err(Error::DimensionMismatch(
            "coupled chains must share a state dimension".into(),
        ));
    }
    let a = step(scheme_step, target, state1, first, second)?;
    let b = step(scheme_step, target, state2, first, second)?;
    Ok((a, b))
}

/// Final states (and optionally a thinned trajectory) of an independent
/// ensemble.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub final_states: Vec<ChainState>,
    /// `(step index, state)` pairs per chain when thinning was requested.
    pub thinned: Option<Vec<Vec<(u64, ChainState)>>>,
}

impl Ensemble {
    /// One row per chain: `chain, v..., x...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(state) = self.final_states.first() {
            let mut header = vec!["chain".to_string()];
            header.extend((0..state.v.len()).map(|i| format!("v{i}")));
            header.extend((0..state.x.len()).map(|i| format!("x{i}")));
            out.push_str(&header.join(","));
            out.push('\n');
        }
        for (id, state) in self.final_states.iter().enumerate() {
            let mut row = vec![id.to_string()];
            row.extend(state.v.iter().map(|v| format!("{v:.17e}")));
            row.extend(state.x.iter().map(|v| format!("{v:.17e}")));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Initial condition for ensembles: a fixed point or a seeded sampler.
pub enum InitialCondition<'a> {
    Point(ChainState),
    Sample(&'a (dyn Fn(u64, &mut rand_chacha::ChaCha8Rng) -> ChainState + Sync)),
}

/// Run `n_chains` independent chains for `n_steps` steps. Chain `i` draws
/// from the stream `(seed, i)`; within a chain the consumption order is
/// (initial condition, then per step: first half-block, second half-block),
/// so results are reproducible regardless of thread scheduling.
pub fn simulate(
    scheme_step: &SchemeStep,
    target: &Target,
    initial: &InitialCondition,
    n_steps: u64,
    n_chains: u64,
    seed: u64,
    record_every: Option<u64>,
) -> Result<Ensemble> {
    let d = target.dim();
    let run_chain = |chain: u64| -> Result<(ChainState, Vec<(u64, ChainState)>)> {
        let mut rng = chain_rng(seed, chain);
        let mut state = match initial {
            InitialCondition::Point(s) => s.clone(),
            InitialCondition::Sample(f) => f(chain, &mut rng),
        };
        let mut trace = Vec::new();
        if let Some(k) = record_every {
            if k > 0 {
                trace.push((0, state.clone()));
            }
        }
        for n in 1..=n_steps {
            let b1 = sample_noise_block(scheme_step.gamma, scheme_step.h / 2.0, d, &mut rng)?;
            let b2 = sample_noise_block(scheme_step.gamma, scheme_step.h / 2.0, d, &mut rng)?;
            state = step(scheme_step, target, &state, &b1, &b2)?;
            if let Some(k) = record_every {
                if k > 0 && n % k == 0 {
                    trace.push((n, state.clone()));
                }
            }
        }
        Ok((state, trace))
    };
    let results: Result<Vec<_>> = (0..n_chains).into_par_iter().map(run_chain).collect();
    let results = results?;
    let mut final_states = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    for (state, trace) in results {
        final_states.push(state);
        traces.push(trace);
    }
    Ok(Ensemble {
        final_states,
        thinned: record_every.map(|_| traces),
    })
}

/// Result of a shared-path refinement study.
#[derive(Clone, Debug, serde::Serialize)]
pub struct StrongOrderReport {
    /// Step sizes, descending, as given.
    pub step_sizes: Vec<f64>,
    /// RMS endpoint error of each level against the finest simulated level
    /// (one refinement below the smallest listed step).
    pub rms_vs_reference: Vec<f64>,
    /// RMS endpoint error of each level against its own one-step refinement
    /// (`h` vs `h/2`); this is the level-stationary error whose log-log
    /// slope estimates the strong order.
    pub rms_refinement: Vec<f64>,
    /// Least-squares log-log slope of `rms_refinement` against `h`.
    pub slope: f64,
    /// Slope of `rms_vs_reference`; biased upward when the leading error
    /// term is strongly correlated across levels, reported for diagnostics.
    pub slope_vs_reference: f64,
    pub n_paths: u64,
    pub horizon: f64,
}

/// Shared-path strong-order measurement. All refinement levels of every
/// path are driven by the same fine noise functionals via
/// [`aggregate_noise`], so level differences measure pure discretization
/// error. The step list must be descending and nested by factors of two,
/// and the horizon must be an integer multiple of every step.
#[allow(clippy::too_many_arguments)]
pub fn strong_order_test(
    scheme: Scheme,
    target: &Target,
    gamma: f64,
    c: f64,
    step_sizes: &[f64],
    n_paths: u64,
    horizon: f64,
    seed: u64,
) -> Result<StrongOrderReport> {
    if step_sizes.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two step sizes".into(),
        ));
    }
    for pair in step_sizes.windows(2) {
        if (pair[0] - 2.0 * pair[1]).abs() > 1e-12 * pair[0] {
            return Err(Error::InvalidParameter(
                "step sizes must be descending and nested by factors of two".into(),
            ));
        }
    }
    let h_min = *step_sizes.last().unwrap();
    for &h in step_sizes {
        let steps = horizon / h;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "horizon {horizon} is not a multiple of step {h}"
            )));
        }
    }
    let d = target.dim();
    // one refinement below the finest listed step serves as the reference
    let levels: Vec<f64> = step_sizes.iter().copied().chain([h_min / 2.0]).collect();
    let delta0 = h_min / 4.0;
    let n_fine = (horizon / delta0).round() as usize;

    // initial x is drawn from the exact Gaussian invariant when the target
    // provides a precision matrix, otherwise at the 1/sqrt(m) scale
    let x_factor: Option<DMatrix<f64>> = target
        .precision()
        .map(|q| linalg::psd_sqrt(&q.clone().try_inverse().expect("precision invertible")));

    let run_path = |path: u64| -> Result<Vec<f64>> {
        let mut rng = chain_rng(seed, path);
        let z_v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z_x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v0 = c.sqrt() * z_v;
        let x0 = match &x_factor {
            Some(f) => f * z_x,
            None => z_x / target.strong_convexity().sqrt(),
        };
        let fine: Vec<NoiseBlock> = (0..n_fine)
            .map(|_| sample_noise_block(gamma, delta0, d, &mut rng))
            .collect::<Result<_>>()?;
        let mut endpoints = Vec::with_capacity(levels.len());
        for &h in &levels {
            let ss = SchemeStep::new(scheme, gamma, c, h)?;
            let k = ((h / 2.0) / delta0).round() as usize;
            let blocks: Vec<NoiseBlock> =
                fine.chunks(k).map(aggregate_noise).collect::<Result<_>>()?;
            let mut state = if scheme.is_kinetic() {
                ChainState::new(v0.clone(), x0.clone())
            } else {
                ChainState::position_only(x0.clone())
            };
            let n_steps = (horizon / h).round() as usize;
            for n in 0..n_steps {
                state = step(&ss, target, &state, &blocks[2 * n], &blocks[2 * n + 1])?;
            }
            let mut endpoint = state.v.as_slice().to_vec();
            endpoint.extend_from_slice(state.x.as_slice());
            endpoints.push(endpoint);
        }
        // squared errors: vs common reference (last level), then vs own refinement
        let mut sq = Vec::with_capacity(2 * step_sizes.len());
        let reference = endpoints.last().unwrap();
        for e in endpoints.iter().take(step_sizes.len()) {
            sq.push(
                e.iter()
                    .zip(reference)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum(),
            );
        }
        for (i, e) in endpoints.iter().take(step_sizes.len()).enumerate() {
            let finer = &endpoints[i + 1];
            sq.push(e.iter().zip(finer).map(|(a, b)| (a - b) * (a - b)).sum());
        }
        Ok(sq)
    };

    let total: Result<Vec<Vec<f64>>> = (0..n_paths).into_par_iter().map(run_path).collect();
    let total = total?;
    let k = step_sizes.len();
    let mut sums = vec![0.0; 2 * k];
    for row in &total {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    let rms: Vec<f64> = sums.iter().map(|s| (s / n_paths as f64).sqrt()).collect();
    let rms_vs_reference = rms[..k].to_vec();
    let rms_refinement = rms[k..].to_vec();
    Ok(StrongOrderReport {
        step_sizes: step_sizes.to_vec(),
        slope: linalg::log_log_slope(step_sizes, &rms_refinement),
        slope_vs_reference: linalg::log_log_slope(step_sizes, &rms_vs_reference),
        rms_vs_reference,
        rms_refinement,
        n_paths,
        horizon,
    })
}
