//! Command-line front end exposing the contraction, order, bias and
//! planning analyses as reproducible experiments with CSV/JSON outputs.
//!
//! Outputs are deterministic given the flags and seed; files are written in
//! one shot after the computation succeeds, so failed runs leave nothing
//! partial behind. `LANGEVIN_THREADS` caps internal parallelism.

use std::fmt::Write as _;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use langevin_core::bounds;
use langevin_core::contractivity::{
    self, eigencurves, format_mantissa_exponent, optimal_underdamped, rate_tables, CChoice, MetricP,
};
use langevin_core::integrators::{
    coupled_step, simulate, strong_order_test, ChainState, InitialCondition, Scheme, SchemeStep,
};
use langevin_core::noise::{chain_rng, sample_noise_block};
use langevin_core::state_space::{check_invariance_relations, make_model, HatModel, ModelKind};
use langevin_core::targets::{
    load_ridge_logistic_csv, make_gaussian_target, make_ridge_logistic_target, Target,
};
use langevin_core::wasserstein::{gaussian_w2, numerical_invariant, sde_invariant};
use langevin_core::Error;

#[derive(Parser)]
#[command(
    name = "langevin",
    about = "Contraction, bias and mixing-time analyses for Langevin sampling schemes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum SchemeArg {
    Em,
    Ee,
    Ubu,
    Bub,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::Em => Scheme::Em,
            SchemeArg::Ee => Scheme::Ee,
            SchemeArg::Ubu => Scheme::Ubu,
            SchemeArg::Bub => Scheme::Bub,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// `--m/--L/--kappa` handling: `--kappa` is shorthand for `L = kappa * m`
/// and conflicts with giving `--L` directly.
#[derive(Args, Debug)]
struct Conditioning {
    /// Strong-convexity constant m
    #[arg(long, default_value_t = 1.0)]
    m: f64,
    /// Smoothness constant L
    #[arg(long = "L", conflicts_with = "kappa")]
    l: Option<f64>,
    /// Condition number kappa (sets L = kappa * m)
    #[arg(long)]
    kappa: Option<f64>,
}

impl Conditioning {
    fn resolve(&self) -> Result<(f64, f64), Error> {
        let l = match (self.l, self.kappa) {
            (Some(l), _) => l,
            (None, Some(k)) => k * self.m,
            (None, None) => {
                return Err(Error::InvalidParameter("give either --L or --kappa".into()))
            }
        };
        Ok((self.m, l))
    }
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output file; stdout when omitted
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the algebraic invariance relations of a model
    CheckModel {
        /// Shipped model kind
        #[arg(long, value_enum, conflicts_with = "model")]
        kind: Option<ModelKindArg>,
        /// JSON model description to check instead of a shipped kind
        #[arg(long)]
        model: Option<std::path::PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        /// Force scale c (literal or 1/L-style; resolved against --m/--L)
        #[arg(long, default_value = "1")]
        c: String,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[command(flatten)]
        cond: OptionalConditioning,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Continuous (SDE) or discrete (per-step) contraction rate
    Rate {
        /// Compute the continuous rate lambda
        #[arg(long, conflicts_with = "discrete")]
        continuous: bool,
        /// Compute the discrete rate rho_h
        #[arg(long)]
        discrete: bool,
        /// Scheme for --discrete
        #[arg(long, value_enum, default_value_t = SchemeArg::Ubu)]
        scheme: SchemeArg,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        /// Force scale: literal, `1/L`, or `k/(L+m)`
        #[arg(long, default_value = "1/L")]
        c: String,
        /// Step size for --discrete
        #[arg(long, default_value_t = 0.5)]
        h: f64,
        #[command(flatten)]
        cond: Conditioning,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Rate table over (h, c-choice, scheme), one table per kappa
    Table1 {
        #[arg(long, value_delimiter = ',', required = true)]
        kappa: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        h: Vec<f64>,
        /// Force-scale choices, e.g. `1/L,2/(L+m),3/(L+m)`
        #[arg(long, value_delimiter = ',', required = true)]
        c: Vec<String>,
        #[arg(long, value_delimiter = ',', value_enum, default_values_t = [SchemeArg::Ee, SchemeArg::Ubu])]
        schemes: Vec<SchemeArg>,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Eigencurve data (one CSV per step size, or one JSON document)
    Eigencurves {
        #[arg(long, value_enum, default_value_t = SchemeArg::Ubu)]
        scheme: SchemeArg,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        #[arg(long, required = true)]
        c: String,
        #[arg(long, value_delimiter = ',', required = true)]
        h: Vec<f64>,
        #[arg(long, default_value_t = 401)]
        grid: usize,
        #[command(flatten)]
        cond: Conditioning,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Numerically recover the optimal metric factor and force scale
    OptimalP {
        #[command(flatten)]
        cond: Conditioning,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Shared-path strong-order measurement
    OrderTest {
        #[arg(long, value_enum, default_value_t = SchemeArg::Ubu)]
        scheme: SchemeArg,
        /// Target: `gaussian:1,10`, `gaussian:lin:1,10,10`, or
        /// `logistic:data.csv:1.0`
        #[arg(long, required = true)]
        target: String,
        #[arg(long, default_value = "1/L")]
        c: String,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        h: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        paths: u64,
        #[arg(long, default_value_t = 2.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Invariant-bias scan: exact numerical invariant vs the SDE law
    BiasScan {
        #[arg(long, value_enum, default_value_t = SchemeArg::Ubu)]
        scheme: SchemeArg,
        /// Spectrum of the quadratic target: `1,2,5` or `lin:1,10,10`
        #[arg(long, required = true)]
        spectrum: String,
        #[arg(long, default_value = "1/L")]
        c: String,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        h: Vec<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Plan (h, n) to reach a target accuracy
    Plan {
        #[arg(long, value_enum, default_value_t = SchemeArg::Ubu)]
        scheme: SchemeArg,
        #[arg(long, required = true)]
        eps: f64,
        #[arg(long, required = true)]
        kappa: f64,
        #[arg(long, default_value_t = 1.0)]
        m: f64,
        #[arg(long, required = true)]
        d: usize,
        #[arg(long, required = true)]
        w0: f64,
        #[arg(long)]
        rbar: Option<f64>,
        #[arg(long)]
        h0: Option<f64>,
        /// Third-derivative bound (enables the order-2 UBU constants)
        #[arg(long)]
        l1: Option<f64>,
        /// Fraction of eps allotted to the bias term
        #[arg(long)]
        split: Option<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Simulate an independent ensemble and write the final states
    Sample {
        #[arg(long, value_enum, default_value_t = SchemeArg::Ubu)]
        scheme: SchemeArg,
        #[arg(long, required = true)]
        target: String,
        #[arg(long, default_value = "1/L")]
        c: String,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        #[arg(long, required = true)]
        h: f64,
        #[arg(long, required = true)]
        steps: u64,
        #[arg(long, default_value_t = 64)]
        chains: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Drive two coupled chains and record the per-step P-norm ratio
    Couple {
        #[arg(long, value_enum, default_value_t = SchemeArg::Ubu)]
        scheme: SchemeArg,
        #[arg(long, required = true)]
        target: String,
        #[arg(long, default_value = "1/L")]
        c: String,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        #[arg(long, required = true)]
        h: f64,
        #[arg(long, default_value_t = 1000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum ModelKindArg {
    Overdamped,
    Underdamped,
}

#[derive(Args, Debug)]
struct OptionalConditioning {
    #[arg(long)]
    m: Option<f64>,
    #[arg(long = "L", conflicts_with = "kappa")]
    l: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
}

fn resolve_c(text: &str, m: f64, l: f64) -> Result<f64, Error> {
    Ok(CChoice::parse(text)?.value(m, l))
}

/// `gaussian:1,10`, `gaussian:lin:1,10,10`, or `logistic:file.csv:ridge`.
fn parse_target(spec: &str) -> Result<Target, Error> {
    let parts: Vec<&str> = spec.splitn(2, ':').collect();
    match parts.as_slice() {
        ["gaussian", rest] => {
            let spectrum = parse_spectrum(rest)?;
            make_gaussian_target(&spectrum, None)
        }
        ["logistic", rest] => {
            let (path, ridge) = rest.rsplit_once(':').ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "logistic target needs `logistic:<csv>:<ridge>`, got {spec:?}"
                ))
            })?;
            let ridge: f64 = ridge
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("cannot parse ridge {ridge:?}")))?;
            let (features, labels) = load_ridge_logistic_csv(path)?;
            make_ridge_logistic_target(&features, &labels, ridge)
        }
        _ => Err(Error::InvalidParameter(format!(
            "unknown target spec {spec:?} (expected gaussian:... or logistic:...)"
        ))),
    }
}

/// `1,2,5` (explicit) or `lin:m,L,d` (uniform grid including endpoints).
fn parse_spectrum(text: &str) -> Result<Vec<f64>, Error> {
    if let Some(rest) = text.strip_prefix("lin:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidParameter(format!(
                "lin spectrum needs `lin:m,L,d`, got {text:?}"
            )));
        }
        let lo: f64 = parts[0]
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad number {:?}", parts[0])))?;
        let hi: f64 = parts[1]
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad number {:?}", parts[1])))?;
        let d: usize = parts[2]
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad count {:?}", parts[2])))?;
        if d < 1 {
            return Err(Error::InvalidParameter("spectrum needs d >= 1".into()));
        }
        if d == 1 {
            return Ok(vec![lo]);
        }
        Ok((0..d)
            .map(|i| lo + (hi - lo) * i as f64 / (d - 1) as f64)
            .collect())
    } else {
        text.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("bad spectrum entry {s:?}")))
            })
            .collect()
    }
}

fn write_output(output: &OutputArgs, content: &str) -> Result<(), Error> {
    match &output.out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn json_pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::CheckModel {
            kind,
            model,
            gamma,
            c,
            tol,
            cond,
            output,
        } => {
            let model = match (kind, model) {
                (Some(k), None) => {
                    let (m, l) = (cond.m.unwrap_or(1.0), cond.l.or(cond.kappa).unwrap_or(1.0));
                    let c = resolve_c(&c, m, l)?;
                    match k {
                        ModelKindArg::Overdamped => make_model(ModelKind::Overdamped, 0.0, c)?,
                        ModelKindArg::Underdamped => make_model(ModelKind::Underdamped, gamma, c)?,
                    }
                }
                (None, Some(path)) => HatModel::from_json(&std::fs::read_to_string(path)?)?,
                _ => {
                    return Err(Error::InvalidParameter(
                        "give exactly one of --kind or --model".into(),
                    ))
                }
            };
            let report = check_invariance_relations(&model, tol);
            write_output(&output, &json_pretty(&serde_json::to_value(&report)?))
        }

        Command::Rate {
            continuous,
            discrete,
            scheme,
            gamma,
            c,
            h,
            cond,
            output,
        } => {
            if continuous == discrete {
                return Err(Error::InvalidParameter(
                    "give exactly one of --continuous or --discrete".into(),
                ));
            }
            let (m, l) = cond.resolve()?;
            let c = resolve_c(&c, m, l)?;
            let value = if continuous {
                let scheme: Scheme = scheme.into();
                let kind = if scheme.is_kinetic() {
                    ModelKind::Underdamped
                } else {
                    ModelKind::Overdamped
                };
                let model = make_model(kind, gamma, c)?;
                let metric = MetricP::canonical_for(scheme);
                let report = contractivity::continuous_rate(&metric, &model, m, l)?;
                serde_json::json!({
                    "kind": "continuous",
                    "lambda": report.rate,
                    "lambda_formatted": format_mantissa_exponent(report.rate),
                    "hessian_at_extremum": report.hessian_at_extremum,
                    "contractive": report.contractive,
                })
            } else {
                let scheme: Scheme = scheme.into();
                let step = SchemeStep::new(scheme, gamma, c, h)?;
                let metric = MetricP::canonical_for(scheme);
                let report = contractivity::discrete_rate(&metric, &step, m, l)?;
                serde_json::json!({
                    "kind": "discrete",
                    "scheme": scheme.to_string(),
                    "h": h,
                    "rho": report.rate,
                    "decay_per_h": report.decay_per_h,
                    "decay_formatted": report.decay_per_h.map(format_mantissa_exponent),
                    "hessian_at_extremum": report.hessian_at_extremum,
                    "contractive": report.contractive,
                })
            };
            write_output(&output, &json_pretty(&value))
        }

        Command::Table1 {
            kappa,
            h,
            c,
            schemes,
            gamma,
            output,
        } => {
            let choices: Vec<CChoice> = c
                .iter()
                .map(|s| CChoice::parse(s))
                .collect::<Result<_, _>>()?;
            let schemes: Vec<Scheme> = schemes.into_iter().map(Into::into).collect();
            let tables = rate_tables(&kappa, &choices, &h, &schemes, gamma)?;
            match output.format {
                Format::Csv => {
                    let mut content = String::new();
                    for table in &tables {
                        if tables.len() > 1 {
                            let _ = writeln!(content, "# kappa = {}", table.kappa);
                        }
                        content.push_str(&table.to_csv());
                    }
                    write_output(&output, &content)
                }
                Format::Json => {
                    let value: Vec<serde_json::Value> = tables
                        .iter()
                        .map(|t| {
                            serde_json::json!({
                                "kappa": t.kappa,
                                "gamma": t.gamma,
                                "h": t.step_sizes,
                                "columns": t
                                    .columns
                                    .iter()
                                    .map(|(c, s)| format!("{s} c={c}"))
                                    .collect::<Vec<_>>(),
                                "decay_per_h": t.cells,
                            })
                        })
                        .collect();
                    write_output(&output, &json_pretty(&serde_json::Value::Array(value)))
                }
            }
        }

        Command::Eigencurves {
            scheme,
            gamma,
            c,
            h,
            grid,
            cond,
            output,
        } => {
            let (m, l) = cond.resolve()?;
            let c = resolve_c(&c, m, l)?;
            let tables: Vec<_> = h
                .iter()
                .map(|&hh| eigencurves(scheme.into(), gamma, c, m, l, hh, grid))
                .collect::<Result<_, _>>()?;
            match output.format {
                Format::Csv => match &output.out {
                    None => {
                        let mut content = String::new();
                        for t in &tables {
                            let _ = writeln!(content, "# h = {}", t.step);
                            content.push_str(&t.to_csv());
                        }
                        write_output(&output, &content)
                    }
                    Some(path) => {
                        // one file per step size: suffix _h<value> before
                        // the extension
                        for t in &tables {
                            let stem = path
                                .file_stem()
                                .and_then(|s| s.to_str())
                                .unwrap_or("eigencurves");
                            let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
                            let name = format!("{stem}_h{}.{ext}", t.step);
                            let target = path.with_file_name(name);
                            std::fs::write(target, t.to_csv())?;
                        }
                        Ok(())
                    }
                },
                Format::Json => {
                    let value = serde_json::to_value(&tables)?;
                    write_output(&output, &json_pretty(&value))
                }
            }
        }

        Command::OptimalP { cond, output } => {
            let (m, l) = cond.resolve()?;
            let opt = optimal_underdamped(m, l)?;
            write_output(&output, &json_pretty(&serde_json::to_value(&opt)?))
        }

        Command::OrderTest {
            scheme,
            target,
            c,
            gamma,
            h,
            paths,
            horizon,
            seed,
            output,
        } => {
            let target = parse_target(&target)?;
            let c = resolve_c(&c, target.strong_convexity(), target.smoothness())?;
            let report =
                strong_order_test(scheme.into(), &target, gamma, c, &h, paths, horizon, seed)?;
            write_output(&output, &json_pretty(&serde_json::to_value(&report)?))
        }

        Command::BiasScan {
            scheme,
            spectrum,
            c,
            gamma,
            h,
            output,
        } => {
            let spectrum = parse_spectrum(&spectrum)?;
            let d = spectrum.len();
            let m = spectrum.iter().cloned().fold(f64::INFINITY, f64::min);
            let l = spectrum.iter().cloned().fold(0.0f64, f64::max);
            let c = resolve_c(&c, m, l)?;
            let scheme: Scheme = scheme.into();
            let q = DMatrix::from_diagonal(&DVector::from_row_slice(&spectrum));
            let kind = if scheme.is_kinetic() {
                ModelKind::Underdamped
            } else {
                ModelKind::Overdamped
            };
            let model = make_model(kind, gamma, c)?;
            let exact = sde_invariant(&model, &q)?;
            let mut rows = Vec::new();
            for &hh in &h {
                let step = SchemeStep::new(scheme, gamma, c, hh)?;
                let law = numerical_invariant(&step, &q)?;
                let full = gaussian_w2(&law, &exact, None)?.value;
                let x_marginal = if scheme.is_kinetic() {
                    gaussian_w2(&law.marginal(d, d), &exact.marginal(d, d), None)?.value
                } else {
                    full
                };
                rows.push((hh, full, x_marginal));
            }
            match output.format {
                Format::Csv => {
                    let mut content = String::from("h,w2_full_state,w2_x_marginal\n");
                    for (hh, full, xm) in &rows {
                        let _ = writeln!(content, "{hh},{full:.12e},{xm:.12e}");
                    }
                    write_output(&output, &content)
                }
                Format::Json => {
                    let hs: Vec<f64> = rows.iter().map(|r| r.0).collect();
                    let fulls: Vec<f64> = rows.iter().map(|r| r.1).collect();
                    let xs: Vec<f64> = rows.iter().map(|r| r.2).collect();
                    let value = serde_json::json!({
                        "scheme": scheme.to_string(),
                        "h": hs,
                        "w2_full_state": fulls,
                        "w2_x_marginal": xs,
                        "slope_full_state": langevin_core::linalg::log_log_slope(&hs, &fulls),
                        "slope_x_marginal": langevin_core::linalg::log_log_slope(&hs, &xs),
                    });
                    write_output(&output, &json_pretty(&value))
                }
            }
        }

        Command::Plan {
            scheme,
            eps,
            kappa,
            m,
            d,
            w0,
            rbar,
            h0,
            l1,
            split,
            output,
        } => {
            let plan = bounds::plan(scheme.into(), eps, kappa, m, d, w0, rbar, h0, l1, split)?;
            write_output(&output, &json_pretty(&serde_json::to_value(&plan)?))
        }

        Command::Sample {
            scheme,
            target,
            c,
            gamma,
            h,
            steps,
            chains,
            seed,
            output,
        } => {
            let target = parse_target(&target)?;
            let c = resolve_c(&c, target.strong_convexity(), target.smoothness())?;
            let scheme: Scheme = scheme.into();
            let step = SchemeStep::new(scheme, gamma, c, h)?;
            let d = target.dim();
            let init = if scheme.is_kinetic() {
                InitialCondition::Point(ChainState::new(DVector::zeros(d), DVector::zeros(d)))
            } else {
                InitialCondition::Point(ChainState::position_only(DVector::zeros(d)))
            };
            let ensemble = simulate(&step, &target, &init, steps, chains, seed, None)?;
            match output.format {
                Format::Csv => write_output(&output, &ensemble.to_csv()),
                Format::Json => {
                    let states: Vec<serde_json::Value> = ensemble
                        .final_states
                        .iter()
                        .enumerate()
                        .map(|(i, s)| {
                            serde_json::json!({
                                "chain": i,
                                "v": s.v.as_slice(),
                                "x": s.x.as_slice(),
                            })
                        })
                        .collect();
                    write_output(&output, &json_pretty(&serde_json::Value::Array(states)))
                }
            }
        }

        Command::Couple {
            scheme,
            target,
            c,
            gamma,
            h,
            steps,
            seed,
            output,
        } => {
            let target = parse_target(&target)?;
            let (m, l) = (target.strong_convexity(), target.smoothness());
            let c = resolve_c(&c, m, l)?;
            let scheme: Scheme = scheme.into();
            if !scheme.is_kinetic() {
                return Err(Error::InvalidParameter(
                    "coupled runs are for the kinetic schemes".into(),
                ));
            }
            let step = SchemeStep::new(scheme, gamma, c, h)?;
            let metric = MetricP::canonical_underdamped();
            let report = contractivity::discrete_rate(&metric, &step, m, l)?;
            let d = target.dim();
            let mut rng = chain_rng(seed, 0);
            let mut s1 = ChainState::new(DVector::zeros(d), DVector::zeros(d));
            // unit-P-norm initial separation so each recorded value is a
            // genuine per-step ratio
            let mut s2 = {
                let raw = DVector::from_element(2 * d, 1.0);
                let scale = 1.0 / metric.norm_squared(&raw).sqrt();
                ChainState::new(
                    DVector::from_element(d, scale),
                    DVector::from_element(d, scale),
                )
            };
            let mut ratios = Vec::with_capacity(steps as usize);
            for _ in 0..steps {
                let b1 = sample_noise_block(gamma, h / 2.0, d, &mut rng)?;
                let b2 = sample_noise_block(gamma, h / 2.0, d, &mut rng)?;
                let (n1, n2) = coupled_step(&step, &target, &s1, &s2, &b1, &b2)?;
                let mut diff: Vec<f64> = (n2.v.clone() - &n1.v).iter().copied().collect();
                diff.extend((n2.x.clone() - &n1.x).iter().copied());
                let dist = metric.norm_squared(&DVector::from_vec(diff)).sqrt();
                ratios.push(dist);
                // keep the separation at unit P-length so the per-step
                // ratio stays readable over long runs
                s1 = n1;
                if dist > 0.0 {
                    let mut v = s1.v.clone();
                    let mut x = s1.x.clone();
                    for i in 0..d {
                        v[i] += (n2.v[i] - s1.v[i]) / dist;
                        x[i] += (n2.x[i] - s1.x[i]) / dist;
                    }
                    s2 = ChainState::new(v, x);
                    s1.cached_grad = None;
                } else {
                    s2 = s1.clone();
                }
            }
            let max_ratio = ratios.iter().cloned().fold(0.0f64, f64::max);
            match output.format {
                Format::Csv => {
                    let mut content = String::from("step,p_norm_ratio\n");
                    for (i, r) in ratios.iter().enumerate() {
                        let _ = writeln!(content, "{i},{r:.12e}");
                    }
                    write_output(&output, &content)
                }
                Format::Json => {
                    let value = serde_json::json!({
                        "scheme": scheme.to_string(),
                        "h": h,
                        "rho": report.rate,
                        "sqrt_rho": report.rate.sqrt(),
                        "contractive": report.contractive,
                        "max_step_ratio": max_ratio,
                        "steps": steps,
                    });
                    write_output(&output, &json_pretty(&value))
                }
            }
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("LANGEVIN_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::InvalidParameter(_)
                | Error::InvalidTarget(_)
                | Error::InvalidMetric(_)
                | Error::DimensionMismatch(_) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
