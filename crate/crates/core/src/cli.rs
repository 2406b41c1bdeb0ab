//! Command-line front end: `validate`, `run`, `kmin` and `batch`.
//!
//! Exit codes: 0 success, 1 assumption or validation failure, 2 numerical
//! failure at runtime.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{self, AnalyticKmin, CorollaryKmin, EmpiricalKmin, ErrorReport, KminConstants, GAMMA_TOL};
use crate::apps::{self, Arithmetic, NetSizeEstimate};
use crate::config::{App, BuiltScenario, ScenarioConfig};
use crate::error::{Error, Result};
use crate::graph::{GraphEvent, NodeId};
use crate::sim::{self, Coupling, TraceHeader};
use crate::spectral;
use crate::weights::{self, ValidationReport, WEIGHT_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "blendnet", version, about = "Multi-step coupling simulator and blended-dynamics analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KminMode {
    Analytic,
    Corollary,
    Empirical,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check graph assumptions, weights and the contraction certificate.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write report.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate and write traces, results and the error report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute K^min (all modes unless --mode is given).
    Kmin {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<KminMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several scenarios in parallel, one output directory each.
    Batch {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERICAL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub scenario_hash: String,
    pub nodes: usize,
    pub undirected: bool,
    pub strongly_connected: bool,
    pub primitive: bool,
    pub weights: Option<ValidationReport>,
    pub lambda2_mag: Option<f64>,
    pub lambda_n_mag: Option<f64>,
    pub gamma: Option<f64>,
    pub failures: Vec<String>,
}

impl ValidationSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Structural and certificate checks on the initial topology.
pub fn validate(built: &BuiltScenario) -> ValidationSummary {
    let g = &built.scenario.graph;
    let mut out = ValidationSummary {
        scenario_hash: built.hash.clone(),
        nodes: g.len(),
        undirected: g.is_undirected(),
        strongly_connected: g.is_strongly_connected(),
        primitive: g.is_primitive(true),
        weights: None,
        lambda2_mag: None,
        lambda_n_mag: None,
        gamma: None,
        failures: Vec::new(),
    };
    if !out.strongly_connected {
        out.failures
            .push("Assumption 2 violated: graph is not strongly connected".into());
        return out;
    }
    let w = match built.scenario.coupling.build(g) {
        Ok(w) => w,
        Err(e) => {
            out.failures.push(e.to_string());
            return out;
        }
    };
    let report = weights::validate(&w, g, WEIGHT_TOL);
    if !report.is_valid() {
        out.failures
            .push(format!("Assumption 1 / weight property violated: {:?}", report.violations));
    }
    out.weights = Some(report);
    let pair = match spectral::perron_pair_default(&w) {
        Ok(p) => p,
        Err(e) => {
            out.failures.push(e.to_string());
            return out;
        }
    };
    out.lambda2_mag = Some(pair.lambda2_mag);
    out.lambda_n_mag = Some(pair.lambda_n_mag);
    let dynamics = match built.scenario.family.build(g) {
        Ok(d) => d,
        Err(e) => {
            out.failures.push(e.to_string());
            return out;
        }
    };
    match sim::BlendedDynamics::new(dynamics, &pair).ok().and_then(|b| b.affine()) {
        Some(map) => match analysis::contraction_affine(&map.a, GAMMA_TOL) {
            Ok(c) => out.gamma = Some(c.gamma),
            Err(e) => out.failures.push(format!("Assumption 3 violated: {e}")),
        },
        None => out.failures.push("blended dynamics is not affine; no certificate".into()),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: i64,
    pub kind: &'static str,
    pub id: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "app", rename_all = "snake_case")]
pub enum AppResults {
    Netsize {
        network_size: usize,
        estimate: NetSizeEstimate,
    },
    Pagerank {
        scores: BTreeMap<NodeId, f64>,
        perron: BTreeMap<NodeId, f64>,
        max_abs_error: f64,
    },
    Degseq {
        truth: Vec<usize>,
        s_star: String,
        decoded: BTreeMap<NodeId, Vec<usize>>,
        all_correct: bool,
        exact: Option<ExactSummary>,
    },
    Custom {
        final_state: BTreeMap<NodeId, Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactSummary {
    pub blended_fixed_point: String,
    pub matches_s_star: bool,
    pub macro_fixed_point_gap: f64,
    pub decoded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario_hash: String,
    pub seed: u64,
    pub app: &'static str,
    pub coupling: weights::CouplingKind,
    pub steps_per_round: usize,
    pub horizon: i64,
    pub events_applied: Vec<EventRecord>,
    pub results: AppResults,
    pub errors: ErrorReport,
}

/// Everything `run` writes, as in-memory text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub trace_csv: String,
    pub blended_csv: String,
    pub lyapunov_csv: String,
    pub report_json: String,
}

impl RunArtifacts {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trace.csv"), &self.trace_csv)?;
        fs::write(dir.join("blended.csv"), &self.blended_csv)?;
        fs::write(dir.join("lyapunov.csv"), &self.lyapunov_csv)?;
        fs::write(dir.join("report.json"), &self.report_json)?;
        Ok(())
    }
}

fn app_results(built: &BuiltScenario, trace: &sim::SimulationTrace) -> Result<AppResults> {
    let last = trace.epochs.last().expect("at least one epoch");
    Ok(match &built.app {
        App::NetSize(_) => AppResults::Netsize {
            network_size: last.graph.len(),
            estimate: apps::netsize_estimate(trace, built.config.tail_fraction)?,
        },
        App::PageRank(_) => {
            let scores = apps::pagerank_scores(trace);
            // the dense-eigensolve Perron vector, normalised to sum 1
            let perron: BTreeMap<NodeId, f64> = last.graph.ids().into_iter().zip(last.pair.p.iter().copied()).collect();
            let max_abs_error = scores
                .iter()
                .map(|(id, v)| (v - perron[id]).abs())
                .fold(0.0, f64::max);
            AppResults::Pagerank {
                scores,
                perron,
                max_abs_error,
            }
        }
        App::DegSeq(cfg) => {
            let g = &last.graph;
            let truth = g.degree_sequence()?.as_slice().to_vec();
            let state = trace.final_state();
            let mut decoded = BTreeMap::new();
            for (i, id) in state.ids.iter().enumerate() {
                let seq = cfg
                    .decode(g, state.x[(i, 0)])
                    .map(|s| s.as_slice().to_vec())
                    .unwrap_or_default();
                decoded.insert(*id, seq);
            }
            let all_correct = decoded.values().all(|d| *d == truth);
            let exact = if cfg.arithmetic == Arithmetic::Exact {
                let Coupling::Average(theta) = built.scenario.coupling else {
                    return Err(Error::Config("exact degree-sequence mode needs average coupling".into()));
                };
                if !trace.events_applied.is_empty() {
                    return Err(Error::Config("exact degree-sequence mode does not support events".into()));
                }
                let init: Vec<f64> = g
                    .ids()
                    .iter()
                    .map(|id| built.scenario.initial.get(id).map_or(0.0, |v| v[0]))
                    .collect();
                let ex = apps::degseq_exact(
                    g,
                    cfg,
                    theta,
                    built.scenario.steps_per_round,
                    built.scenario.horizon as usize,
                    &init,
                )?;
                let s_star = num_rational::BigRational::from_integer(ex.s_star.clone().into());
                Some(ExactSummary {
                    blended_fixed_point: ex.blended_fixed_point.to_string(),
                    matches_s_star: ex.blended_fixed_point == s_star,
                    macro_fixed_point_gap: ex.fixed_point_gap(),
                    decoded: ex.decoded.as_slice().to_vec(),
                })
            } else {
                None
            };
            AppResults::Degseq {
                truth,
                s_star: cfg.fixed_point(g)?.to_string(),
                decoded,
                all_correct,
                exact,
            }
        }
        App::Custom(_) => {
            let state = trace.final_state();
            AppResults::Custom {
                final_state: state
                    .ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| (*id, state.x.row(i).iter().copied().collect()))
                    .collect(),
            }
        }
    })
}

/// Simulate a built scenario and render every artifact.
pub fn run(built: &BuiltScenario) -> Result<(RunReport, RunArtifacts)> {
    let trace = sim::simulate(&built.scenario)?;
    let certs = analysis::certify_affine_epochs(&trace, GAMMA_TOL)?;
    let errors = analysis::error_report(&trace, &certs, built.config.eps, built.config.tail_fraction)?;
    let results = app_results(built, &trace)?;
    let report = RunReport {
        scenario_hash: built.hash.clone(),
        seed: built.config.seed,
        app: built.app.name(),
        coupling: built.scenario.coupling.kind(),
        steps_per_round: built.scenario.steps_per_round,
        horizon: built.scenario.horizon,
        events_applied: trace
            .events_applied
            .iter()
            .map(|(t, e)| match e {
                GraphEvent::Join { id, .. } => EventRecord { t: *t, kind: "join", id: *id },
                GraphEvent::Leave { id } => EventRecord { t: *t, kind: "leave", id: *id },
            })
            .collect(),
        results,
        errors,
    };
    let header = TraceHeader {
        scenario_hash: built.hash.clone(),
        coupling: built.scenario.coupling.kind(),
        seed: built.config.seed,
    };
    let artifacts = RunArtifacts {
        trace_csv: trace.to_csv(&header),
        blended_csv: trace.blended_csv(),
        lyapunov_csv: report.errors.lyapunov_csv(),
        report_json: serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    };
    Ok((report, artifacts))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorollaryReport {
    pub result: CorollaryKmin,
    pub initial_radius: f64,
    /// `max_t ||F(t, x[t])||` on a run at the corollary `K`, a cross-check of `sup_f`.
    pub sup_f_sampled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KminReport {
    pub scenario_hash: String,
    pub eps: f64,
    pub constants: KminConstants,
    pub eta_threshold: f64,
    pub analytic: Option<AnalyticKmin>,
    pub corollary: Option<CorollaryReport>,
    pub empirical: Option<EmpiricalKmin>,
}

/// `K^min` in the requested modes, using the initial topology's constants.
pub fn kmin(built: &BuiltScenario, eps: f64, modes: &[KminMode]) -> Result<KminReport> {
    let sc = &built.scenario;
    let w = sc.coupling.build(&sc.graph)?;
    let pair = spectral::perron_pair_default(&w)?;
    let dec = spectral::decompose(&w, &pair)?;
    let dynamics = sc.family.build(&sc.graph)?;
    let map = sim::BlendedDynamics::new(dynamics.clone(), &pair)?
        .affine()
        .ok_or_else(|| Error::Config("blended dynamics is not affine".into()))?;
    let cert = analysis::contraction_affine(&map.a, GAMMA_TOL)?;
    let constants = KminConstants::new(&dec, &cert, &dynamics)?;
    let mut report = KminReport {
        scenario_hash: built.hash.clone(),
        eps,
        eta_threshold: constants.eta_threshold(),
        constants: constants.clone(),
        analytic: None,
        corollary: None,
        empirical: None,
    };
    for mode in modes {
        match mode {
            KminMode::Analytic => report.analytic = Some(analysis::kmin_analytic(&constants, eps)?),
            KminMode::Corollary => {
                let (eps0, delta) = analysis::corollary_radii(&dec, eps, constants.lipschitz, &cert)?;
                let sup_f = analysis::corollary_sup_f(&constants, &dec, &dynamics, built.initial_radius, eps0, delta);
                let result = analysis::kmin_corollary(&dec, eps, constants.lipschitz, &cert, sup_f)?;
                let trace = sim::simulate(&sc.with_steps(result.k))?;
                report.corollary = Some(CorollaryReport {
                    result,
                    initial_radius: built.initial_radius,
                    sup_f_sampled: analysis::sampled_sup_f(&trace)?,
                });
            }
            KminMode::Empirical => {
                report.empirical = Some(analysis::kmin_empirical(
                    sc,
                    eps,
                    built.config.tail_fraction,
                    built.config.k_max,
                )?)
            }
        }
    }
    Ok(report)
}

fn load(config: &Path, seed: Option<u64>) -> Result<BuiltScenario> {
    let (cfg, base) = ScenarioConfig::load(config)?;
    cfg.build(&base, seed)
}

fn output_dir(flag: Option<&Path>, built: &BuiltScenario, config: &Path) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    let base = config.parent().unwrap_or(Path::new("."));
    match &built.config.output.dir {
        Some(d) => base.join(d),
        None => base.join("blendnet-out"),
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn cmd_validate(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<i32> {
    let built = load(config, seed)?;
    let summary = validate(&built);
    let text = json(&summary);
    print!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("validation.json"), &text)?;
    }
    for f in &summary.failures {
        eprintln!("error: {f}");
    }
    Ok(if summary.passed() { EXIT_OK } else { EXIT_VALIDATION })
}

fn cmd_run(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<i32> {
    let built = load(config, seed)?;
    let summary = validate(&built);
    if !summary.passed() {
        for f in &summary.failures {
            eprintln!("error: {f}");
        }
        return Ok(EXIT_VALIDATION);
    }
    let (report, artifacts) = run(&built)?;
    let dir = output_dir(out, &built, config);
    artifacts.write(&dir)?;
    println!("{}", serde_json::to_string_pretty(&report.results).expect("serializable"));
    log::info!("wrote {}", dir.display());
    Ok(EXIT_OK)
}

fn cmd_kmin(config: &Path, eps: Option<f64>, mode: Option<KminMode>, seed: Option<u64>, out: Option<&Path>) -> Result<i32> {
    let built = load(config, seed)?;
    let eps = eps.unwrap_or(built.config.eps);
    let modes = match mode {
        Some(m) => vec![m],
        None => vec![KminMode::Analytic, KminMode::Corollary, KminMode::Empirical],
    };
    let report = kmin(&built, eps, &modes)?;
    let text = json(&report);
    print!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("kmin.json"), &text)?;
    }
    Ok(EXIT_OK)
}

fn cmd_batch(out: &Path, seed: Option<u64>, configs: &[PathBuf]) -> Result<i32> {
    let mut names: BTreeMap<String, usize> = BTreeMap::new();
    let jobs: Vec<(PathBuf, PathBuf)> = configs
        .iter()
        .map(|c| {
            let stem = c.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
            let n = names.entry(stem.clone()).or_insert(0);
            *n += 1;
            let dir = if *n == 1 { stem } else { format!("{stem}-{n}") };
            (c.clone(), out.join(dir))
        })
        .collect();
    let codes: Vec<i32> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(cfg, dir)| {
                s.spawn(move || match cmd_run(cfg, Some(dir), seed) {
                    Ok(code) => code,
                    Err(e) => {
                        eprintln!("error: {}: {e}", cfg.display());
                        exit_code(&e)
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or(EXIT_NUMERICAL)).collect()
    });
    Ok(codes.into_iter().max().unwrap_or(EXIT_OK))
}

/// Parse arguments, run the command and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter("BLENDNET_LOG")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Validate { config, seed, out } => cmd_validate(config, *seed, out.as_deref()),
        Command::Run { config, out, seed } => cmd_run(config, out.as_deref(), *seed),
        Command::Kmin {
            config,
            eps,
            mode,
            seed,
            out,
        } => cmd_kmin(config, *eps, *mode, *seed, out.as_deref()),
        Command::Batch { out, seed, configs } => cmd_batch(out, *seed, configs),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
