//! Online tracking loop, run configuration, and result files.
//!
//! A run starts from a random population at `t = 0`, runs `tau_t` MOEA/D
//! generations per environment, and at every change rebuilds the population
//! according to its [`Mode`]. Each environment's final population is
//! archived and scored against a sample of the true front.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmarks::{make_problem, DynamicProblem, EnvironmentSchedule, DEFAULT_NUM_VARS};
use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::generate::{self, GenerateConfig};
use crate::metrics::{self, MetricReport};
use crate::model::{self, Ablation, ModelParams, TrainConfig};
use crate::moead::{self, generate_weights, MoeadConfig, MoeadState, Population, WeightVectorSet};
use crate::rng::{self, streams};

/// Points sampled from the true front for IGD and the HV reference point.
pub const DEFAULT_PF_SAMPLES: usize = 500;
/// HV reference point is this multiple of the sampled front's nadir.
pub const HV_REFERENCE_SCALE: f64 = 1.1;
/// Sentinel detector: individuals re-evaluated per generation.
pub const SENTINELS: usize = 5;
pub const SENTINEL_TOLERANCE: f64 = 1e-9;

pub const ARCHIVE_MAGIC: &[u8; 8] = b"DBGENARC";
pub const ARCHIVE_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.csv";
pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "DBGEN_THREADS";

/// How the population is rebuilt at a change.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Dbgen,
    /// Fresh uniform random population.
    RestartBaseline,
    /// Re-evaluate the old population unchanged.
    InheritBaseline,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Dbgen, Mode::RestartBaseline, Mode::InheritBaseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dbgen => "dbgen",
            Mode::RestartBaseline => "restart_baseline",
            Mode::InheritBaseline => "inherit_baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "dbgen" => Ok(Mode::Dbgen),
            "restart_baseline" | "restart" => Ok(Mode::RestartBaseline),
            "inherit_baseline" | "inherit" => Ok(Mode::InheritBaseline),
            _ => Err(Error::Config(format!(
                "unknown mode `{s}` (expected dbgen, restart_baseline or inherit_baseline)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub num_vars: usize,
    pub schedule: EnvironmentSchedule,
    /// `None` picks 100 for two objectives and 150 for three.
    pub population_size: Option<usize>,
    pub seeds: Vec<u64>,
    pub generate: GenerateConfig,
    pub checkpoint: Option<PathBuf>,
    pub mode: Mode,
    /// Expected ablation of the checkpoint; `None` accepts whatever it was trained with.
    pub ablation: Option<Ablation>,
    pub optimizer: MoeadConfig,
    pub pf_samples: usize,
    pub sentinel_detection: bool,
    /// When false, wall-clock fields are written as zero so result files are
    /// byte-reproducible.
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "FDA1".into(),
            num_vars: DEFAULT_NUM_VARS,
            schedule: EnvironmentSchedule::default(),
            population_size: None,
            seeds: vec![0],
            generate: GenerateConfig::default(),
            checkpoint: None,
            mode: Mode::Dbgen,
            ablation: None,
            optimizer: MoeadConfig::default(),
            pf_samples: DEFAULT_PF_SAMPLES,
            sentinel_detection: false,
            record_timing: true,
        }
    }
}

impl RunConfig {
    pub fn population_size_for(&self, num_objectives: usize) -> usize {
        self.population_size
            .unwrap_or(if num_objectives >= 3 { 150 } else { 100 })
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring where the checkpoint lives.
    pub fn hash(&self) -> String {
        let canonical = Self {
            checkpoint: None,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        EnvironmentSchedule::new(
            self.schedule.severity,
            self.schedule.frequency,
            self.schedule.num_environments,
        )?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.pf_samples < 2 {
            return Err(Error::Config("pf_samples must be at least 2".into()));
        }
        Ok(())
    }
}

/// Whole configuration file: one table per pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub run: RunConfig,
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Diagnostics of one environmental change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeTelemetry {
    pub env: u64,
    pub t: f64,
    /// IGD of the old population re-evaluated at the new time.
    pub inherited_igd: f64,
    /// IGD of the rebuilt population before any evolution.
    pub generated_igd: f64,
    /// True evaluations charged to the new population.
    pub evaluations: u64,
    /// Window re-evaluations of the old population (dbgen only).
    pub window_evaluations: u64,
    pub gen_ms: f64,
    pub strategy: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchivedPopulation {
    pub env: u64,
    pub t: f64,
    pub population: Population,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub problem: String,
    pub schedule: EnvironmentSchedule,
    pub seed: u64,
    pub mode: Mode,
    pub population_size: usize,
    pub pf_samples: usize,
    pub config_hash: String,
    pub report: MetricReport,
    pub changes: Vec<ChangeTelemetry>,
    /// Optimizer-budget evaluations: initial population, every generation,
    /// and every rebuilt population.
    pub evaluations: u64,
    pub window_evaluations: u64,
    /// Evaluations made only to measure, never to optimize.
    pub diagnostic_evaluations: u64,
    pub wall_ms: f64,
    pub archive: Vec<ArchivedPopulation>,
}

impl RunResult {
    pub fn migd(&self) -> f64 {
        self.report.migd
    }

    pub fn mhv(&self) -> f64 {
        self.report.mhv
    }
}

struct Front {
    points: Vec<Vec<f64>>,
    reference: Vec<f64>,
}

fn front(problem: &DynamicProblem, t: f64, samples: usize) -> Result<Front> {
    let points = problem.sample_true_pf(t, samples)?;
    let reference = metrics::reference_point(&points, HV_REFERENCE_SCALE)?;
    Ok(Front { points, reference })
}

/// Check a model against a problem without evaluating anything.
pub fn check_model(problem: &DynamicProblem, params: &ModelParams, expected: Option<&Ablation>) -> Result<()> {
    let arch = &params.arch;
    if arch.num_vars != problem.num_vars() || arch.num_objectives != problem.num_objectives() {
        return Err(Error::Config(format!(
            "checkpoint is for D={} M={}, problem {} has D={} M={}",
            arch.num_vars,
            arch.num_objectives,
            problem.id(),
            problem.num_vars(),
            problem.num_objectives()
        )));
    }
    if let Some(ab) = expected {
        if *ab != arch.ablation {
            return Err(Error::Config(format!(
                "checkpoint was trained as `{}`, config expects `{}`",
                arch.ablation.label(),
                ab.label()
            )));
        }
    }
    Ok(())
}

/// One tracking run for one seed. All configuration errors surface before the
/// first evaluation.
pub fn run_tracking(cfg: &RunConfig, seed: u64, model: Option<&ModelParams>) -> Result<RunResult> {
    cfg.validate()?;
    let problem = make_problem(&cfg.problem, cfg.num_vars)?;
    let m = problem.num_objectives();
    let n = cfg.population_size_for(m);
    let weights = generate_weights(n, m, cfg.optimizer.neighborhood_size.min(n))?;
    let params = match cfg.mode {
        Mode::Dbgen => {
            let p = model.ok_or_else(|| Error::Config("dbgen mode needs a model checkpoint".into()))?;
            check_model(&problem, p, cfg.ablation.as_ref())?;
            cfg.generate.validate(n)?;
            if let Some(&d) = cfg.generate.masked_dims.iter().find(|&&d| d >= p.arch.coeff_dim()) {
                return Err(Error::Config(format!(
                    "mask dimension {d} out of range for {} coefficients",
                    p.arch.coeff_dim()
                )));
            }
            Some(p)
        }
        _ => None,
    };
    let schedule = cfg.schedule;
    let tau = u64::from(schedule.frequency);
    let started = Instant::now();

    let mut state = MoeadState::random(&problem, n, schedule.time_of_environment(0), rng::stream(seed, streams::OPTIMIZER));
    let mut evaluations = n as u64;
    let mut window_evaluations = 0u64;
    let mut diagnostic_evaluations = 0u64;
    let mut gen_rng = rng::stream(seed, streams::GENERATE);
    let mut igd = Vec::new();
    let mut hv = Vec::new();
    let mut refs = Vec::new();
    let mut changes = Vec::new();
    let mut archive = Vec::new();

    for env in 0..u64::from(schedule.num_environments) {
        let t = schedule.time_of_environment(env);
        let pf = front(&problem, t, cfg.pf_samples)?;
        for g in 0..tau {
            if env > 0 && g == 0 {
                let changed = if cfg.sentinel_detection {
                    diagnostic_evaluations += SENTINELS.min(n) as u64;
                    sentinel_detects(&problem, &state.population, t)
                } else {
                    true
                };
                if changed {
                    let c = rebuild(cfg, &problem, params, &weights, &mut state, &mut gen_rng, env, &pf)?;
                    evaluations += c.telemetry.evaluations;
                    window_evaluations += c.telemetry.window_evaluations;
                    diagnostic_evaluations += c.diagnostic;
                    log::debug!(
                        "env {env}: inherited IGD {:.4e}, generated IGD {:.4e}",
                        c.telemetry.inherited_igd,
                        c.telemetry.generated_igd
                    );
                    changes.push(c.telemetry);
                }
            } else if cfg.sentinel_detection && (env > 0 || g > 0) {
                diagnostic_evaluations += SENTINELS.min(n) as u64;
                if sentinel_detects(&problem, &state.population, t) {
                    log::warn!("sentinel flagged a change inside environment {env}");
                }
            }
            moead::step(&mut state, &problem, t, &weights, &cfg.optimizer);
            evaluations += n as u64;
        }
        let objs = &state.population.objectives;
        igd.push(metrics::igd(&pf.points, objs)?);
        hv.push(metrics::hv(objs, &pf.reference)?);
        refs.push(pf.reference);
        archive.push(ArchivedPopulation {
            env,
            t,
            population: state.population.clone(),
        });
    }
    debug_assert_eq!(evaluations, state.evaluations);

    Ok(RunResult {
        problem: problem.id().to_string(),
        schedule,
        seed,
        mode: cfg.mode,
        population_size: n,
        pf_samples: cfg.pf_samples,
        config_hash: cfg.hash(),
        report: MetricReport::new(igd, hv, refs)?,
        changes,
        evaluations,
        window_evaluations,
        diagnostic_evaluations,
        wall_ms: if cfg.record_timing { ms(started) } else { 0.0 },
        archive,
    })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn sentinel_detects(problem: &DynamicProblem, pop: &Population, t: f64) -> bool {
    pop.decisions
        .iter()
        .zip(&pop.objectives)
        .take(SENTINELS)
        .any(|(x, f)| {
            problem
                .evaluate_unchecked(x, t)
                .iter()
                .zip(f)
                .any(|(a, b)| (a - b).abs() > SENTINEL_TOLERANCE)
        })
}

struct Change {
    telemetry: ChangeTelemetry,
    diagnostic: u64,
}

#[allow(clippy::too_many_arguments)]
fn rebuild(
    cfg: &RunConfig,
    problem: &DynamicProblem,
    params: Option<&ModelParams>,
    weights: &WeightVectorSet,
    state: &mut MoeadState,
    rng: &mut rng::Rng,
    env: u64,
    pf: &Front,
) -> Result<Change> {
    let schedule = cfg.schedule;
    let t = schedule.time_of_environment(env);
    let n = weights.len();
    let m = problem.num_objectives();
    let start = Instant::now();
    let old = &state.population;
    let mut window_evaluations = 0;
    let mut diagnostic = 0;
    let (population, inherited, strategy) = match cfg.mode {
        Mode::Dbgen => {
            let params = params.expect("checked before the run");
            let w = params.arch.window_len;
            let times = generate::window_times(env, w, |e| schedule.time_of_environment(e));
            let windows = generate::trajectory_windows(problem, &old.decisions, &times);
            window_evaluations = (w * old.len()) as u64;
            // The newest window slot is the old population at the new time.
            let inherited = last_slot(&windows, m);
            let g = generate::reinitialize(old, &windows, params, weights, &cfg.generate, problem, t, rng)?;
            (g.population, inherited, cfg.generate.strategy.to_string())
        }
        Mode::RestartBaseline => {
            let fresh = Population::random(problem, n, t, rng);
            let inherited = Population::evaluated(problem, old.decisions.clone(), t).objectives;
            diagnostic = n as u64;
            (fresh, inherited, "restart".to_string())
        }
        Mode::InheritBaseline => {
            let p = Population::evaluated(problem, old.decisions.clone(), t);
            let inherited = p.objectives.clone();
            (p, inherited, "inherit".to_string())
        }
    };
    let gen_ms = if cfg.record_timing { ms(start) } else { 0.0 };
    let telemetry = ChangeTelemetry {
        env,
        t,
        inherited_igd: metrics::igd(&pf.points, &inherited)?,
        generated_igd: metrics::igd(&pf.points, &population.objectives)?,
        evaluations: population.len() as u64,
        window_evaluations,
        gen_ms,
        strategy,
    };
    state.evaluations += population.len() as u64;
    state.replace_population(population);
    Ok(Change { telemetry, diagnostic })
}

fn last_slot(windows: &Array2<f64>, m: usize) -> Vec<Vec<f64>> {
    let w = windows.ncols();
    windows
        .axis_iter(Axis(0))
        .map(|r| r.iter().skip(w - m).copied().collect())
        .collect()
}

/// Worker count from `DBGEN_THREADS`, else the available parallelism.
pub fn worker_count() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k > 0 => k,
            _ => {
                log::warn!("ignoring {THREADS_ENV}={v:?}");
                available
            }
        },
        Err(_) => available,
    }
}

/// Run every seed of `cfg`, `workers` at a time; results come back in seed order.
pub fn run_seeds(cfg: &RunConfig, model: Option<&ModelParams>, workers: usize) -> Result<Vec<RunResult>> {
    map_parallel(&cfg.seeds, workers, |&seed| run_tracking(cfg, seed, model))
}

/// Order-preserving parallel map over `items` with at most `workers` threads.
pub fn map_parallel<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:e}"))
}

/// Per-environment rows with the columns
/// `problem,n_t,tau_t,seed,env,igd,hv,inherited_igd,gen_ms`.
pub fn write_results_csv<W: Write>(results: &[RunResult], mut out: W) -> Result<()> {
    if let Some(r) = results.first() {
        writeln!(out, "# config_hash={}", r.config_hash)?;
    }
    writeln!(out, "problem,n_t,tau_t,seed,env,igd,hv,inherited_igd,gen_ms")?;
    for r in results {
        for (env, (i, h)) in r.report.per_environment_igd.iter().zip(&r.report.per_environment_hv).enumerate() {
            let change = r.changes.iter().find(|c| c.env == env as u64);
            writeln!(
                out,
                "{},{},{},{},{env},{i:e},{h:e},{},{}",
                r.problem,
                r.schedule.severity,
                r.schedule.frequency,
                r.seed,
                opt_num(change.map(|c| c.inherited_igd)),
                change.map_or_else(String::new, |c| format!("{:.3}", c.gen_ms)),
            )?;
        }
    }
    Ok(())
}

pub fn write_telemetry_csv<W: Write>(results: &[RunResult], mut out: W) -> Result<()> {
    if let Some(r) = results.first() {
        writeln!(out, "# config_hash={}", r.config_hash)?;
    }
    writeln!(
        out,
        "problem,seed,mode,env,t,inherited_igd,generated_igd,evaluations,window_evaluations,gen_ms,strategy"
    )?;
    for r in results {
        for c in &r.changes {
            writeln!(
                out,
                "{},{},{},{},{:e},{:e},{:e},{},{},{:.3},{}",
                r.problem,
                r.seed,
                r.mode,
                c.env,
                c.t,
                c.inherited_igd,
                c.generated_igd,
                c.evaluations,
                c.window_evaluations,
                c.gen_ms,
                c.strategy
            )?;
        }
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(results: &[RunResult], mut out: W) -> Result<()> {
    if let Some(r) = results.first() {
        writeln!(out, "# config_hash={}", r.config_hash)?;
    }
    writeln!(
        out,
        "problem,mode,seed,migd,mhv,evaluations,window_evaluations,diagnostic_evaluations,wall_ms"
    )?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{:e},{:e},{},{},{},{:.3}",
            r.problem,
            r.mode,
            r.seed,
            r.migd(),
            r.mhv(),
            r.evaluations,
            r.window_evaluations,
            r.diagnostic_evaluations,
            r.wall_ms
        )?;
    }
    Ok(())
}

pub fn archive_file_name(seed: u64) -> String {
    format!("archive-seed{seed}.bin")
}

/// Write the CSV files and one archive per seed into `dir`.
pub fn save_results(results: &[RunResult], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_results_csv(results, &mut buf)?;
    std::fs::write(dir.join(RESULTS_FILE), &buf)?;
    buf.clear();
    write_telemetry_csv(results, &mut buf)?;
    std::fs::write(dir.join(TELEMETRY_FILE), &buf)?;
    buf.clear();
    write_summary_csv(results, &mut buf)?;
    std::fs::write(dir.join(SUMMARY_FILE), &buf)?;
    for r in results {
        std::fs::write(dir.join(archive_file_name(r.seed)), Archive::from_result(r).to_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub problem: String,
    pub num_vars: usize,
    pub num_objectives: usize,
    pub population_size: usize,
    pub schedule: EnvironmentSchedule,
    pub seed: u64,
    pub mode: Mode,
    pub pf_samples: usize,
    pub config_hash: String,
}

/// Final populations of every environment.
///
/// ```text
/// magic "DBGENARC" | version u32 | header_len u64 | header JSON | count u64 |
/// count x { env u64, t f64, N x D decisions f64, N x M objectives f64 }
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub header: ArchiveHeader,
    pub entries: Vec<ArchivedPopulation>,
}

impl Archive {
    pub fn from_result(r: &RunResult) -> Self {
        let first = r.archive.first().map(|a| &a.population);
        Self {
            header: ArchiveHeader {
                problem: r.problem.clone(),
                num_vars: first.and_then(|p| p.decisions.first()).map_or(0, Vec::len),
                num_objectives: first.and_then(|p| p.objectives.first()).map_or(0, Vec::len),
                population_size: r.population_size,
                schedule: r.schedule,
                seed: r.seed,
                mode: r.mode,
                pf_samples: r.pf_samples,
                config_hash: r.config_hash.clone(),
            },
            entries: r.archive.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.env.to_le_bytes());
            out.extend_from_slice(&e.t.to_le_bytes());
            for v in e.population.decisions.iter().chain(&e.population.objectives).flatten() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |r: &str| Error::format("archive", r.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("unexpected end of data"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(8)? != ARCHIVE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != ARCHIVE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = usize::try_from(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")))
            .map_err(|_| bad("header length overflow"))?;
        let header: ArchiveHeader =
            serde_json::from_slice(take(hlen)?).map_err(|e| bad(&format!("header: {e}")))?;
        let (n, d, m) = (header.population_size, header.num_vars, header.num_objectives);
        let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let entry = n
            .checked_mul(d.checked_add(m).ok_or_else(|| bad("size overflow"))?)
            .and_then(|k| k.checked_mul(8))
            .and_then(|k| k.checked_add(16))
            .ok_or_else(|| bad("size overflow"))?;
        let remaining = (bytes.len() - 28 - hlen) as u128;
        if u128::from(count) * entry as u128 != remaining {
            return Err(bad("entry data does not match the header"));
        }
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let env = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
            let t = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
            let mut rows = |width: usize| -> Result<Vec<Vec<f64>>> {
                (0..n)
                    .map(|_| {
                        Ok(take(width * 8)?
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                            .collect())
                    })
                    .collect()
            };
            let decisions = rows(d)?;
            let objectives = rows(m)?;
            entries.push(ArchivedPopulation {
                env,
                t,
                population: Population { decisions, objectives },
            });
        }
        Ok(Self { header, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Recompute per-environment IGD/HV against fresh true-front samples.
    pub fn evaluate(&self) -> Result<MetricReport> {
        let problem = make_problem(&self.header.problem, self.header.num_vars)?;
        let mut igd = Vec::with_capacity(self.entries.len());
        let mut hv = Vec::with_capacity(self.entries.len());
        let mut refs = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let pf = front(&problem, e.t, self.header.pf_samples)?;
            igd.push(metrics::igd(&pf.points, &e.population.objectives)?);
            hv.push(metrics::hv(&e.population.objectives, &pf.reference)?);
            refs.push(pf.reference);
        }
        MetricReport::new(igd, hv, refs)
    }

    /// Largest deviation between stored objectives and a re-evaluation at the stored time.
    pub fn integrity_error(&self) -> Result<f64> {
        let problem = make_problem(&self.header.problem, self.header.num_vars)?;
        let mut worst = 0.0f64;
        for e in &self.entries {
            for (x, f) in e.population.decisions.iter().zip(&e.population.objectives) {
                for (a, b) in problem.evaluate(x, e.t)?.iter().zip(f) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// Per-environment latent means.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub env: u64,
    pub t: f64,
    pub a: Vec<f64>,
    pub z_struct: Vec<f64>,
}

/// Mean coefficients and structural embedding of encoded individuals.
pub fn latent_means(
    problem: &DynamicProblem,
    decisions: &[Vec<f64>],
    windows: &Array2<f64>,
    params: &ModelParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if decisions.is_empty() {
        return Err(Error::Empty("decisions"));
    }
    let x: Vec<f64> = decisions.iter().flat_map(|x| problem.normalize(x)).collect();
    let x = Array2::from_shape_vec((decisions.len(), problem.num_vars()), x)
        .map_err(|e| Error::Precondition(e.to_string()))?;
    let latent = model::encode(&x, windows, params)?;
    let mean = |m: &Array2<f64>| m.mean_axis(Axis(0)).expect("non-empty").to_vec();
    Ok((mean(&latent.a), mean(&latent.z_struct)))
}

/// Encode `samples_per_env` fixed random decisions at every environment's
/// window and average their latents. Decisions are shared across
/// environments, so rows differ only through the windows.
pub fn dump_latents(
    params: &ModelParams,
    problem: &DynamicProblem,
    schedule: &EnvironmentSchedule,
    samples_per_env: usize,
    seed: u64,
) -> Result<Vec<LatentRow>> {
    check_model(problem, params, None)?;
    if samples_per_env == 0 {
        return Err(Error::Config("samples_per_env must be positive".into()));
    }
    let mut rng = rng::stream(seed, streams::DATASET);
    let decisions: Vec<Vec<f64>> = (0..samples_per_env).map(|_| moead::random_decision(problem, &mut rng)).collect();
    (0..u64::from(schedule.num_environments))
        .map(|env| {
            let times = generate::window_times(env, params.arch.window_len, |e| schedule.time_of_environment(e));
            let windows = generate::trajectory_windows(problem, &decisions, &times);
            let (a, z_struct) = latent_means(problem, &decisions, &windows, params)?;
            Ok(LatentRow {
                env,
                t: schedule.time_of_environment(env),
                a,
                z_struct,
            })
        })
        .collect()
}

pub fn write_latents_csv<W: Write>(rows: &[LatentRow], mut out: W) -> Result<()> {
    let (ka, kz) = rows.first().map_or((0, 0), |r| (r.a.len(), r.z_struct.len()));
    let mut head = vec!["env".to_string(), "t".to_string()];
    head.extend((0..ka).map(|i| format!("a_{i}")));
    head.extend((0..kz).map(|i| format!("z_{i}")));
    writeln!(out, "{}", head.join(","))?;
    for r in rows {
        let vals: Vec<String> = r.a.iter().chain(&r.z_struct).map(|v| format!("{v:e}")).collect();
        writeln!(out, "{},{:e},{}", r.env, r.t, vals.join(","))?;
    }
    Ok(())
}

/// The five ablation variants, in a fixed order.
pub fn ablation_variants() -> Vec<(&'static str, Ablation)> {
    Ablation::NAMES
        .iter()
        .map(|&name| (name, Ablation::single(name).expect("known variant")))
        .collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn small(mode: Mode, envs: u32) -> RunConfig {
        RunConfig {
            schedule: EnvironmentSchedule::new(10, 3, envs).unwrap(),
            population_size: Some(20),
            mode,
            pf_samples: 50,
            record_timing: false,
            generate: GenerateConfig {
                n_cand: 200,
                ..GenerateConfig::default()
            },
            ..RunConfig::default()
        }
    }

    fn tiny_model(problem: &DynamicProblem) -> ModelParams {
        let arch = Architecture {
            hidden: 8,
            dict_size: 6,
            d_struct: 4,
            d_z: 3,
            ..Architecture::new(3, problem.num_objectives(), problem.num_vars(), 2)
        };
        ModelParams::init(arch, 5).unwrap()
    }

    #[test]
    fn single_environment_is_a_static_run() {
        let cfg = small(Mode::InheritBaseline, 1);
        let r = run_tracking(&cfg, 3, None).unwrap();
        assert!(r.changes.is_empty());
        assert_eq!(r.report.per_environment_igd.len(), 1);
        let problem = make_problem("FDA1", 10).unwrap();
        let w = generate_weights(20, 2, 20).unwrap();
        let mut s = MoeadState::random(&problem, 20, 0.0, rng::stream(3, streams::OPTIMIZER));
        for _ in 0..3 {
            moead::step(&mut s, &problem, 0.0, &w, &cfg.optimizer);
        }
        assert_eq!(r.archive[0].population, s.population);
    }

    #[test]
    fn archive_and_igd_shapes() {
        let r = run_tracking(&small(Mode::RestartBaseline, 4), 1, None).unwrap();
        assert_eq!(r.report.per_environment_igd.len(), 4);
        assert_eq!(r.archive.len(), 4);
        assert!(r.archive.iter().all(|a| a.population.len() == 20));
        assert_eq!(r.changes.len(), 3);
        let a = Archive::from_result(&r);
        assert!(a.integrity_error().unwrap() <= 1e-12);
    }

    #[test]
    fn budget_parity_across_modes() {
        let problem = make_problem("FDA1", 10).unwrap();
        let model = tiny_model(&problem);
        let runs: Vec<RunResult> = Mode::ALL
            .iter()
            .map(|&m| run_tracking(&small(m, 4), 2, Some(&model)).unwrap())
            .collect();
        let expected = 20 + 4 * 3 * 20 + 3 * 20;
        for r in &runs {
            assert_eq!(r.evaluations, expected as u64, "{}", r.mode);
            assert!(r.changes.iter().all(|c| c.evaluations == 20));
        }
        assert_eq!(runs[0].window_evaluations, 3 * 3 * 20);
        assert_eq!(runs[1].window_evaluations, 0);
    }

    #[test]
    fn inherited_igd_matches_inherit_baseline() {
        // Both modes are identical up to the first change.
        let problem = make_problem("FDA1", 10).unwrap();
        let model = tiny_model(&problem);
        let d = run_tracking(&small(Mode::Dbgen, 2), 4, Some(&model)).unwrap();
        let i = run_tracking(&small(Mode::InheritBaseline, 2), 4, None).unwrap();
        assert_eq!(d.changes[0].inherited_igd, i.changes[0].inherited_igd);
        assert_eq!(i.changes[0].inherited_igd, i.changes[0].generated_igd);
    }

    #[test]
    fn dbgen_without_model_is_a_config_error() {
        let e = run_tracking(&small(Mode::Dbgen, 2), 0, None).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn mismatched_checkpoint_is_rejected() {
        let other = make_problem("FDA1", 6).unwrap();
        let model = tiny_model(&other);
        let e = run_tracking(&small(Mode::Dbgen, 2), 0, Some(&model)).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let problem = make_problem("FDA1", 10).unwrap();
        let model = tiny_model(&problem);
        let mut cfg = small(Mode::Dbgen, 2);
        cfg.ablation = Some(Ablation::single("no_basis").unwrap());
        assert!(matches!(run_tracking(&cfg, 0, Some(&model)), Err(Error::Config(_))));
        cfg.ablation = None;
        cfg.generate.masked_dims = vec![6];
        assert!(matches!(run_tracking(&cfg, 0, Some(&model)), Err(Error::Config(_))));
    }

    #[test]
    fn archive_round_trip_and_eval() {
        let r = run_tracking(&small(Mode::InheritBaseline, 3), 7, None).unwrap();
        let a = Archive::from_result(&r);
        let bytes = a.to_bytes();
        let back = Archive::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        let report = back.evaluate().unwrap();
        assert_eq!(report, r.report);
        for cut in [0, 10, 30, bytes.len() - 1] {
            assert!(Archive::from_bytes(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(1);
        assert!(Archive::from_bytes(&extra).is_err());
    }

    #[test]
    fn runs_are_deterministic_and_parallel_order_is_stable() {
        let mut cfg = small(Mode::RestartBaseline, 3);
        cfg.seeds = vec![5, 1, 9];
        let a = run_seeds(&cfg, None, 1).unwrap();
        let b = run_seeds(&cfg, None, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![5, 1, 9]);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_results_csv(&a, &mut x).unwrap();
        write_results_csv(&b, &mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn results_csv_columns() {
        let r = run_tracking(&small(Mode::InheritBaseline, 2), 0, None).unwrap();
        let mut buf = Vec::new();
        write_results_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# config_hash="));
        assert_eq!(lines[1], "problem,n_t,tau_t,seed,env,igd,hv,inherited_igd,gen_ms");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].ends_with(",,"));
        assert_eq!(lines[3].split(',').count(), 9);
    }

    #[test]
    fn sentinel_detection_finds_schedule_changes() {
        let mut a = small(Mode::InheritBaseline, 3);
        let plain = run_tracking(&a, 2, None).unwrap();
        a.sentinel_detection = true;
        let detected = run_tracking(&a, 2, None).unwrap();
        assert_eq!(plain.report, detected.report);
        assert_eq!(detected.changes.len(), 2);
        assert_eq!(detected.diagnostic_evaluations, 5 * (3 * 3 - 1));
    }

    #[test]
    fn latent_rows_per_environment() {
        let problem = make_problem("FDA1", 10).unwrap();
        let model = tiny_model(&problem);
        let s = EnvironmentSchedule::new(10, 10, 4).unwrap();
        let rows = dump_latents(&model, &problem, &s, 16, 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows, dump_latents(&model, &problem, &s, 16, 1).unwrap());
        let mut rng = rng::stream(0, 0);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| moead::random_decision(&problem, &mut rng)).collect();
        let w = generate::trajectory_windows(&problem, &xs, &[0.1, 0.2, 0.3]);
        assert_eq!(latent_means(&problem, &xs, &w, &model).unwrap(), latent_means(&problem, &xs, &w, &model).unwrap());
    }

    #[test]
    fn five_ablation_variants() {
        let v = ablation_variants();
        assert_eq!(v.len(), 5);
        for (name, ab) in &v {
            assert_eq!(ab.label(), *name);
        }
    }

    #[test]
    fn config_file_parses_and_rejects_unknown_keys() {
        let cfg = AppConfig::parse(
            "[run]\nproblem = \"DF5\"\nmode = \"restart_baseline\"\nseeds = [1, 2]\n[run.schedule]\nseverity = 5\nfrequency = 10\nnum_environments = 20\n[run.generate]\nstrategy = \"all-point\"\n",
        )
        .unwrap();
        assert_eq!(cfg.run.problem, "DF5");
        assert_eq!(cfg.run.mode, Mode::RestartBaseline);
        assert_eq!(cfg.run.schedule.severity, 5);
        assert_eq!(cfg.run.generate.strategy, generate::Strategy::AllPoint);
        assert!(AppConfig::parse("[run]\nbogus = 1\n").is_err());
        assert_eq!(cfg.run.hash(), cfg.run.clone().hash());
        assert_ne!(cfg.run.hash(), RunConfig::default().hash());
    }

    #[test]
    fn mode_parsing() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("bogus".parse::<Mode>().is_err());
    }
}
