//! Offline corpus: tracking runs over training problems, recorded final
//! populations with lagging objective windows, and IGD-based triplet sets.
//!
//! Alignment: a record for environment `e` holds the final population member
//! of slot `k` (decision and objectives at `t_e`) together with the window of
//! the slot-`k` member that survived environment `e - 1`, evaluated at the
//! last `W` environments ending at `e`. This is exactly the context available
//! online when the population for `e` must be generated.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmarks::{make_problem, DynamicProblem, EnvironmentSchedule, ProblemClass};
use crate::error::{Error, Result};
use crate::generate::{trajectory_windows, window_times};
use crate::metrics::{igd_matrix, non_dominated_indices};
use crate::model::TrainingSet;
use crate::moead::{self, generate_weights, tchebycheff, MoeadConfig, MoeadState};
use crate::rng::{self, derive_seed, Rng};
use crate::wavelet::TrajectoryWindow;

pub const MAGIC: &[u8; 8] = b"DBGENDAT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub problems: Vec<String>,
    pub schedules: Vec<EnvironmentSchedule>,
    /// Independent runs per (problem, schedule).
    pub runs: usize,
    pub num_vars: usize,
    pub pop_size: usize,
    pub window_len: usize,
    pub seed: u64,
    pub optimizer: MoeadConfig,
    /// Re-randomize `reinit_fraction` of the population every `reinit_period` generations.
    pub periodic_reinit: bool,
    pub reinit_fraction: f64,
    pub reinit_period: u64,
    pub record_every_generation: bool,
    /// Permit test problems and training problems isomorphic to them.
    pub allow_contaminated: bool,
    pub triplet_k: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            problems: ["P64", "P67", "HE2", "DIMP2"].map(String::from).to_vec(),
            schedules: vec![EnvironmentSchedule::default()],
            runs: 1,
            num_vars: 10,
            pop_size: 100,
            window_len: 3,
            seed: 0,
            optimizer: MoeadConfig::default(),
            periodic_reinit: true,
            reinit_fraction: 0.1,
            reinit_period: 10,
            record_every_generation: true,
            allow_contaminated: false,
            triplet_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub x_norm: Vec<f64>,
    pub y: Vec<f64>,
    /// Flattened `W x M` window, oldest step first.
    pub window: Vec<f64>,
    /// Plain Tchebycheff value of `y` for the slot's weight (stored, unused by the model).
    pub tchebycheff: f64,
    pub label: usize,
    pub env_index: u64,
    /// Index into [`Dataset::envs`].
    pub global_env: usize,
    pub t_norm: f64,
}

impl TrainingRecord {
    pub fn window(&self, num_objectives: usize) -> Result<TrajectoryWindow> {
        let rows = self.window.len() / num_objectives.max(1);
        let m = Array2::from_shape_vec((rows, num_objectives), self.window.clone())
            .map_err(|e| Error::Precondition(e.to_string()))?;
        TrajectoryWindow::new(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub num_vars: usize,
    pub num_objectives: usize,
    pub window_len: usize,
    pub labels: Vec<String>,
    pub schedules: Vec<EnvironmentSchedule>,
}

impl DatasetHeader {
    /// Floats per record.
    pub fn record_width(&self) -> usize {
        5 + self.num_vars + self.num_objectives + self.window_len * self.num_objectives
    }
}

/// One environment of one tracking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvInfo {
    pub problem: String,
    pub label: usize,
    pub schedule: usize,
    pub run: usize,
    pub env_index: u64,
    pub t: f64,
    /// Final non-dominated objective vectors.
    pub front: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<TrainingRecord>,
    pub envs: Vec<EnvInfo>,
}

/// Per-environment positive and negative environment sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSets {
    pub positive: Vec<Vec<usize>>,
    pub negative: Vec<Vec<usize>>,
}

impl TripletSets {
    pub fn len(&self) -> usize {
        self.positive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty()
    }
}

/// Resolve problems, refusing contaminated ones unless allowed. All problems
/// must share the objective count.
pub fn resolve_problems(cfg: &DatasetConfig) -> Result<Vec<DynamicProblem>> {
    if cfg.problems.is_empty() {
        return Err(Error::Empty("problem set"));
    }
    let mut out: Vec<DynamicProblem> = Vec::new();
    for name in &cfg.problems {
        let p = make_problem(name, cfg.num_vars)?;
        if !cfg.allow_contaminated {
            if p.class() == ProblemClass::Test {
                return Err(Error::Config(format!("{} is a test problem; refusing to train on it", p.id())));
            }
            if let Some(iso) = p.isomorphic_to() {
                return Err(Error::Config(format!(
                    "{} is isomorphic to test problem {iso}; refusing to train on it",
                    p.id()
                )));
            }
        }
        if let Some(first) = out.first() {
            if first.num_objectives() != p.num_objectives() {
                return Err(Error::Config("training problems must share the objective count".into()));
            }
        }
        out.push(p);
    }
    Ok(out)
}

fn validate(cfg: &DatasetConfig) -> Result<()> {
    if cfg.schedules.is_empty() {
        return Err(Error::Empty("schedule list"));
    }
    if cfg.runs == 0 || cfg.window_len == 0 {
        return Err(Error::Config("runs and window length must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.reinit_fraction) || cfg.reinit_period == 0 {
        return Err(Error::Config("re-randomization needs a fraction in [0, 1] and a positive period".into()));
    }
    for s in &cfg.schedules {
        EnvironmentSchedule::new(s.severity, s.frequency, s.num_environments)?;
    }
    Ok(())
}

fn random_reinit(state: &mut MoeadState, problem: &DynamicProblem, t: f64, fraction: f64, rng: &mut Rng) {
    let n = state.population.len();
    let count = ((n as f64) * fraction).round() as usize;
    let slots: Vec<usize> = (0..n).collect::<Vec<_>>().choose_multiple(rng, count).copied().collect();
    for k in slots {
        let x = moead::random_decision(problem, rng);
        let f = problem.evaluate_unchecked(&x, t);
        state.evaluations += 1;
        for (zj, fj) in state.ideal.iter_mut().zip(&f) {
            *zj = zj.min(*fj);
        }
        state.population.decisions[k] = x;
        state.population.objectives[k] = f;
    }
}

/// Run every (problem, schedule, run) and collect records and environment fronts.
pub fn generate_offline(cfg: &DatasetConfig) -> Result<Dataset> {
    validate(cfg)?;
    let problems = resolve_problems(cfg)?;
    let m = problems[0].num_objectives();
    let n = cfg.pop_size;
    let weights = generate_weights(n, m, cfg.optimizer.neighborhood_size.min(n))?;
    let header = DatasetHeader {
        version: VERSION,
        num_vars: cfg.num_vars,
        num_objectives: m,
        window_len: cfg.window_len,
        labels: problems.iter().map(|p| p.id().to_string()).collect(),
        schedules: cfg.schedules.clone(),
    };
    let mut records = Vec::new();
    let mut envs = Vec::new();
    for (label, problem) in problems.iter().enumerate() {
        for (si, schedule) in cfg.schedules.iter().enumerate() {
            for run in 0..cfg.runs {
                let run_seed = derive_seed(derive_seed(derive_seed(cfg.seed, label as u64), si as u64), run as u64);
                let mut extra = rng::stream(run_seed, rng::streams::DATASET);
                let num_env = u64::from(schedule.num_environments);
                let tau = u64::from(schedule.frequency);
                let mut state = MoeadState::random(problem, n, 0.0, rng::stream(run_seed, rng::streams::OPTIMIZER));
                let mut prev_final: Option<Vec<Vec<f64>>> = None;
                let mut gen: u64 = 0;
                for env in 0..num_env {
                    let t = schedule.time_of_environment(env);
                    if env > 0 {
                        state.reevaluate(problem, t);
                    }
                    let mut snapshots = Vec::new();
                    for g in 0..tau {
                        if cfg.periodic_reinit && gen > 0 && gen % cfg.reinit_period == 0 {
                            random_reinit(&mut state, problem, t, cfg.reinit_fraction, &mut extra);
                        }
                        moead::step(&mut state, problem, t, &weights, &cfg.optimizer);
                        gen += 1;
                        if cfg.record_every_generation || g + 1 == tau {
                            snapshots.push((state.population.clone(), state.ideal.clone()));
                        }
                    }
                    let final_pop = state.population.decisions.clone();
                    let genotype = prev_final.as_ref().unwrap_or(&final_pop);
                    let times = window_times(env, cfg.window_len, |e| schedule.time_of_environment(e));
                    let windows = trajectory_windows(problem, genotype, &times);
                    let global_env = envs.len();
                    let t_norm = schedule.normalized_environment(env);
                    for (pop, ideal) in &snapshots {
                        for k in 0..n {
                            records.push(TrainingRecord {
                                x_norm: problem.normalize(&pop.decisions[k]).into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
                                y: pop.objectives[k].clone(),
                                window: windows.row(k).to_vec(),
                                tchebycheff: tchebycheff(&pop.objectives[k], &weights.weights[k], ideal, 0.0),
                                label,
                                env_index: env,
                                global_env,
                                t_norm,
                            });
                        }
                    }
                    let objs = &state.population.objectives;
                    let front = non_dominated_indices(objs).into_iter().map(|i| objs[i].clone()).collect();
                    envs.push(EnvInfo {
                        problem: problem.id().to_string(),
                        label,
                        schedule: si,
                        run,
                        env_index: env,
                        t,
                        front,
                    });
                    prev_final = Some(final_pop);
                }
            }
        }
    }
    log::info!("generated {} records over {} environments", records.len(), envs.len());
    Ok(Dataset { header, records, envs })
}

/// `k` nearest (positive) and farthest (negative) environments per anchor;
/// the anchor itself is excluded. Environments are ranked by distance with
/// ties broken by lower id, and the negatives are taken from the far end of
/// that same ranking, so the two sets are disjoint whenever `n > 2k`.
pub fn build_triplet_sets(distances: &[Vec<f64>], k: usize) -> Result<TripletSets> {
    let n = distances.len();
    if k == 0 {
        return Err(Error::Config("triplet k must be positive".into()));
    }
    if k >= n {
        return Err(Error::Config(format!("triplet k = {k} needs more than {n} environments")));
    }
    if distances.iter().any(|r| r.len() != n) {
        return Err(Error::Precondition("distance matrix is not square".into()));
    }
    let mut positive = Vec::with_capacity(n);
    let mut negative = Vec::with_capacity(n);
    for (i, row) in distances.iter().enumerate() {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        positive.push(others[..k].to_vec());
        negative.push(others.iter().rev().take(k).copied().collect());
    }
    Ok(TripletSets { positive, negative })
}

/// Uniform draw of a positive and a negative environment for `anchor`.
pub fn sample_triplet(sets: &TripletSets, anchor: usize, rng: &mut Rng) -> Result<(usize, usize, usize)> {
    let pos = sets.positive.get(anchor).ok_or(Error::OutOfRange {
        index: anchor,
        len: sets.len(),
    })?;
    let neg = &sets.negative[anchor];
    let p = *pos.choose(rng).ok_or(Error::Empty("positive set"))?;
    let n = *neg.choose(rng).ok_or(Error::Empty("negative set"))?;
    Ok((anchor, p, n))
}

impl Dataset {
    pub fn fronts(&self) -> Vec<Vec<Vec<f64>>> {
        self.envs.iter().map(|e| e.front.clone()).collect()
    }

    /// Symmetric IGD distance matrix between environment fronts.
    pub fn distance_matrix(&self) -> Result<Vec<Vec<f64>>> {
        igd_matrix(&self.fronts())
    }

    pub fn training_set(&self, sets: &TripletSets) -> Result<TrainingSet> {
        if sets.len() != self.envs.len() {
            return Err(Error::Precondition("triplet sets do not cover every environment".into()));
        }
        let h = &self.header;
        let n = self.records.len();
        let ww = h.window_len * h.num_objectives;
        let mut x = Array2::zeros((n, h.num_vars));
        let mut y = Array2::zeros((n, h.num_objectives));
        let mut w = Array2::zeros((n, ww));
        for (i, r) in self.records.iter().enumerate() {
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&r.x_norm));
            y.row_mut(i).assign(&ndarray::ArrayView1::from(&r.y));
            w.row_mut(i).assign(&ndarray::ArrayView1::from(&r.window));
        }
        Ok(TrainingSet {
            window_len: h.window_len,
            num_classes: h.labels.len(),
            x_norm: x,
            y,
            windows: w,
            labels: self.records.iter().map(|r| r.label).collect(),
            t_norm: self.records.iter().map(|r| r.t_norm).collect(),
            env_ids: self.records.iter().map(|r| r.global_env).collect(),
            triplet_sets: sets.positive.iter().cloned().zip(sets.negative.iter().cloned()).collect(),
        })
    }

    /// Binary form: magic, version, header length and JSON header, record
    /// count, then fixed-width little-endian `f64` records laid out as
    /// `[label, global_env, env_index, t_norm, tchebycheff, x_norm, y, window]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let width = self.header.record_width();
        let mut out = Vec::with_capacity(32 + header.len() + 8 * width * self.records.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            let head = [r.label as f64, r.global_env as f64, r.env_index as f64, r.t_norm, r.tchebycheff];
            for v in head.iter().chain(&r.x_norm).chain(&r.y).chain(&r.window) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parse the binary form. Environment fronts live in the manifest and are
    /// left empty here.
    pub fn records_from_bytes(bytes: &[u8]) -> Result<(DatasetHeader, Vec<TrainingRecord>)> {
        let bad = |r: &str| Error::format("dataset", r.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("unexpected end of data"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad("unsupported version"));
        }
        let hlen = usize::try_from(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"))).map_err(|_| bad("header length overflow"))?;
        let header: DatasetHeader = serde_json::from_slice(take(hlen)?).map_err(|e| Error::format("dataset", format!("header: {e}")))?;
        if header.version != VERSION || header.num_objectives == 0 || header.num_vars == 0 || header.window_len == 0 {
            return Err(bad("invalid header"));
        }
        let count = usize::try_from(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"))).map_err(|_| bad("record count overflow"))?;
        let width = header
            .num_vars
            .checked_add(header.num_objectives)
            .and_then(|v| header.window_len.checked_mul(header.num_objectives).and_then(|w| v.checked_add(w)))
            .and_then(|v| v.checked_add(5))
            .ok_or_else(|| bad("record width overflow"))?;
        let body = take(count.checked_mul(width).and_then(|v| v.checked_mul(8)).ok_or_else(|| bad("record size overflow"))?)?;
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let (d, m) = (header.num_vars, header.num_objectives);
        let as_index = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
                Ok(v as usize)
            } else {
                Err(bad("non-integral index field"))
            }
        };
        let mut records = Vec::with_capacity(count);
        for chunk in body.chunks_exact(8 * width.max(1)).take(count) {
            let v: Vec<f64> = chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let label = as_index(v[0])?;
            if label >= header.labels.len() {
                return Err(bad("label outside the label table"));
            }
            records.push(TrainingRecord {
                label,
                global_env: as_index(v[1])?,
                env_index: as_index(v[2])? as u64,
                t_norm: v[3],
                tchebycheff: v[4],
                x_norm: v[5..5 + d].to_vec(),
                y: v[5 + d..5 + d + m].to_vec(),
                window: v[5 + d + m..].to_vec(),
            });
        }
        Ok((header, records))
    }

    /// JSON-lines manifest: a header line, one line per environment with its
    /// front, and a final line with the distance matrix.
    pub fn write_manifest<W: Write>(&self, distances: &[Vec<f64>], fingerprint: &str, mut out: W) -> Result<()> {
        let line = |v: serde_json::Value| serde_json::to_string(&v).expect("json");
        writeln!(
            out,
            "{}",
            line(serde_json::json!({
                "kind": "header",
                "fingerprint": fingerprint,
                "records": self.records.len(),
                "environments": self.envs.len(),
                "header": self.header,
            }))
        )?;
        for (i, e) in self.envs.iter().enumerate() {
            writeln!(out, "{}", line(serde_json::json!({"kind": "env", "id": i, "env": e})))?;
        }
        writeln!(out, "{}", line(serde_json::json!({"kind": "distances", "matrix": distances})))?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<String> {
        std::fs::create_dir_all(dir)?;
        let bytes = self.to_bytes();
        let fp = fingerprint(&bytes);
        std::fs::write(dir.join(DATA_FILE), &bytes)?;
        let distances = self.distance_matrix()?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(MANIFEST_FILE))?);
        self.write_manifest(&distances, &fp, &mut f)?;
        f.flush()?;
        Ok(fp)
    }

    /// Load a saved dataset with its distance matrix and fingerprint.
    pub fn load(dir: &Path) -> Result<(Dataset, Vec<Vec<f64>>, String)> {
        let bytes = std::fs::read(dir.join(DATA_FILE))?;
        let (header, records) = Self::records_from_bytes(&bytes)?;
        let file = std::fs::File::open(dir.join(MANIFEST_FILE))?;
        let manifest = Manifest::read(std::io::BufReader::new(file))?;
        let fp = fingerprint(&bytes);
        if manifest.fingerprint != fp {
            return Err(Error::format("dataset", "manifest fingerprint does not match the data file"));
        }
        if records.iter().any(|r| r.global_env >= manifest.envs.len()) {
            return Err(Error::format("dataset", "record refers to an unknown environment"));
        }
        Ok((
            Dataset {
                header,
                records,
                envs: manifest.envs,
            },
            manifest.distances,
            fp,
        ))
    }
}

pub const DATA_FILE: &str = "dataset.bin";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Parsed JSON-lines manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub fingerprint: String,
    pub envs: Vec<EnvInfo>,
    pub distances: Vec<Vec<f64>>,
}

impl Manifest {
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let bad = |r: String| Error::format("dataset manifest", r);
        let mut fingerprint = None;
        let mut envs = Vec::new();
        let mut distances = None;
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
            match v.get("kind").and_then(|k| k.as_str()) {
                Some("header") => {
                    fingerprint = Some(
                        v.get("fingerprint")
                            .and_then(|f| f.as_str())
                            .ok_or_else(|| bad("header without fingerprint".into()))?
                            .to_string(),
                    );
                }
                Some("env") => {
                    let id = v.get("id").and_then(|i| i.as_u64()).ok_or_else(|| bad(format!("line {}: env without id", n + 1)))?;
                    if id as usize != envs.len() {
                        return Err(bad(format!("line {}: environment ids out of order", n + 1)));
                    }
                    let e: EnvInfo = serde_json::from_value(v.get("env").cloned().unwrap_or_default())
                        .map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
                    envs.push(e);
                }
                Some("distances") => {
                    let m: Vec<Vec<f64>> = serde_json::from_value(v.get("matrix").cloned().unwrap_or_default())
                        .map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
                    distances = Some(m);
                }
                _ => return Err(bad(format!("line {}: unknown record kind", n + 1))),
            }
        }
        let distances = distances.ok_or_else(|| bad("missing distance matrix".into()))?;
        if distances.len() != envs.len() || distances.iter().any(|r| r.len() != envs.len()) {
            return Err(bad("distance matrix does not match the environment count".into()));
        }
        Ok(Self {
            fingerprint: fingerprint.ok_or_else(|| bad("missing header".into()))?,
            envs,
            distances,
        })
    }
}

/// Hex SHA-256 of a byte string.
pub fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic subsample of `count` records (all when `count >= len`), kept in order.
pub fn subsample(records: &[TrainingRecord], count: usize, seed: u64) -> Vec<TrainingRecord> {
    if count >= records.len() {
        return records.to_vec();
    }
    let mut r = rng::stream(seed, rng::streams::DATASET);
    let mut keep: Vec<usize> = (0..records.len()).collect::<Vec<_>>().choose_multiple(&mut r, count).copied().collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| records[i].clone()).collect()
}
