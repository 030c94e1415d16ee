//! Population generation at an environmental change.
//!
//! Old individuals and their recent objective windows are encoded into joint
//! latents; candidates are sampled around the centroid, decoded into
//! decisions with predicted objectives, and greedily assigned to weight
//! vectors by augmented Tchebycheff cost. Only the selected candidates are
//! truly evaluated.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::benchmarks::DynamicProblem;
use crate::error::{Error, Result};
use crate::model::{self, nn, ModelParams};
use crate::moead::{tchebycheff, Population, WeightVectorSet};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Sample around the population centroid and screen.
    #[default]
    #[serde(rename = "centroid")]
    Centroid,
    /// Perturb each individual's own latent; no screening.
    #[serde(rename = "all-point", alias = "all_point")]
    AllPoint,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Centroid => "centroid",
            Strategy::AllPoint => "all-point",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centroid" => Ok(Strategy::Centroid),
            "all-point" | "all_point" => Ok(Strategy::AllPoint),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub sigma_r: f64,
    pub n_cand: usize,
    pub rho: f64,
    pub strategy: Strategy,
    pub masked_dims: Vec<usize>,
    /// Rows per decoder call.
    pub chunk_size: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            sigma_r: 0.2,
            n_cand: 20_000,
            rho: 0.05,
            strategy: Strategy::Centroid,
            masked_dims: Vec::new(),
            chunk_size: 4096,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self, population_size: usize) -> Result<()> {
        if !(self.sigma_r > 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::Config("sigma_r must be positive".into()));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::Config("rho must be nonnegative".into()));
        }
        if self.n_cand < population_size {
            return Err(Error::Config(format!(
                "n_cand = {} is smaller than the population size {population_size}",
                self.n_cand
            )));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk size must be positive".into()));
        }
        Ok(())
    }
}

/// Parse a comma-separated index list such as `"0,3,17"`; empty means none.
pub fn parse_mask_dims(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("bad mask dimension `{p}`: {e}")))
        })
        .collect()
}

/// Flattened objective windows, one row per decision vector, evaluating each
/// decision at `times` (oldest first). Costs `times.len()` evaluations per row.
pub fn trajectory_windows(problem: &DynamicProblem, decisions: &[Vec<f64>], times: &[f64]) -> Array2<f64> {
    let m = problem.num_objectives();
    let mut w = Array2::zeros((decisions.len(), times.len() * m));
    for (i, x) in decisions.iter().enumerate() {
        for (k, &t) in times.iter().enumerate() {
            let f = problem.evaluate_unchecked(x, t);
            for j in 0..m {
                w[[i, k * m + j]] = f[j];
            }
        }
    }
    w
}

/// Times of the last `len` environments ending at `env`, oldest first, with
/// the earliest environment repeated when fewer exist.
pub fn window_times(env: u64, len: usize, time_of_env: impl Fn(u64) -> f64) -> Vec<f64> {
    (0..len as u64)
        .rev()
        .map(|back| time_of_env(env.saturating_sub(back)))
        .collect()
}

/// Population centroid in latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub z_sol: Array1<f64>,
    /// Mean sparse coefficients (the structural embedding when the basis is ablated).
    pub a: Array1<f64>,
    pub z_joint: Array1<f64>,
}

fn normalized(problem: &DynamicProblem, decisions: &[Vec<f64>]) -> Array2<f64> {
    let d = problem.num_vars();
    let mut x = Array2::zeros((decisions.len(), d));
    for (i, dec) in decisions.iter().enumerate() {
        for (j, v) in problem.normalize(dec).into_iter().enumerate() {
            x[[i, j]] = v.clamp(0.0, 1.0);
        }
    }
    x
}

fn check_model(problem: &DynamicProblem, params: &ModelParams) -> Result<()> {
    let a = &params.arch;
    if a.num_vars != problem.num_vars() || a.num_objectives != problem.num_objectives() {
        return Err(Error::Config(format!(
            "model expects D = {}, M = {} but {} has D = {}, M = {}",
            a.num_vars,
            a.num_objectives,
            problem.id(),
            problem.num_vars(),
            problem.num_objectives()
        )));
    }
    Ok(())
}

fn masked_struct(a: &Array2<f64>, dims: &[usize], params: &ModelParams) -> Result<Array2<f64>> {
    if dims.is_empty() {
        return Ok(model::struct_from_coefficients(a, params));
    }
    if params.arch.ablation.no_basis {
        return Err(Error::Config("basis masking needs the basis dictionary".into()));
    }
    let mut masked = a.clone();
    for mut row in masked.axis_iter_mut(Axis(0)) {
        let m = model::mask_basis(row.as_slice().expect("row"), dims)?;
        row.assign(&Array1::from(m));
    }
    Ok(model::struct_from_coefficients(&masked, params))
}

/// Mean inference-mode joint latent of the population.
pub fn joint_centroid(
    problem: &DynamicProblem,
    population: &Population,
    windows: &Array2<f64>,
    params: &ModelParams,
) -> Result<Centroid> {
    if population.is_empty() {
        return Err(Error::Empty("population"));
    }
    check_model(problem, params)?;
    let latent = model::encode(&normalized(problem, &population.decisions), windows, params)?;
    let mean = |m: &Array2<f64>| m.mean_axis(Axis(0)).expect("non-empty");
    Ok(Centroid {
        z_sol: mean(&latent.z_sol),
        a: mean(&latent.a),
        z_joint: mean(&latent.z_joint),
    })
}

/// `n` i.i.d. draws from `N(center, sigma^2 I)`.
pub fn sample_candidates(center: &Array1<f64>, n: usize, sigma: f64, rng: &mut Rng) -> Array2<f64> {
    let mut pool = model::standard_normal(ndarray::Ix2(n, center.len()), rng);
    pool *= sigma;
    pool += center;
    pool
}

/// Decode latents into denormalized decisions and predicted objectives,
/// in pool order, `chunk` rows at a time.
pub fn decode_candidates(
    pool: &Array2<f64>,
    params: &ModelParams,
    problem: &DynamicProblem,
    chunk: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_model(problem, params)?;
    let mut xs = Vec::with_capacity(pool.nrows());
    let mut ys = Vec::with_capacity(pool.nrows());
    for block in pool.axis_chunks_iter(Axis(0), chunk.max(1)) {
        let d = model::decode(&block.to_owned(), params)?;
        for (xr, yr) in d.x_hat.axis_iter(Axis(0)).zip(d.y_hat.axis_iter(Axis(0))) {
            // Sigmoid saturates to exactly 0 or 1 in floating point.
            let xn: Vec<f64> = xr.iter().map(|v| v.clamp(f64::EPSILON, 1.0 - f64::EPSILON)).collect();
            xs.push(problem.denormalize(&xn));
            ys.push(yr.to_vec());
        }
    }
    Ok((xs, ys))
}

/// Greedy assignment of candidates to weight vectors in index order; each
/// weight takes the unselected candidate of least augmented Tchebycheff cost
/// (lowest index on ties). The ideal point is the minimum of `y_pred`.
pub fn screen(y_pred: &[Vec<f64>], weights: &WeightVectorSet, rho: f64) -> Result<Vec<usize>> {
    let n = weights.len();
    if y_pred.len() < n {
        return Err(Error::Precondition(format!(
            "{} candidates cannot fill {n} weight vectors",
            y_pred.len()
        )));
    }
    let m = y_pred.first().map_or(0, Vec::len);
    let mut z = vec![f64::INFINITY; m];
    for y in y_pred {
        for (zj, yj) in z.iter_mut().zip(y) {
            *zj = zj.min(*yj);
        }
    }
    let mut taken = vec![false; y_pred.len()];
    let mut chosen = Vec::with_capacity(n);
    for w in &weights.weights {
        let mut best = usize::MAX;
        let mut best_cost = f64::INFINITY;
        for (j, y) in y_pred.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let c = tchebycheff(y, w, &z, rho);
            if best == usize::MAX || c < best_cost {
                best = j;
                best_cost = c;
            }
        }
        taken[best] = true;
        chosen.push(best);
    }
    Ok(chosen)
}

/// Outcome of one reinitialization.
#[derive(Debug, Clone)]
pub struct Generated {
    pub population: Population,
    /// True evaluations spent on the new population (always `N`).
    pub evaluations: usize,
}

/// Build the population for the environment at `t_new` from the old
/// population and its windows. Exactly `N` true evaluations are consumed.
#[allow(clippy::too_many_arguments)]
pub fn reinitialize(
    population: &Population,
    windows: &Array2<f64>,
    params: &ModelParams,
    weights: &WeightVectorSet,
    config: &GenerateConfig,
    problem: &DynamicProblem,
    t_new: f64,
    rng: &mut Rng,
) -> Result<Generated> {
    let n = weights.len();
    config.validate(n)?;
    if population.len() != windows.nrows() {
        return Err(Error::Precondition("one window per individual is required".into()));
    }
    let decisions = match config.strategy {
        Strategy::Centroid => {
            let c = joint_centroid(problem, population, windows, params)?;
            let a = c.a.clone().insert_axis(Axis(0));
            let z_struct = masked_struct(&a, &config.masked_dims, params)?;
            let center = nn::hconcat(&c.z_sol.insert_axis(Axis(0)), &z_struct).row(0).to_owned();
            let pool = sample_candidates(&center, config.n_cand, config.sigma_r, rng);
            let (xs, ys) = decode_candidates(&pool, params, problem, config.chunk_size)?;
            let picked = screen(&ys, weights, config.rho)?;
            picked.into_iter().map(|i| xs[i].clone()).collect::<Vec<_>>()
        }
        Strategy::AllPoint => {
            if population.len() != n {
                return Err(Error::Precondition(format!(
                    "all-point generation needs {n} individuals, got {}",
                    population.len()
                )));
            }
            check_model(problem, params)?;
            let latent = model::encode(&normalized(problem, &population.decisions), windows, params)?;
            let z_struct = masked_struct(&latent.a, &config.masked_dims, params)?;
            let z = nn::hconcat(&latent.z_sol, &z_struct);
            let noise = model::standard_normal(z.raw_dim(), rng) * config.sigma_r;
            let (xs, _) = decode_candidates(&(z + noise), params, problem, config.chunk_size)?;
            xs
        }
    };
    let population = Population::evaluated(problem, decisions, t_new);
    Ok(Generated {
        evaluations: population.len(),
        population,
    })
}
