//! MOEA/D with differential-evolution reproduction.
//!
//! Each weight vector defines one Tchebycheff subproblem; population slot `k`
//! holds the incumbent of subproblem `k`.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::benchmarks::DynamicProblem;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Evenly spread weight vectors and their neighborhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVectorSet {
    pub weights: Vec<Vec<f64>>,
    pub neighborhoods: Vec<Vec<usize>>,
}

impl WeightVectorSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Standard MOEA/D weight construction with neighborhoods of size `t`.
pub fn generate_weights(n: usize, m: usize, t: usize) -> Result<WeightVectorSet> {
    if m < 2 || m > 3 {
        return Err(Error::UnsupportedDimension(m));
    }
    if n < m {
        return Err(Error::Precondition(format!("population size {n} smaller than objective count {m}")));
    }
    let weights = if m == 2 {
        (0..n)
            .map(|i| {
                let a = i as f64 / (n - 1) as f64;
                vec![a, 1.0 - a]
            })
            .collect()
    } else {
        let mut h = 1;
        while (h + 1) * (h + 2) / 2 < n {
            h += 1;
        }
        let lattice = simplex_lattice3(h);
        if lattice.len() == n {
            lattice
        } else {
            farthest_point_subset(&lattice, n)
        }
    };
    let neighborhoods = neighborhoods(&weights, t.clamp(1, n));
    Ok(WeightVectorSet { weights, neighborhoods })
}

fn simplex_lattice3(h: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity((h + 1) * (h + 2) / 2);
    let hf = h as f64;
    for i in 0..=h {
        for j in 0..=h - i {
            let k = h - i - j;
            out.push(vec![i as f64 / hf, j as f64 / hf, k as f64 / hf]);
        }
    }
    out
}

/// Greedy farthest-point selection starting from the first lattice point;
/// ties go to the lower index. The subset keeps lattice order.
fn farthest_point_subset(points: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut chosen = vec![0usize];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[0])).collect();
    while chosen.len() < n {
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, &d) in min_d.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        chosen.push(best);
        for (i, p) in points.iter().enumerate() {
            min_d[i] = min_d[i].min(sq_dist(p, &points[best]));
        }
    }
    chosen.sort_unstable();
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn neighborhoods(weights: &[Vec<f64>], t: usize) -> Vec<Vec<usize>> {
    weights
        .iter()
        .map(|w| {
            let mut order: Vec<(f64, usize)> =
                weights.iter().enumerate().map(|(j, v)| (sq_dist(w, v), j)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            order.into_iter().take(t).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Augmented Tchebycheff value; `rho = 0` gives the plain form.
pub fn tchebycheff(f: &[f64], w: &[f64], z_star: &[f64], rho: f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    let mut l1 = 0.0;
    for ((fj, wj), zj) in f.iter().zip(w).zip(z_star) {
        let dev = (fj - zj).abs();
        worst = worst.max(wj * dev);
        l1 += dev;
    }
    worst + rho * l1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoeadConfig {
    pub neighborhood_size: usize,
    /// Probability of mating within the neighborhood.
    pub neighborhood_prob: f64,
    pub scale_factor: f64,
    pub crossover_rate: f64,
    pub mutation_eta: f64,
    /// `None` means `1 / D`.
    pub mutation_prob: Option<f64>,
    pub max_replacements: usize,
}

impl Default for MoeadConfig {
    fn default() -> Self {
        Self {
            neighborhood_size: 20,
            neighborhood_prob: 0.8,
            scale_factor: 0.5,
            crossover_rate: 0.5,
            mutation_eta: 20.0,
            mutation_prob: None,
            max_replacements: 2,
        }
    }
}

/// Decision vectors with their cached objective vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Population {
    pub decisions: Vec<Vec<f64>>,
    pub objectives: Vec<Vec<f64>>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    /// Evaluate every member at `t`.
    pub fn evaluated(problem: &DynamicProblem, decisions: Vec<Vec<f64>>, t: f64) -> Self {
        let objectives = decisions.iter().map(|x| problem.evaluate_unchecked(x, t)).collect();
        Self { decisions, objectives }
    }

    pub fn random(problem: &DynamicProblem, n: usize, t: f64, rng: &mut Rng) -> Self {
        let decisions = (0..n).map(|_| random_decision(problem, rng)).collect();
        Self::evaluated(problem, decisions, t)
    }

    pub fn ideal_point(&self) -> Vec<f64> {
        let m = self.objectives.first().map_or(0, Vec::len);
        let mut z = vec![f64::INFINITY; m];
        for f in &self.objectives {
            for (zj, fj) in z.iter_mut().zip(f) {
                *zj = zj.min(*fj);
            }
        }
        z
    }
}

pub fn random_decision(problem: &DynamicProblem, rng: &mut Rng) -> Vec<f64> {
    problem
        .lower()
        .iter()
        .zip(problem.upper())
        .map(|(&lo, &hi)| rng.random_range(lo..=hi))
        .collect()
}

/// Optimizer state for one run.
#[derive(Debug, Clone)]
pub struct MoeadState {
    pub population: Population,
    pub ideal: Vec<f64>,
    pub generation: u64,
    pub evaluations: u64,
    pub rng: Rng,
}

impl MoeadState {
    /// Wrap an evaluated population; `evaluations` starts at zero.
    pub fn new(population: Population, rng: Rng) -> Self {
        let ideal = population.ideal_point();
        Self {
            population,
            ideal,
            generation: 0,
            evaluations: 0,
            rng,
        }
    }

    /// Uniform random initialization, charged `n` evaluations.
    pub fn random(problem: &DynamicProblem, n: usize, t: f64, mut rng: Rng) -> Self {
        let population = Population::random(problem, n, t, &mut rng);
        let mut s = Self::new(population, rng);
        s.evaluations = n as u64;
        s
    }

    /// Install a freshly evaluated population (after a change) and reset z*.
    pub fn replace_population(&mut self, population: Population) {
        self.ideal = population.ideal_point();
        self.population = population;
    }

    /// Re-evaluate the current decisions at `t` and reset z*; charged `N`.
    pub fn reevaluate(&mut self, problem: &DynamicProblem, t: f64) {
        let decisions = std::mem::take(&mut self.population.decisions);
        self.evaluations += decisions.len() as u64;
        self.replace_population(Population::evaluated(problem, decisions, t));
    }
}

fn polynomial_mutation(x: &mut [f64], lower: &[f64], upper: &[f64], prob: f64, eta: f64, rng: &mut Rng) {
    let pow = 1.0 / (eta + 1.0);
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        if rng.random::<f64>() >= prob {
            continue;
        }
        let span = hi - lo;
        let d1 = (*v - lo) / span;
        let d2 = (hi - *v) / span;
        let r: f64 = rng.random();
        let dq = if r <= 0.5 {
            let val = 2.0 * r + (1.0 - 2.0 * r) * (1.0 - d1).powf(eta + 1.0);
            val.powf(pow) - 1.0
        } else {
            let val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * (1.0 - d2).powf(eta + 1.0);
            1.0 - val.powf(pow)
        };
        *v = (*v + dq * span).clamp(lo, hi);
    }
}

/// DE/rand/1 with binomial crossover around `base`.
pub fn de_offspring(base: &[f64], r1: &[f64], r2: &[f64], f: f64, cr: f64, rng: &mut Rng) -> Vec<f64> {
    let forced = rng.random_range(0..base.len());
    base.iter()
        .enumerate()
        .map(|(j, &b)| {
            if j == forced || rng.random::<f64>() < cr {
                b + f * (r1[j] - r2[j])
            } else {
                b
            }
        })
        .collect()
}

/// One generation: exactly `N` evaluations.
pub fn step(
    state: &mut MoeadState,
    problem: &DynamicProblem,
    t: f64,
    weights: &WeightVectorSet,
    config: &MoeadConfig,
) {
    let n = state.population.len();
    let d = problem.num_vars();
    let pm = config.mutation_prob.unwrap_or(1.0 / d as f64);
    let all: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let pool: &[usize] = if state.rng.random::<f64>() < config.neighborhood_prob {
            &weights.neighborhoods[k]
        } else {
            &all
        };
        let (a, b) = pick_two(pool, &mut state.rng);
        let pop = &state.population.decisions;
        let mut child = de_offspring(
            &pop[k],
            &pop[a],
            &pop[b],
            config.scale_factor,
            config.crossover_rate,
            &mut state.rng,
        );
        problem.repair(&mut child);
        polynomial_mutation(&mut child, problem.lower(), problem.upper(), pm, config.mutation_eta, &mut state.rng);
        problem.repair(&mut child);
        let fc = problem.evaluate_unchecked(&child, t);
        state.evaluations += 1;
        for (zj, fj) in state.ideal.iter_mut().zip(&fc) {
            *zj = zj.min(*fj);
        }
        let mut replaced = 0;
        for &j in pool {
            if replaced >= config.max_replacements {
                break;
            }
            let w = &weights.weights[j];
            let incumbent = tchebycheff(&state.population.objectives[j], w, &state.ideal, 0.0);
            if tchebycheff(&fc, w, &state.ideal, 0.0) <= incumbent {
                state.population.decisions[j] = child.clone();
                state.population.objectives[j] = fc.clone();
                replaced += 1;
            }
        }
    }
    state.generation += 1;
}

fn pick_two(pool: &[usize], rng: &mut Rng) -> (usize, usize) {
    if pool.len() < 2 {
        return (pool[0], pool[0]);
    }
    let mut it = pool.choose_multiple(rng, 2);
    (*it.next().expect("two picks"), *it.next().expect("two picks"))
}

/// Random initialization followed by `budget` generations at fixed `t`.
pub fn run_static(
    problem: &DynamicProblem,
    t: f64,
    budget: u64,
    weights: &WeightVectorSet,
    config: &MoeadConfig,
    rng: Rng,
) -> Population {
    let mut state = MoeadState::random(problem, weights.len(), t, rng);
    for _ in 0..budget {
        step(&mut state, problem, t, weights, config);
    }
    state.population
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::make_problem;
    use crate::rng;

    #[test]
    fn two_objective_weights() {
        let w = generate_weights(3, 2, 20).unwrap();
        assert_eq!(w.weights, vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]);
        let w = generate_weights(2, 2, 20).unwrap();
        assert_eq!(w.weights, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(generate_weights(1, 2, 20).is_err());
    }

    #[test]
    fn full_three_objective_lattice() {
        let w = generate_weights(153, 3, 20).unwrap();
        assert_eq!(w.len(), 153);
        let lattice = simplex_lattice3(16);
        assert_eq!(w.weights, lattice);
    }

    #[test]
    fn truncated_lattice_properties() {
        let w = generate_weights(150, 3, 20).unwrap();
        assert_eq!(w.len(), 150);
        for row in &w.weights {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        for (k, nb) in w.neighborhoods.iter().enumerate() {
            assert_eq!(nb.len(), 20);
            assert_eq!(nb[0], k);
        }
    }

    #[test]
    fn tchebycheff_examples() {
        assert_eq!(tchebycheff(&[1.0, 2.0], &[0.5, 0.5], &[0.0, 0.0], 0.0), 1.0);
        assert!((tchebycheff(&[1.0, 2.0], &[0.5, 0.5], &[0.0, 0.0], 0.05) - 1.15).abs() < 1e-15);
        assert_eq!(tchebycheff(&[0.3, 0.4], &[0.2, 0.8], &[0.3, 0.4], 0.05), 0.0);
    }

    #[test]
    fn de_arithmetic() {
        let mut r = rng::stream(1, 0);
        let v = de_offspring(&[0.2], &[0.4], &[0.0], 0.5, 0.0, &mut r);
        assert!((v[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn repair_clips() {
        let p = make_problem("FDA1", 3).unwrap();
        let mut x = vec![1.3, -1.5, 0.2];
        p.repair(&mut x);
        assert_eq!(x, vec![1.0, -1.0, 0.2]);
    }

    #[test]
    fn worse_offspring_leaves_population_unchanged() {
        // a single-variable-style check through the replacement rule
        let w = generate_weights(3, 2, 3).unwrap();
        let z = [0.0, 0.0];
        let incumbents = [vec![0.0, 0.1], vec![0.1, 0.1], vec![0.1, 0.0]];
        let child = [5.0, 5.0];
        for (j, inc) in incumbents.iter().enumerate() {
            assert!(tchebycheff(&child, &w.weights[j], &z, 0.0) > tchebycheff(inc, &w.weights[j], &z, 0.0));
        }
    }

    #[test]
    fn step_invariants() {
        let p = make_problem("DF1", 10).unwrap();
        let w = generate_weights(30, 2, 10).unwrap();
        let cfg = MoeadConfig::default();
        let mut s = MoeadState::random(&p, 30, 0.3, rng::stream(3, 1));
        let before_evals = s.evaluations;
        for _ in 0..5 {
            step(&mut s, &p, 0.3, &w, &cfg);
            for x in &s.population.decisions {
                for ((v, lo), hi) in x.iter().zip(p.lower()).zip(p.upper()) {
                    assert!(v >= lo && v <= hi);
                }
            }
            for j in 0..2 {
                let min = s.population.objectives.iter().map(|f| f[j]).fold(f64::INFINITY, f64::min);
                assert!(s.ideal[j] <= min);
            }
        }
        assert_eq!(s.evaluations - before_evals, 5 * 30);
        assert_eq!(s.generation, 5);
    }

    #[test]
    fn subproblem_values_never_increase_at_fixed_ideal() {
        // DF1 objectives are non-negative, so an ideal point below zero never moves.
        let p = make_problem("DF1", 10).unwrap();
        let w = generate_weights(30, 2, 10).unwrap();
        let mut s = MoeadState::random(&p, 30, 0.3, rng::stream(4, 1));
        s.ideal = vec![-0.1, -0.1];
        for _ in 0..10 {
            let before: Vec<f64> = (0..30)
                .map(|k| tchebycheff(&s.population.objectives[k], &w.weights[k], &s.ideal, 0.0))
                .collect();
            step(&mut s, &p, 0.3, &w, &MoeadConfig::default());
            assert_eq!(s.ideal, vec![-0.1, -0.1]);
            for k in 0..30 {
                let after = tchebycheff(&s.population.objectives[k], &w.weights[k], &s.ideal, 0.0);
                assert!(after <= before[k], "subproblem {k}: {after} > {}", before[k]);
            }
        }
    }

    #[test]
    fn zero_budget_returns_initial_population() {
        let p = make_problem("FDA1", 10).unwrap();
        let w = generate_weights(20, 2, 5).unwrap();
        let pop = run_static(&p, 0.0, 0, &w, &MoeadConfig::default(), rng::stream(9, 1));
        let again = Population::random(&p, 20, 0.0, &mut rng::stream(9, 1));
        assert_eq!(pop, again);
    }

    #[test]
    fn run_static_is_deterministic() {
        let p = make_problem("FDA1", 10).unwrap();
        let w = generate_weights(20, 2, 5).unwrap();
        let a = run_static(&p, 0.0, 10, &w, &MoeadConfig::default(), rng::stream(9, 1));
        let b = run_static(&p, 0.0, 10, &w, &MoeadConfig::default(), rng::stream(9, 1));
        assert_eq!(a, b);
    }
}
