//! Time-parameterized benchmark problems and their true Pareto fronts.

mod schedule;
mod suites;

use rand::Rng as _;

pub use schedule::{time_of_generation, EnvironmentSchedule};
pub use suites::{Kind, NodeParams};

use crate::error::{Error, Result};
use crate::metrics::non_dominated_indices;
use crate::rng;

pub const DEFAULT_NUM_VARS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemClass {
    Test,
    Training,
}

/// An immutable, time-parameterized multi-objective problem.
#[derive(Debug, Clone)]
pub struct DynamicProblem {
    kind: Kind,
    num_vars: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    nodes: Option<NodeParams>,
}

/// Registered problem ids, in registry order.
pub fn registered_ids() -> impl Iterator<Item = &'static str> {
    Kind::ALL.iter().map(|k| k.id())
}

/// Look up a problem by id (case-insensitive) and configure it for `num_vars`
/// decision variables.
pub fn make_problem(name: &str, num_vars: usize) -> Result<DynamicProblem> {
    let kind = Kind::ALL
        .iter()
        .copied()
        .find(|k| k.id().eq_ignore_ascii_case(name.trim()))
        .ok_or_else(|| Error::UnregisteredProblem(name.to_string()))?;
    DynamicProblem::new(kind, num_vars)
}

impl DynamicProblem {
    pub fn new(kind: Kind, num_vars: usize) -> Result<Self> {
        let m = kind.num_objectives();
        if num_vars < 2 || num_vars < m {
            return Err(Error::Precondition(format!(
                "{} needs at least {} decision variables, got {num_vars}",
                kind.id(),
                m.max(2)
            )));
        }
        let (lower, upper) = kind.bounds(num_vars);
        let nodes = match kind {
            Kind::Dra | Kind::Dpp => Some(draw_node_params(kind, num_vars)),
            _ => None,
        };
        Ok(Self {
            kind,
            num_vars,
            lower,
            upper,
            nodes,
        })
    }

    /// Replace the network node parameters of DRA/DPP.
    pub fn with_node_params(mut self, nodes: NodeParams) -> Result<Self> {
        if self.nodes.is_none() {
            return Err(Error::Precondition(format!("{} has no node parameters", self.id())));
        }
        let k = nodes.phase.len();
        if k == 0 || nodes.cost_base.len() != k || nodes.quality_base.len() != k {
            return Err(Error::Precondition("node parameter vectors must be non-empty and equal length".into()));
        }
        self.nodes = Some(nodes);
        Ok(self)
    }

    pub fn id(&self) -> &'static str {
        self.kind.id()
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn num_objectives(&self) -> usize {
        self.kind.num_objectives()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn class(&self) -> ProblemClass {
        if self.kind.is_training() {
            ProblemClass::Training
        } else {
            ProblemClass::Test
        }
    }

    /// The FDA/DF problem this one is isomorphic to, if any.
    pub fn isomorphic_to(&self) -> Option<&'static str> {
        self.kind.isomorphic_to()
    }

    pub fn node_params(&self) -> Option<&NodeParams> {
        self.nodes.as_ref()
    }

    /// Objective vector of `x` at time `t`. Rejects out-of-bounds inputs.
    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.num_vars {
            return Err(Error::Precondition(format!(
                "{} expects {} decision variables, got {}",
                self.id(),
                self.num_vars,
                x.len()
            )));
        }
        if !(t >= 0.0) {
            return Err(Error::Precondition(format!("time must be non-negative, got {t}")));
        }
        for (i, ((&v, &lo), &hi)) in x.iter().zip(&self.lower).zip(&self.upper).enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(Error::BoundsViolation {
                    index: i,
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(self.evaluate_unchecked(x, t))
    }

    /// [`evaluate`](Self::evaluate) without bound or length checks.
    pub fn evaluate_unchecked(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.evaluator().objectives(x, t)
    }

    /// Clip `x` into the box.
    pub fn repair(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(lo, hi);
        }
    }

    /// Map a decision vector into `[0, 1]^D`.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, x_norm: &[f64]) -> Vec<f64> {
        x_norm
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| lo + v * (hi - lo))
            .collect()
    }

    /// `n` points along the true Pareto front at time `t`.
    ///
    /// Points are spaced uniformly in the front's natural parameter (a square
    /// lattice for three objectives). Fronts that are disconnected are swept
    /// densely, reduced to their non-dominated subset and thinned back to `n`
    /// evenly spaced points.
    pub fn sample_true_pf(&self, t: f64, n: usize) -> Result<Vec<Vec<f64>>> {
        if n < 2 {
            return Err(Error::Precondition(format!("front sample size must be at least 2, got {n}")));
        }
        let ev = self.evaluator();
        let sweep = |count: usize| -> Vec<Vec<f64>> {
            parameter_grid(self.num_objectives() - 1, count)
                .iter()
                .map(|u| ev.pareto_set_point(u, t, self.num_vars))
                .filter(|x| ev.on_front(x, t))
                .map(|x| ev.objectives(&x, t))
                .collect()
        };
        if !self.kind.front_needs_filter() {
            return Ok(sweep(n));
        }
        let mut factor = 16;
        loop {
            let pts = sweep(n * factor);
            let keep = non_dominated_indices(&pts);
            if keep.len() >= n || factor >= 1024 {
                let mut front: Vec<Vec<f64>> = keep.into_iter().map(|i| pts[i].clone()).collect();
                front.sort_by(|a, b| a.partial_cmp(b).expect("finite objectives"));
                return Ok(thin_evenly(front, n));
            }
            factor *= 4;
        }
    }

    fn evaluator(&self) -> suites::Eval<'_> {
        suites::Eval {
            kind: self.kind,
            nodes: self.nodes.as_ref(),
        }
    }
}

fn draw_node_params(kind: Kind, count: usize) -> NodeParams {
    // One fixed seed per problem so every run sees the same network.
    let seed = match kind {
        Kind::Dra => 0xD7A0_0001,
        _ => 0xD990_0002,
    };
    let mut r = rng::stream(seed, rng::streams::PROBLEM);
    let mut nodes = NodeParams {
        cost_base: Vec::with_capacity(count),
        quality_base: Vec::with_capacity(count),
        phase: Vec::with_capacity(count),
    };
    for _ in 0..count {
        nodes.cost_base.push(r.random_range(0.5..=1.5));
        nodes.quality_base.push(r.random_range(0.5..=2.0));
        nodes.phase.push(r.random_range(0.0..=std::f64::consts::PI));
    }
    nodes
}

/// Uniform parameter points: `count` points on `[0, 1]` for one dimension,
/// a square lattice with at least `count` points thinned to `count` for two.
fn parameter_grid(dims: usize, count: usize) -> Vec<Vec<f64>> {
    match dims {
        1 => (0..count)
            .map(|i| vec![i as f64 / (count - 1).max(1) as f64])
            .collect(),
        _ => {
            let side = ((count as f64).sqrt().ceil() as usize).max(2);
            let mut grid = Vec::with_capacity(side * side);
            for i in 0..side {
                for j in 0..side {
                    grid.push(vec![i as f64 / (side - 1) as f64, j as f64 / (side - 1) as f64]);
                }
            }
            thin_evenly(grid, count)
        }
    }
}

fn thin_evenly<T>(items: Vec<T>, n: usize) -> Vec<T> {
    let len = items.len();
    if len <= n {
        return items;
    }
    let mut picks: Vec<usize> = (0..n)
        .map(|i| ((i as f64) * (len - 1) as f64 / (n - 1).max(1) as f64).round() as usize)
        .collect();
    picks.dedup();
    let mut items: Vec<Option<T>> = items.into_iter().map(Some).collect();
    picks.into_iter().map(|i| items[i].take().expect("unique pick")).collect()
}

/// `G(t) = sin(pi t / 2)`, shared by most of the suite.
pub fn moving_optimum(t: f64) -> f64 {
    (0.5 * std::f64::consts::PI * t).sin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dominates;

    const D: usize = DEFAULT_NUM_VARS;

    /// t in the first quarter-period with |sin(pi t / 2)| = 2/7.
    fn t_flat() -> f64 {
        (2.0f64 / 7.0).asin() * 2.0 / std::f64::consts::PI
    }

    fn balanced_nodes() -> NodeParams {
        NodeParams {
            cost_base: vec![1.0, 1.0],
            quality_base: vec![1.0, 1.0],
            phase: vec![0.0, std::f64::consts::PI],
        }
    }

    #[test]
    fn unknown_problem_is_rejected() {
        assert!(matches!(make_problem("UNKNOWN", 10), Err(Error::UnregisteredProblem(_))));
    }

    #[test]
    fn lookup_is_case_insensitive() {
        assert_eq!(make_problem("df6", 10).unwrap().id(), "DF6");
    }

    #[test]
    fn df6_flattens_at_two_sevenths() {
        let t = t_flat();
        assert!((moving_optimum(t).abs() - 2.0 / 7.0).abs() < 1e-15);
        let alpha = 0.2 + 2.8 * moving_optimum(t).abs();
        assert!((alpha - 1.0).abs() < 1e-14);
        let p = make_problem("DF6", D).unwrap();
        for pt in p.sample_true_pf(t, 101).unwrap() {
            assert!((pt[0] + pt[1] - 1.0).abs() <= 0.2 + 1e-12, "{pt:?}");
        }
    }

    #[test]
    fn df6_anchor_point() {
        let p = make_problem("DF6", D).unwrap();
        let t = 0.3;
        let mut x = vec![moving_optimum(t); D];
        x[0] = 0.0;
        let f = p.evaluate(&x, t).unwrap();
        assert_eq!(f, vec![0.0, 1.0]);
    }

    #[test]
    fn fda1_on_the_pareto_set() {
        let p = make_problem("FDA1", D).unwrap();
        let mut x = vec![0.0; D];
        x[0] = 0.5;
        let f = p.evaluate(&x, 0.0).unwrap();
        assert_eq!(f[0], 0.5);
        assert!((f[1] - (1.0 - 0.5f64.sqrt())).abs() < 1e-15);
        assert!((f[1] - 0.29289).abs() < 1e-5);
    }

    #[test]
    fn fda1_three_point_front() {
        let p = make_problem("FDA1", D).unwrap();
        let pf = p.sample_true_pf(0.7, 3).unwrap();
        assert_eq!(pf.len(), 3);
        assert_eq!(pf[0], vec![0.0, 1.0]);
        assert!((pf[1][0] - 0.5).abs() < 1e-15 && (pf[1][1] - (1.0 - 0.5f64.sqrt())).abs() < 1e-15);
        assert_eq!(pf[2], vec![1.0, 0.0]);
    }

    #[test]
    fn dra_on_the_pareto_set() {
        let p = make_problem("DRA", D).unwrap().with_node_params(balanced_nodes()).unwrap();
        let mut x = vec![moving_optimum(0.0).abs(); D];
        x[0] = 1.0;
        let f = p.evaluate(&x, 0.0).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-15 && f[1].abs() < 1e-15, "{f:?}");
    }

    #[test]
    fn dpp_on_the_pareto_set() {
        let p = make_problem("DPP", D).unwrap().with_node_params(balanced_nodes()).unwrap();
        let mut x = vec![0.0; D];
        x[0] = 1.0;
        let f = p.evaluate(&x, 0.0).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-15 && (f[1] - 1.0).abs() < 1e-15, "{f:?}");
    }

    #[test]
    fn node_params_are_fixed_per_problem() {
        let a = make_problem("DRA", D).unwrap();
        let b = make_problem("DRA", D).unwrap();
        assert_eq!(a.node_params(), b.node_params());
        let n = a.node_params().unwrap();
        assert!(n.cost_base.iter().all(|c| (0.5..=1.5).contains(c)));
        assert!(n.quality_base.iter().all(|q| (0.5..=2.0).contains(q)));
        assert!(n.phase.iter().all(|th| (0.0..=std::f64::consts::PI).contains(th)));
    }

    #[test]
    fn out_of_bounds_rejected() {
        let p = make_problem("FDA1", D).unwrap();
        let mut x = vec![0.0; D];
        x[0] = 1.3;
        assert!(matches!(p.evaluate(&x, 0.0), Err(Error::BoundsViolation { index: 0, .. })));
        assert!(p.evaluate(&x[..3], 0.0).is_err());
    }

    #[test]
    fn pf_sample_needs_two_points() {
        let p = make_problem("FDA1", D).unwrap();
        assert!(p.sample_true_pf(0.0, 1).is_err());
    }

    #[test]
    fn bounds_are_proper_for_all() {
        for id in registered_ids() {
            let p = make_problem(id, D).unwrap();
            assert!(p.lower().iter().zip(p.upper()).all(|(l, u)| l < u), "{id}");
        }
    }

    #[test]
    fn fronts_are_non_dominated_and_sized() {
        for id in registered_ids() {
            let p = make_problem(id, D).unwrap();
            for &t in &[0.0, 0.1, 0.35, 0.8, 1.3, 2.6] {
                let pf = p.sample_true_pf(t, 60).unwrap();
                assert!(pf.len() >= 30 && pf.len() <= 60, "{id} t={t}: {} points", pf.len());
                for a in &pf {
                    assert_eq!(a.len(), p.num_objectives());
                    assert!(a.iter().all(|v| v.is_finite()), "{id}: {a:?}");
                    for b in &pf {
                        assert!(!dominates(a, b), "{id} t={t}: {a:?} dominates {b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn pareto_set_points_are_in_bounds() {
        for id in registered_ids() {
            let p = make_problem(id, D).unwrap();
            let ev = p.evaluator();
            for &t in &[0.0, 0.4, 1.0, 1.7] {
                for i in 0..=10 {
                    let u = vec![i as f64 / 10.0; p.num_objectives() - 1];
                    let x = ev.pareto_set_point(&u, t, D);
                    for ((v, lo), hi) in x.iter().zip(p.lower()).zip(p.upper()) {
                        assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12, "{id} t={t}: {x:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn g_penalty_is_one_exactly_on_the_set_and_larger_off_it() {
        for id in ["DF6", "DRA", "DPP"] {
            let p = make_problem(id, D).unwrap();
            let ev = p.evaluator();
            for &t in &[0.1, 0.5, 1.2] {
                let on = ev.pareto_set_point(&[0.4], t, D);
                let mut off = on.clone();
                off[3] = (off[3] + 0.05).min(p.upper()[3]);
                if off[3] == on[3] {
                    off[3] -= 0.1;
                }
                let f_on = p.evaluate(&on, t).unwrap();
                let f_off = p.evaluate(&off, t).unwrap();
                // g multiplies f1 in all three problems
                assert!(f_off[0] > f_on[0], "{id} t={t}");
            }
        }
    }

    #[test]
    fn moving_optimum_has_period_four() {
        for k in 0..40 {
            let t = k as f64 / 10.0;
            assert!((moving_optimum(t) - moving_optimum(t + 4.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_round_trip() {
        let p = make_problem("DF7", D).unwrap();
        let x: Vec<f64> = (0..D).map(|i| p.lower()[i] + 0.3 * (p.upper()[i] - p.lower()[i])).collect();
        let back = p.denormalize(&p.normalize(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_is_pure() {
        let p = make_problem("DF9", D).unwrap();
        let x: Vec<f64> = (0..D).map(|i| if i == 0 { 0.37 } else { -0.2 + 0.05 * i as f64 }).collect();
        let a = p.evaluate(&x, 0.9).unwrap();
        let b = p.evaluate(&x, 0.9).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
