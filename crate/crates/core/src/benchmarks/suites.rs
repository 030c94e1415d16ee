//! Objective functions and Pareto-set parameterizations.
//!
//! Every problem exposes two things: `evaluate` and `pareto_set_point`, which
//! maps natural front parameters `u` in `[0, 1]^(M-1)` to a decision vector on
//! the Pareto set at time `t`. Front samples are obtained by evaluating those
//! points, so the sampler and the evaluator cannot drift apart.

use std::f64::consts::{FRAC_PI_2, PI};

/// Per-node environment parameters of the network problems.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeParams {
    pub cost_base: Vec<f64>,
    pub quality_base: Vec<f64>,
    pub phase: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Fda1,
    Fda2,
    Fda3,
    Fda4,
    Fda5,
    Df1,
    Df2,
    Df3,
    Df4,
    Df5,
    Df6,
    Df7,
    Df8,
    Df9,
    Df10,
    Df11,
    Df12,
    Df13,
    Df14,
    Dra,
    Dpp,
    P64,
    P67,
    He2,
    Dimp2,
    Jy1,
    Dmop2,
}

impl Kind {
    pub const ALL: [Kind; 27] = [
        Kind::Fda1,
        Kind::Fda2,
        Kind::Fda3,
        Kind::Fda4,
        Kind::Fda5,
        Kind::Df1,
        Kind::Df2,
        Kind::Df3,
        Kind::Df4,
        Kind::Df5,
        Kind::Df6,
        Kind::Df7,
        Kind::Df8,
        Kind::Df9,
        Kind::Df10,
        Kind::Df11,
        Kind::Df12,
        Kind::Df13,
        Kind::Df14,
        Kind::Dra,
        Kind::Dpp,
        Kind::P64,
        Kind::P67,
        Kind::He2,
        Kind::Dimp2,
        Kind::Jy1,
        Kind::Dmop2,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Kind::Fda1 => "FDA1",
            Kind::Fda2 => "FDA2",
            Kind::Fda3 => "FDA3",
            Kind::Fda4 => "FDA4",
            Kind::Fda5 => "FDA5",
            Kind::Df1 => "DF1",
            Kind::Df2 => "DF2",
            Kind::Df3 => "DF3",
            Kind::Df4 => "DF4",
            Kind::Df5 => "DF5",
            Kind::Df6 => "DF6",
            Kind::Df7 => "DF7",
            Kind::Df8 => "DF8",
            Kind::Df9 => "DF9",
            Kind::Df10 => "DF10",
            Kind::Df11 => "DF11",
            Kind::Df12 => "DF12",
            Kind::Df13 => "DF13",
            Kind::Df14 => "DF14",
            Kind::Dra => "DRA",
            Kind::Dpp => "DPP",
            Kind::P64 => "P64",
            Kind::P67 => "P67",
            Kind::He2 => "HE2",
            Kind::Dimp2 => "DIMP2",
            Kind::Jy1 => "JY1",
            Kind::Dmop2 => "DMOP2",
        }
    }

    pub fn num_objectives(self) -> usize {
        match self {
            Kind::Fda4 | Kind::Fda5 | Kind::Df10 | Kind::Df11 | Kind::Df12 | Kind::Df13 | Kind::Df14 => 3,
            _ => 2,
        }
    }

    pub fn is_training(self) -> bool {
        matches!(self, Kind::P64 | Kind::P67 | Kind::He2 | Kind::Dimp2 | Kind::Jy1 | Kind::Dmop2)
    }

    /// Test problem a training problem is (near-)isomorphic to, if any.
    pub fn isomorphic_to(self) -> Option<&'static str> {
        match self {
            Kind::Jy1 => Some("DF5"),
            Kind::Dmop2 => Some("DF1"),
            _ => None,
        }
    }

    /// Whether the Pareto-set sweep can contain dominated or infeasible points
    /// that must be filtered out of front samples.
    pub(crate) fn front_needs_filter(self) -> bool {
        matches!(
            self,
            Kind::Df5
                | Kind::Df6
                | Kind::Df8
                | Kind::Df9
                | Kind::Df12
                | Kind::Df13
                | Kind::Df14
                | Kind::He2
                | Kind::Jy1
        )
    }

    pub(crate) fn bounds(self, d: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lower = vec![0.0; d];
        let mut upper = vec![1.0; d];
        let m = self.num_objectives();
        let set_tail = |lo: &mut Vec<f64>, hi: &mut Vec<f64>, from: usize, l: f64, u: f64| {
            for i in from..d {
                lo[i] = l;
                hi[i] = u;
            }
        };
        match self {
            Kind::Fda1
            | Kind::Fda2
            | Kind::Fda3
            | Kind::Df5
            | Kind::Df6
            | Kind::Df8
            | Kind::Df9
            | Kind::P67
            | Kind::Jy1
            | Kind::Dmop2 => set_tail(&mut lower, &mut upper, 1, -1.0, 1.0),
            Kind::Df3 => set_tail(&mut lower, &mut upper, 1, -1.0, 2.0),
            Kind::Df4 => set_tail(&mut lower, &mut upper, 0, -2.0, 2.0),
            Kind::Df7 => {
                lower[0] = 1.0;
                upper[0] = 4.0;
            }
            Kind::Df10 | Kind::Df12 | Kind::Df13 | Kind::Df14 => {
                set_tail(&mut lower, &mut upper, m - 1, -1.0, 1.0)
            }
            Kind::Dimp2 => set_tail(&mut lower, &mut upper, 1, -2.0, 2.0),
            Kind::Fda4 | Kind::Fda5 | Kind::Df1 | Kind::Df2 | Kind::Df11 | Kind::Dra | Kind::Dpp | Kind::P64 | Kind::He2 => {}
        }
        (lower, upper)
    }
}

fn sin_half_pi(t: f64) -> f64 {
    (0.5 * PI * t).sin()
}

fn sq(v: f64) -> f64 {
    v * v
}

/// `sum_{i >= from} (x_i - target)^2`
fn shifted_sq_sum(x: &[f64], from: usize, target: f64) -> f64 {
    x[from..].iter().map(|&v| sq(v - target)).sum()
}

fn spherical3(g: f64, a: f64, b: f64) -> Vec<f64> {
    // a, b are angles in [0, pi/2]
    vec![g * a.cos() * b.cos(), g * a.cos() * b.sin(), g * a.sin()]
}

pub(crate) struct Eval<'a> {
    pub kind: Kind,
    pub nodes: Option<&'a NodeParams>,
}

impl Eval<'_> {
    pub fn objectives(&self, x: &[f64], t: f64) -> Vec<f64> {
        let n = x.len();
        match self.kind {
            Kind::Fda1 => {
                let g = 1.0 + shifted_sq_sum(x, 1, sin_half_pi(t));
                let f1 = x[0];
                vec![f1, g * (1.0 - (f1 / g).sqrt())]
            }
            Kind::Fda2 => {
                let split = fda2_split(n);
                let h_t = 0.75 + 0.7 * sin_half_pi(t);
                let g = 1.0 + x[1..split].iter().map(|v| v * v).sum::<f64>();
                let expo = h_t + shifted_sq_sum(&x[..], split, 0.5 * h_t);
                let f1 = x[0];
                vec![f1, g * (1.0 - (f1 / g).powf(1.0 / expo))]
            }
            Kind::Fda3 => {
                let f_t = 10f64.powf(2.0 * sin_half_pi(t));
                let g_t = sin_half_pi(t).abs();
                let g = 1.0 + g_t + shifted_sq_sum(x, 1, g_t);
                let f1 = x[0].powf(f_t);
                vec![f1, g * (1.0 - (f1 / g).sqrt())]
            }
            Kind::Fda4 => {
                let g_t = sin_half_pi(t).abs();
                let g = shifted_sq_sum(x, 2, g_t);
                spherical3(1.0 + g, x[0] * FRAC_PI_2, x[1] * FRAC_PI_2)
            }
            Kind::Fda5 => {
                let g_t = sin_half_pi(t).abs();
                let f_t = 1.0 + 100.0 * sin_half_pi(t).powi(4);
                let g = g_t + shifted_sq_sum(x, 2, g_t);
                spherical3(1.0 + g, x[0].powf(f_t) * FRAC_PI_2, x[1].powf(f_t) * FRAC_PI_2)
            }
            Kind::Df1 => {
                let g_t = sin_half_pi(t).abs();
                let h = 0.75 * sin_half_pi(t) + 1.25;
                let g = 1.0 + shifted_sq_sum(x, 1, g_t);
                vec![x[0], g * (1.0 - (x[0] / g).powf(h))]
            }
            Kind::Df2 => {
                let g_t = sin_half_pi(t).abs();
                let r = df2_position_index(n, g_t);
                let g = 1.0
                    + x.iter()
                        .enumerate()
                        .filter(|&(i, _)| i != r)
                        .map(|(_, &v)| sq(v - g_t))
                        .sum::<f64>();
                vec![x[r], g * (1.0 - (x[r] / g).sqrt())]
            }
            Kind::Df3 => {
                let g_t = sin_half_pi(t);
                let h = g_t + 1.5;
                let target = g_t + x[0].powf(h);
                let g = 1.0 + shifted_sq_sum(x, 1, target);
                vec![x[0], g * (1.0 - (x[0] / g).powf(h))]
            }
            Kind::Df4 => {
                let (a, b, h) = df4_params(t);
                let g = 1.0
                    + (1..n)
                        .map(|i| sq(x[i] - a * x[0] * x[0] / (i + 1) as f64))
                        .sum::<f64>();
                vec![g * (x[0] - a).abs().powf(h), g * (x[0] - a - b).abs().powf(h)]
            }
            Kind::Df5 => {
                let g_t = sin_half_pi(t);
                let w = (10.0 * g_t).floor();
                let g = 1.0 + shifted_sq_sum(x, 1, g_t);
                let ripple = 0.02 * (w * PI * x[0]).sin();
                vec![g * (x[0] + ripple), g * (1.0 - x[0] + ripple)]
            }
            Kind::Df6 => {
                let g_t = sin_half_pi(t);
                let alpha = 0.2 + 2.8 * g_t.abs();
                let g = 1.0
                    + x[1..]
                        .iter()
                        .map(|&v| {
                            let y = v - g_t;
                            g_t.abs() * y * y - 10.0 * (2.0 * PI * y).cos() + 10.0
                        })
                        .sum::<f64>();
                let ripple = 0.1 * (3.0 * PI * x[0]).sin();
                vec![g * (x[0] + ripple).powf(alpha), g * (1.0 - x[0] + ripple).powf(alpha)]
            }
            Kind::Df7 => {
                let a = 5.0 * (0.5 * PI * t).cos();
                let target = 1.0 / (1.0 + (a * (x[0] - 2.5)).exp());
                let g = 1.0 + shifted_sq_sum(x, 1, target);
                vec![g * (1.0 + t) / x[0], g * x[0] / (1.0 + t)]
            }
            Kind::Df8 => {
                let g_t = sin_half_pi(t);
                let a = 2.25 + 2.0 * (2.0 * PI * t).cos();
                let b = 100.0 * g_t * g_t;
                let target = g_t * (4.0 * PI * x[0].powf(b)).sin() / (1.0 + g_t.abs());
                let g = 1.0 + shifted_sq_sum(x, 1, target);
                let ripple = 0.1 * (3.0 * PI * x[0]).sin();
                vec![g * (x[0] + ripple), g * (1.0 - x[0] + ripple).powf(a)]
            }
            Kind::Df9 => {
                let nt = df9_segments(t);
                let g = 1.0
                    + (1..n)
                        .map(|i| sq(x[i] - (4.0 * t + x[0] + x[i - 1]).cos()))
                        .sum::<f64>();
                let bump = ((0.1 + 0.5 / nt) * (2.0 * nt * PI * x[0]).sin()).max(0.0);
                vec![g * (x[0] + bump), g * (1.0 - x[0] + bump)]
            }
            Kind::Df10 => {
                let g_t = sin_half_pi(t);
                let h = 2.25 + 2.0 * (0.5 * PI * t).cos();
                let target = (2.0 * PI * (x[0] + x[1])).sin() / (1.0 + g_t.abs());
                let g = 1.0 + shifted_sq_sum(x, 2, target);
                let (s1, c1) = (0.5 * PI * x[0]).sin_cos();
                let (s2, c2) = (0.5 * PI * x[1]).sin_cos();
                vec![
                    g * s1.powf(h),
                    g * s2.powf(h) * c1.powf(h),
                    g * c2.powf(h) * c1.powf(h),
                ]
            }
            Kind::Df11 => {
                let g_t = sin_half_pi(t).abs();
                let g = 1.0 + g_t + shifted_sq_sum(x, 2, 0.5 * g_t * x[0]);
                let y1 = PI * g_t / 6.0 + (FRAC_PI_2 - PI * g_t / 3.0) * x[0];
                let y2 = PI * g_t / 6.0 + (FRAC_PI_2 - PI * g_t / 3.0) * x[1];
                vec![g * y1.sin(), g * y2.sin() * y1.cos(), g * y2.cos() * y1.cos()]
            }
            Kind::Df12 => {
                let g = df12_g(x, t);
                let (s1, c1) = (0.5 * PI * x[0]).sin_cos();
                let (s2, c2) = (0.5 * PI * x[1]).sin_cos();
                vec![g * c2 * c1, g * s2 * c1, g * s1]
            }
            Kind::Df13 => {
                let g_t = sin_half_pi(t);
                let p = (6.0 * g_t).floor();
                let g = 1.0 + shifted_sq_sum(x, 2, g_t);
                let (s1, c1) = (0.5 * PI * x[0]).sin_cos();
                let (s2, c2) = (0.5 * PI * x[1]).sin_cos();
                vec![
                    g * c1 * c1,
                    g * c2 * c2,
                    g * (s1 * s1 + s1 * sq((p * PI * x[0]).cos()) + s2 * s2 + s2 * sq((p * PI * x[1]).cos())),
                ]
            }
            Kind::Df14 => {
                let g_t = sin_half_pi(t);
                let g = 1.0 + shifted_sq_sum(x, 2, g_t);
                let y = 0.5 + g_t * (x[0] - 0.5);
                let ry = y + 0.05 * (6.0 * PI * y).sin();
                vec![
                    g * (1.0 - y + 0.05 * (6.0 * PI * y).sin()),
                    g * (1.0 - x[1] + 0.05 * (6.0 * PI * x[1]).sin()) * ry,
                    g * (x[1] + 0.05 * (6.0 * PI * x[1]).sin()) * ry,
                ]
            }
            Kind::Dra => {
                let nodes = self.nodes.expect("DRA carries node parameters");
                let (c_bar, q_bar) = dra_indices(nodes, t);
                let g = 1.0 + 9.0 * shifted_sq_sum(x, 1, sin_half_pi(t).abs());
                vec![c_bar * x[0] * g, q_bar - q_bar * x[0].sqrt() / g]
            }
            Kind::Dpp => {
                let nodes = self.nodes.expect("DPP carries node parameters");
                let (d_bar, cd_bar) = dpp_indices(nodes, t);
                let g = 1.0 + 9.0 * shifted_sq_sum(x, 1, sin_half_pi(t).abs());
                let v = 0.2 + 0.8 * x[0];
                vec![d_bar / v * g, cd_bar * v * v * g]
            }
            Kind::P64 => {
                let alpha = 0.2 + 3.0 * sin_half_pi(t).abs();
                let g = 1.0 + 9.0 * x[1..].iter().map(|v| v * v).sum::<f64>();
                vec![x[0], g * (1.0 - (x[0] / g).powf(alpha))]
            }
            Kind::P67 => {
                let g = 1.0
                    + 9.0
                        * (1..n)
                            .map(|i| sq(x[i] - p67_shift(i, t)))
                            .sum::<f64>();
                vec![x[0], g * (1.0 - (x[0] / g).sqrt())]
            }
            Kind::He2 => {
                let h = 0.75 * sin_half_pi(t) + 1.25;
                let g = 1.0 + 9.0 / (n - 1) as f64 * x[1..].iter().sum::<f64>();
                let r = x[0] / g;
                let hh = 1.0 - r.sqrt().powf(h) - r.powf(h) * (10.0 * PI * x[0]).sin();
                vec![x[0], g * hh]
            }
            Kind::Dimp2 => {
                let g = 1.0
                    + 2.0 * (n - 1) as f64
                    + (1..n)
                        .map(|i| {
                            let y = x[i] - dimp2_target(i, n, t);
                            y * y - 2.0 * (3.0 * PI * y).cos()
                        })
                        .sum::<f64>();
                vec![x[0], g * (1.0 - (x[0] / g).sqrt())]
            }
            Kind::Jy1 => {
                let g = shifted_sq_sum(x, 1, sin_half_pi(t));
                let ripple = 0.05 * (6.0 * PI * x[0]).sin();
                vec![(1.0 + g) * (x[0] + ripple), (1.0 + g) * (1.0 - x[0] + ripple)]
            }
            Kind::Dmop2 => {
                let h = 0.75 * sin_half_pi(t) + 1.25;
                let g = 1.0 + shifted_sq_sum(x, 1, sin_half_pi(t));
                vec![x[0], g * (1.0 - (x[0] / g).powf(h))]
            }
        }
    }

    /// Decision vector on the Pareto set for front parameters `u`.
    ///
    /// `u` has `M - 1` entries in `[0, 1]`.
    pub fn pareto_set_point(&self, u: &[f64], t: f64, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        let fill = |x: &mut Vec<f64>, from: usize, v: f64| x[from..].iter_mut().for_each(|e| *e = v);
        match self.kind {
            Kind::Fda1 | Kind::Df5 | Kind::Df6 | Kind::Jy1 | Kind::Dmop2 => {
                x[0] = u[0];
                fill(&mut x, 1, sin_half_pi(t));
            }
            Kind::Fda2 => {
                let split = fda2_split(n);
                let h_t = 0.75 + 0.7 * sin_half_pi(t);
                x[0] = u[0];
                fill(&mut x, split, 0.5 * h_t);
            }
            Kind::Fda3 => {
                // sample uniformly in f1 = x1^F
                let f_t = 10f64.powf(2.0 * sin_half_pi(t));
                x[0] = u[0].powf(1.0 / f_t);
                fill(&mut x, 1, sin_half_pi(t).abs());
            }
            Kind::Fda4 => {
                x[0] = u[0];
                x[1] = u[1];
                fill(&mut x, 2, sin_half_pi(t).abs());
            }
            Kind::Fda5 => {
                let f_t = 1.0 + 100.0 * sin_half_pi(t).powi(4);
                x[0] = u[0].powf(1.0 / f_t);
                x[1] = u[1].powf(1.0 / f_t);
                fill(&mut x, 2, sin_half_pi(t).abs());
            }
            Kind::Df1 | Kind::Dra | Kind::Dpp => {
                x[0] = u[0];
                fill(&mut x, 1, sin_half_pi(t).abs());
            }
            Kind::Df2 => {
                let g_t = sin_half_pi(t).abs();
                x.iter_mut().for_each(|e| *e = g_t);
                x[df2_position_index(n, g_t)] = u[0];
            }
            Kind::Df3 => {
                let g_t = sin_half_pi(t);
                x[0] = u[0];
                fill(&mut x, 1, g_t + u[0].powf(g_t + 1.5));
            }
            Kind::Df4 => {
                let (a, b, _) = df4_params(t);
                x[0] = a + u[0] * ((a + b).min(2.0) - a);
                for i in 1..n {
                    x[i] = a * x[0] * x[0] / (i + 1) as f64;
                }
            }
            Kind::Df7 => {
                let a = 5.0 * (0.5 * PI * t).cos();
                x[0] = 1.0 + 3.0 * u[0];
                let v = 1.0 / (1.0 + (a * (x[0] - 2.5)).exp());
                fill(&mut x, 1, v);
            }
            Kind::Df8 => {
                let g_t = sin_half_pi(t);
                let b = 100.0 * g_t * g_t;
                x[0] = u[0];
                fill(&mut x, 1, g_t * (4.0 * PI * u[0].powf(b)).sin() / (1.0 + g_t.abs()));
            }
            Kind::Df9 => {
                x[0] = u[0];
                for i in 1..n {
                    x[i] = (4.0 * t + x[0] + x[i - 1]).cos();
                }
            }
            Kind::Df10 => {
                let g_t = sin_half_pi(t);
                x[0] = u[0];
                x[1] = u[1];
                fill(&mut x, 2, (2.0 * PI * (u[0] + u[1])).sin() / (1.0 + g_t.abs()));
            }
            Kind::Df11 => {
                let g_t = sin_half_pi(t).abs();
                x[0] = u[0];
                x[1] = u[1];
                fill(&mut x, 2, 0.5 * g_t * u[0]);
            }
            Kind::Df12 => {
                x[0] = u[0];
                x[1] = u[1];
                fill(&mut x, 2, (t * u[0]).sin());
            }
            Kind::Df13 | Kind::Df14 => {
                x[0] = u[0];
                x[1] = u[1];
                fill(&mut x, 2, sin_half_pi(t));
            }
            Kind::P64 | Kind::He2 => {
                x[0] = u[0];
            }
            Kind::P67 => {
                x[0] = u[0];
                for i in 1..n {
                    x[i] = p67_shift(i, t);
                }
            }
            Kind::Dimp2 => {
                x[0] = u[0];
                for i in 1..n {
                    x[i] = dimp2_target(i, n, t);
                }
            }
        }
        x
    }

    /// Whether a Pareto-set sweep point actually attains the minimal distance
    /// term. Only DF12 has sweep points that fail this.
    pub fn on_front(&self, x: &[f64], t: f64) -> bool {
        match self.kind {
            Kind::Df12 => df12_g(x, t) - 1.0 < 1e-12,
            _ => true,
        }
    }
}

fn fda2_split(n: usize) -> usize {
    // x_II occupies indices [1, split), x_III occupies [split, n)
    1 + (n - 1) / 2
}

fn df2_position_index(n: usize, g_t: f64) -> usize {
    ((n - 1) as f64 * g_t).floor() as usize
}

fn df4_params(t: f64) -> (f64, f64, f64) {
    let a = sin_half_pi(t);
    let b = 1.0 + (0.5 * PI * t).cos().abs();
    (a, b, 1.5 + a)
}

fn df9_segments(t: f64) -> f64 {
    1.0 + (10.0 * sin_half_pi(t).abs()).floor()
}

fn df12_g(x: &[f64], t: f64) -> f64 {
    let k = 10.0 * (PI * t).sin();
    let dist: f64 = x[2..].iter().map(|&v| sq(v - (t * x[0]).sin())).sum();
    let prod: f64 = x[..2]
        .iter()
        .map(|&v| ((k * (2.0 * v - 1.0)).floor() * FRAC_PI_2).sin())
        .product();
    1.0 + dist + prod.abs()
}

/// Alternating shift `+|G|, -|G|, ...` for variables 2..n (1-based).
fn p67_shift(i: usize, t: f64) -> f64 {
    let g = sin_half_pi(t).abs();
    if i % 2 == 1 {
        g
    } else {
        -g
    }
}

fn dimp2_target(i: usize, n: usize, t: f64) -> f64 {
    sq((0.5 * PI * t + 2.0 * PI * ((i + 1) as f64 / (n + 1) as f64)).sin())
}

fn dra_indices(nodes: &NodeParams, t: f64) -> (f64, f64) {
    let k = nodes.phase.len() as f64;
    let mut c = 0.0;
    let mut q = 0.0;
    for ((cb, qb), th) in nodes.cost_base.iter().zip(&nodes.quality_base).zip(&nodes.phase) {
        c += cb * (1.0 + 0.1 * (0.5 * PI * t + th).sin());
        q += qb * (1.0 + 0.1 * (0.5 * PI * t + th).cos());
    }
    (c / k, q / k)
}

fn dpp_indices(nodes: &NodeParams, t: f64) -> (f64, f64) {
    let k = nodes.phase.len() as f64;
    let mut d = 0.0;
    let mut cd = 0.0;
    for th in &nodes.phase {
        let di = 1.0 + 0.2 * (0.5 * PI * t + th).sin();
        let ci = 1.0 + 0.2 * (0.5 * PI * t + th).cos();
        d += di;
        cd += ci * di;
    }
    (d / k, cd / k)
}
