//! IGD, hypervolume, their run-level means, and the inter-environment IGD
//! distance matrix used for triplet mining.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `a` Pareto-dominates `b` (minimization).
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Indices of the non-dominated points, in input order.
pub fn non_dominated_indices(points: &[Vec<f64>]) -> Vec<usize> {
    if points.first().is_some_and(|p| p.len() == 2) {
        return non_dominated_2d(points);
    }
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect()
}

fn non_dominated_2d(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
    });
    let mut keep = vec![false; points.len()];
    let mut best_f2 = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        // group of equal f1; only the minimal f2 within the group survives
        let f1 = points[order[i]][0];
        let group_min = points[order[i]][1];
        let mut j = i;
        while j < order.len() && points[order[j]][0] == f1 {
            let p = &points[order[j]];
            if p[1] == group_min && group_min < best_f2 {
                keep[order[j]] = true;
            }
            j += 1;
        }
        best_f2 = best_f2.min(group_min);
        i = j;
    }
    (0..points.len()).filter(|&i| keep[i]).collect()
}

fn check_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    if b.is_empty() {
        return Err(Error::Empty("solution set"));
    }
    let m = a[0].len();
    if a.iter().chain(b).any(|p| p.len() != m) {
        return Err(Error::Precondition("point sets differ in dimensionality".into()));
    }
    Ok(m)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean over reference points of the distance to the nearest solution.
pub fn igd(reference: &[Vec<f64>], solutions: &[Vec<f64>]) -> Result<f64> {
    check_sets(reference, solutions)?;
    let total: f64 = reference
        .iter()
        .map(|r| {
            solutions
                .iter()
                .map(|s| sq_dist(r, s))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(total / reference.len() as f64)
}

/// Hypervolume dominated by `solutions` and bounded by `ref_point`.
pub fn hv(solutions: &[Vec<f64>], ref_point: &[f64]) -> Result<f64> {
    let m = ref_point.len();
    if !(2..=3).contains(&m) {
        return Err(Error::UnsupportedDimension(m));
    }
    if solutions.iter().any(|p| p.len() != m) {
        return Err(Error::Precondition("point and reference dimensionality differ".into()));
    }
    let inside: Vec<&[f64]> = solutions
        .iter()
        .filter(|p| p.iter().zip(ref_point).all(|(v, r)| v < r))
        .map(Vec::as_slice)
        .collect();
    Ok(match m {
        2 => hv2(&inside, ref_point[0], ref_point[1]),
        _ => hv3(&inside, ref_point),
    })
}

/// Sorted sweep; points must already lie strictly inside the reference box.
fn hv2(points: &[&[f64]], r0: f64, r1: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    let mut ceiling = r1;
    for (x, y) in pts {
        if y < ceiling {
            area += (r0 - x) * (ceiling - y);
            ceiling = y;
        }
    }
    area
}

/// Slice along the third objective and accumulate 2-D areas.
fn hv3(points: &[&[f64]], r: &[f64]) -> f64 {
    let mut pts: Vec<&[f64]> = points.to_vec();
    pts.sort_by(|a, b| a[2].total_cmp(&b[2]));
    let mut volume = 0.0;
    let mut active: Vec<&[f64]> = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        active.push(p);
        let next_z = pts.get(i + 1).map_or(r[2], |q| q[2]);
        let depth = next_z - p[2];
        if depth > 0.0 {
            volume += hv2(&active, r[0], r[1]) * depth;
        }
    }
    volume
}

fn mean(values: &[f64], what: &'static str) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty(what));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn migd(per_env_igd: &[f64]) -> Result<f64> {
    mean(per_env_igd, "per-environment IGD")
}

pub fn mhv(per_env_hv: &[f64]) -> Result<f64> {
    mean(per_env_hv, "per-environment HV")
}

/// Symmetric matrix of averaged directed IGD values between front samples.
pub fn igd_matrix(fronts: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    if fronts.len() < 2 {
        return Err(Error::Precondition(format!(
            "distance matrix needs at least 2 environments, got {}",
            fronts.len()
        )));
    }
    let n = fronts.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (igd(&fronts[i], &fronts[j])? + igd(&fronts[j], &fronts[i])?);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Reference point `scale x nadir` of a front sample.
pub fn reference_point(front: &[Vec<f64>], scale: f64) -> Result<Vec<f64>> {
    let first = front.first().ok_or(Error::Empty("front sample"))?;
    let mut nadir = first.clone();
    for p in front {
        for (n, v) in nadir.iter_mut().zip(p) {
            *n = n.max(*v);
        }
    }
    Ok(nadir.into_iter().map(|v| v * scale).collect())
}

/// Per-environment metric values of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_environment_igd: Vec<f64>,
    pub per_environment_hv: Vec<f64>,
    pub migd: f64,
    pub mhv: f64,
    /// One reference point per environment.
    pub reference_points: Vec<Vec<f64>>,
}

impl MetricReport {
    pub fn new(igd: Vec<f64>, hv: Vec<f64>, reference_points: Vec<Vec<f64>>) -> Result<Self> {
        if igd.len() != hv.len() || igd.len() != reference_points.len() {
            return Err(Error::Precondition("metric vectors differ in length".into()));
        }
        Ok(Self {
            migd: migd(&igd)?,
            mhv: mhv(&hv)?,
            per_environment_igd: igd,
            per_environment_hv: hv,
            reference_points,
        })
    }

    /// One row per environment plus a `summary` row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "env,igd,hv,reference_point")?;
        for (e, ((i, h), r)) in self
            .per_environment_igd
            .iter()
            .zip(&self.per_environment_hv)
            .zip(&self.reference_points)
            .enumerate()
        {
            let r: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{e},{i:e},{h:e},{}", r.join(";"))?;
        }
        writeln!(out, "summary,{:e},{:e},", self.migd, self.mhv)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Vec<f64>> {
        v.iter().map(|&(a, b)| vec![a, b]).collect()
    }

    #[test]
    fn igd_of_identical_sets_is_zero() {
        let a = pts(&[(0.0, 1.0), (0.3, 0.4), (1.0, 0.0)]);
        assert_eq!(igd(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn igd_two_term_mean() {
        let r = pts(&[(0.0, 1.0), (1.0, 0.0)]);
        let s = pts(&[(0.0, 1.0)]);
        let v = igd(&r, &s).unwrap();
        assert!((v - std::f64::consts::SQRT_2 / 2.0).abs() < 1e-15);
        assert!((v - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn igd_rejects_empty_and_ragged() {
        let a = pts(&[(0.0, 1.0)]);
        assert!(igd(&[], &a).is_err());
        assert!(igd(&a, &[]).is_err());
        assert!(igd(&a, &[vec![1.0, 2.0, 3.0]]).is_err());
    }

    #[test]
    fn hv_single_box() {
        assert_eq!(hv(&pts(&[(0.5, 0.5)]), &[1.0, 1.0]).unwrap(), 0.25);
    }

    #[test]
    fn hv_inclusion_exclusion() {
        let v = hv(&pts(&[(0.25, 0.75), (0.75, 0.25)]), &[1.0, 1.0]).unwrap();
        assert_eq!(v, 0.3125);
    }

    #[test]
    fn hv_ignores_points_outside_reference() {
        let v = hv(&pts(&[(0.5, 0.5), (1.5, 0.1), (0.2, 1.0)]), &[1.0, 1.0]).unwrap();
        assert_eq!(v, 0.25);
    }

    #[test]
    fn hv_rejects_four_objectives() {
        assert!(matches!(hv(&[vec![0.0; 4]], &[1.0; 4]), Err(Error::UnsupportedDimension(4))));
    }

    #[test]
    fn hv3_single_and_pair() {
        assert!((hv(&[vec![0.5, 0.5, 0.5]], &[1.0, 1.0, 1.0]).unwrap() - 0.125).abs() < 1e-15);
        // two unit-ish boxes overlapping in a 0.5^3 cube
        let v = hv(&[vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.0]], &[1.0, 1.0, 1.0]).unwrap();
        let expect = 0.25 + 0.5 - 0.5 * 0.5 * 0.5;
        assert!((v - expect).abs() < 1e-15, "{v}");
    }

    #[test]
    fn means() {
        assert!((migd(&[0.1, 0.3]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(mhv(&[0.42]).unwrap(), 0.42);
        assert_eq!(migd(&[1.0, 2.0, 4.0]).unwrap(), migd(&[4.0, 1.0, 2.0]).unwrap());
        assert!(migd(&[]).is_err());
        assert!(mhv(&[]).is_err());
    }

    #[test]
    fn igd_matrix_cases() {
        let a = pts(&[(0.0, 1.0), (1.0, 0.0)]);
        assert_eq!(igd_matrix(&[a.clone(), a.clone()]).unwrap(), vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let d = igd_matrix(&[pts(&[(0.0, 0.0)]), pts(&[(1.0, 0.0)])]).unwrap();
        assert_eq!(d[0][1], 1.0);
        assert_eq!(d[1][0], 1.0);
        assert!(igd_matrix(&[a]).is_err());
    }

    #[test]
    fn non_dominated_filter_keeps_duplicates() {
        let p = pts(&[(0.0, 1.0), (0.5, 0.5), (0.5, 0.5), (0.6, 0.6), (1.0, 0.0), (0.5, 0.7)]);
        assert_eq!(non_dominated_indices(&p), vec![0, 1, 2, 4]);
    }

    #[test]
    fn report_csv_has_summary_row() {
        let r = MetricReport::new(vec![0.1, 0.3], vec![0.5, 0.7], vec![vec![1.1, 1.1]; 2]).unwrap();
        assert!((r.migd - 0.2).abs() < 1e-15);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("summary,"));
    }

    fn point_set(m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, m), 1..25)
    }

    proptest! {
        #[test]
        fn igd_translation_invariant(a in point_set(2), b in point_set(2), dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
            let shift = |s: &Vec<Vec<f64>>| s.iter().map(|p| vec![p[0] + dx, p[1] + dy]).collect::<Vec<_>>();
            let base = igd(&a, &b).unwrap();
            let moved = igd(&shift(&a), &shift(&b)).unwrap();
            prop_assert!((base - moved).abs() < 1e-9);
        }

        #[test]
        fn igd_zero_iff_covered(a in point_set(3), extra in point_set(3)) {
            let mut b = a.clone();
            b.extend(extra.iter().cloned());
            prop_assert_eq!(igd(&a, &b).unwrap(), 0.0);
        }

        #[test]
        fn hv_monotone_under_additions(a in point_set(3), p in proptest::collection::vec(0.0f64..1.0, 3)) {
            let r = [1.0, 1.0, 1.0];
            let before = hv(&a, &r).unwrap();
            let mut b = a.clone();
            b.push(p);
            prop_assert!(hv(&b, &r).unwrap() >= before - 1e-12);
        }

        #[test]
        fn hv2_matches_inclusion_exclusion_brute_force(a in point_set(2)) {
            // Grid-free oracle: union area via inclusion-exclusion over sorted strips.
            let r = [1.0, 1.0];
            let mut xs: Vec<f64> = a.iter().map(|p| p[0]).chain([1.0]).collect();
            xs.sort_by(f64::total_cmp);
            let mut area = 0.0;
            for w in xs.windows(2) {
                let lo = a.iter().filter(|p| p[0] <= w[0]).map(|p| p[1]).fold(1.0, f64::min);
                area += (w[1] - w[0]) * (1.0 - lo);
            }
            prop_assert!((hv(&a, &r).unwrap() - area).abs() < 1e-12);
        }

        #[test]
        fn igd_matrix_symmetric_zero_diagonal(sets in proptest::collection::vec(point_set(2), 2..6)) {
            let d = igd_matrix(&sets).unwrap();
            for i in 0..sets.len() {
                prop_assert_eq!(d[i][i], 0.0);
                for j in 0..sets.len() {
                    prop_assert_eq!(d[i][j], d[j][i]);
                    prop_assert!(d[i][j] >= 0.0);
                }
            }
        }
    }
}
