//! Single-level Haar analysis and selective synthesis.
//!
//! A trajectory window (rows are time steps, columns are objectives) is split
//! into a low-frequency trend and a high-frequency detail stream, both with the
//! original number of rows. Odd-length windows are padded by repeating the
//! last row and truncated back after synthesis.

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Historical objective sequence, `L x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    values: Array2<f64>,
}

impl TrajectoryWindow {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Empty("trajectory window"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("trajectory window contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    /// Build from a list of objective vectors ordered oldest first.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let len = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Precondition("ragged trajectory rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((len, m), flat)
            .map_err(|e| Error::Precondition(e.to_string()))?;
        Self::new(values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn num_objectives(&self) -> usize {
        self.values.ncols()
    }

    /// The window padded to even length by edge replication.
    pub fn padded(&self) -> Array2<f64> {
        pad_even(&self.values)
    }
}

/// Trend and detail streams, each with the shape of the unpadded input.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledWindow {
    pub low: Array2<f64>,
    pub high: Array2<f64>,
}

/// One level of the orthonormal Haar transform of an even-length sequence.
pub fn dwt_haar(seq: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if seq.is_empty() || seq.len() % 2 != 0 {
        return Err(Error::Precondition(format!(
            "haar transform needs a non-empty even-length sequence, got length {}",
            seq.len()
        )));
    }
    let (low, high) = seq
        .chunks_exact(2)
        .map(|p| ((p[0] + p[1]) * INV_SQRT2, (p[0] - p[1]) * INV_SQRT2))
        .unzip();
    Ok((low, high))
}

/// Inverse of [`dwt_haar`].
pub fn idwt_haar(low: &[f64], high: &[f64]) -> Result<Vec<f64>> {
    if low.len() != high.len() {
        return Err(Error::Precondition("coefficient bands differ in length".into()));
    }
    Ok(low
        .iter()
        .zip(high)
        .flat_map(|(&c, &d)| [(c + d) * INV_SQRT2, (c - d) * INV_SQRT2])
        .collect())
}

fn pad_even(values: &Array2<f64>) -> Array2<f64> {
    if values.nrows() % 2 == 0 {
        return values.clone();
    }
    let last = values.row(values.nrows() - 1).to_owned();
    let mut out = values.clone();
    out.push_row(last.view()).expect("row width matches");
    out
}

fn decouple_column(col: ArrayView1<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    // Synthesis from one band: c_low / sqrt(2) = (a + b) / 2 and
    // c_high / sqrt(2) = (a - b) / 2. The halved form is exact for constant pairs.
    let seq: Vec<f64> = col.iter().copied().collect();
    let mut low = Vec::with_capacity(seq.len());
    let mut high = Vec::with_capacity(seq.len());
    for p in seq.chunks_exact(2) {
        let mean = 0.5 * (p[0] + p[1]);
        let half_diff = 0.5 * (p[0] - p[1]);
        low.extend([mean, mean]);
        high.extend([half_diff, -half_diff]);
    }
    (low, high)
}

/// Split a window into trend and detail streams of the original length.
pub fn decouple(window: &TrajectoryWindow) -> DecoupledWindow {
    decouple_matrix(window.values())
}

/// [`decouple`] on a raw `L x M` matrix. Rows are time steps.
pub fn decouple_matrix(values: &Array2<f64>) -> DecoupledWindow {
    let rows = values.nrows();
    let padded = pad_even(values);
    let mut low = Array2::zeros((rows, values.ncols()));
    let mut high = Array2::zeros((rows, values.ncols()));
    for (j, col) in padded.axis_iter(Axis(1)).enumerate() {
        let (l, h) = decouple_column(col);
        for i in 0..rows {
            low[[i, j]] = l[i];
            high[[i, j]] = h[i];
        }
    }
    DecoupledWindow { low, high }
}
