//! Dynamic time warping between univariate sequences.
//!
//! The distance is `(min over admissible paths of sum |x_i - y_j|^q)^(1/q)`,
//! evaluated by the usual O(|x| * |y|) recurrence. An optional Sakoe-Chiba
//! band restricts cells to `|i - j| <= band`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// DTW exponent and optional warping band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtwParams {
    pub q: f64,
    pub band: Option<usize>,
}

impl Default for DtwParams {
    fn default() -> Self {
        Self { q: 2.0, band: None }
    }
}

impl DtwParams {
    pub fn with_band(mut self, band: usize) -> Self {
        self.band = Some(band);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q.is_finite() && self.q > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dtw exponent q must be positive, got {}",
                self.q
            )));
        }
        Ok(())
    }

    #[inline]
    fn pointwise(&self, a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        if self.q == 2.0 {
            d * d
        } else if self.q == 1.0 {
            d
        } else {
            d.powf(self.q)
        }
    }

    #[inline]
    fn finish(&self, total: f64) -> f64 {
        if self.q == 2.0 {
            total.sqrt()
        } else if self.q == 1.0 {
            total
        } else {
            total.powf(1.0 / self.q)
        }
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        self.band.is_none_or(|r| i.abs_diff(j) <= r)
    }

    fn check(&self, x: &[f64], y: &[f64]) -> Result<()> {
        self.validate()?;
        if x.is_empty() || y.is_empty() {
            return Err(Error::EmptyInput("dtw sequence"));
        }
        if let Some(band) = self.band {
            if x.len().abs_diff(y.len()) > band {
                return Err(Error::InfeasibleBand {
                    band,
                    len_a: x.len(),
                    len_b: y.len(),
                });
            }
        }
        Ok(())
    }
}

/// An alignment between two sequences as 0-based index pairs, from `(0, 0)`
/// to `(len_x - 1, len_y - 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpingPath {
    pairs: Vec<(usize, usize)>,
}

impl WarpingPath {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks that the path runs corner to corner with unit steps.
    pub fn is_admissible(&self, len_x: usize, len_y: usize) -> bool {
        let (Some(&first), Some(&last)) = (self.pairs.first(), self.pairs.last()) else {
            return false;
        };
        if first != (0, 0) || last != (len_x - 1, len_y - 1) {
            return false;
        }
        self.pairs.windows(2).all(|w| {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
        })
    }

    /// Evaluates the DTW objective along this path.
    pub fn cost(&self, x: &[f64], y: &[f64], params: &DtwParams) -> f64 {
        let total: f64 = self
            .pairs
            .iter()
            .map(|&(i, j)| params.pointwise(x[i], y[j]))
            .sum();
        params.finish(total)
    }
}

/// DTW distance between `x` and `y`.
pub fn dtw_distance(x: &[f64], y: &[f64], params: &DtwParams) -> Result<f64> {
    params.check(x, y)?;
    Ok(params.finish(accumulated_cost(x, y, params)))
}

/// Raw accumulated cost (before the `1/q` power) using two rolling rows.
fn accumulated_cost(x: &[f64], y: &[f64], params: &DtwParams) -> f64 {
    let m = y.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..m {
            if !params.in_band(i, j) {
                cur[j] = f64::INFINITY;
                continue;
            }
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j - 1].min(prev[j]).min(cur[j - 1]),
            };
            cur[j] = params.pointwise(xi, y[j]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// DTW distance together with an optimal warping path.
///
/// Backtracking prefers the diagonal predecessor on ties, then the one that
/// advanced `i`, then the one that advanced `j`.
pub fn dtw_path(x: &[f64], y: &[f64], params: &DtwParams) -> Result<(f64, WarpingPath)> {
    params.check(x, y)?;
    let (n, m) = (x.len(), y.len());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            if !params.in_band(i, j) {
                continue;
            }
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => acc[j - 1],
                (_, 0) => acc[(i - 1) * m],
                _ => acc[(i - 1) * m + j - 1]
                    .min(acc[(i - 1) * m + j])
                    .min(acc[i * m + j - 1]),
            };
            acc[i * m + j] = params.pointwise(x[i], y[j]) + best;
        }
    }

    let mut pairs = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    pairs.push((i, j));
    while (i, j) != (0, 0) {
        (i, j) = match (i, j) {
            (0, _) => (0, j - 1),
            (_, 0) => (i - 1, 0),
            _ => {
                let diag = acc[(i - 1) * m + j - 1];
                let up = acc[(i - 1) * m + j];
                let left = acc[i * m + j - 1];
                if diag <= up && diag <= left {
                    (i - 1, j - 1)
                } else if up <= left {
                    (i - 1, j)
                } else {
                    (i, j - 1)
                }
            }
        };
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok((params.finish(acc[n * m - 1]), WarpingPath { pairs }))
}

/// Pairwise distances: entry `(i, j)` is `dtw_distance(set_a[i], set_b[j])`.
///
/// Rows are evaluated in parallel; each entry is computed independently so
/// the result does not depend on the worker count.
pub fn dtw_matrix<A, B>(set_a: &[A], set_b: &[B], params: &DtwParams) -> Result<Vec<Vec<f64>>>
where
    A: AsRef<[f64]> + Sync,
    B: AsRef<[f64]> + Sync,
{
    params.validate()?;
    let rows: Vec<Result<Vec<f64>>> = set_a
        .par_iter()
        .enumerate()
        .map(|(row, a)| {
            set_b
                .iter()
                .enumerate()
                .map(|(col, b)| {
                    dtw_distance(a.as_ref(), b.as_ref(), params).map_err(|e| Error::MatrixEntry {
                        row,
                        col,
                        source: Box::new(e),
                    })
                })
                .collect()
        })
        .collect();
    // Sequential collection so the reported error is always the first in row order.
    rows.into_iter().collect()
}
