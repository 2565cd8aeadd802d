//! DTW barycenter averaging.
//!
//! Each iteration aligns every member to the current barycenter and replaces
//! each barycenter coordinate with the mean of the member values warped onto
//! it. With `q = 2` this never increases the squared-DTW inertia; an update
//! that would (floating-point noise at convergence) is rejected.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::dtw::{dtw_distance, dtw_path, DtwParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbaParams {
    pub max_iter: usize,
    pub tol: f64,
    pub dtw: DtwParams,
}

impl Default for DbaParams {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tol: 1e-5,
            dtw: DtwParams::default(),
        }
    }
}

impl DbaParams {
    pub fn validate(&self) -> Result<()> {
        self.dtw.validate()?;
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("dba max_iter must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dba tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barycenter {
    pub values: Vec<f64>,
    /// Sum of squared DTW distances from the members to `values`.
    pub inertia: f64,
    pub iterations_used: usize,
    /// Inertia of the initial sequence followed by each accepted update.
    pub inertia_history: Vec<f64>,
}

fn check_members<M: AsRef<[f64]>>(members: &[M]) -> Result<usize> {
    let first = members.first().ok_or(Error::EmptyInput("dba members"))?;
    let n = first.as_ref().len();
    if n == 0 {
        return Err(Error::EmptyInput("dba member values"));
    }
    for m in members {
        if m.as_ref().len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: m.as_ref().len(),
            });
        }
    }
    Ok(n)
}

/// Sum over members of `dtw_distance(member, center)^2`.
pub fn dba_inertia<M: AsRef<[f64]> + Sync>(
    members: &[M],
    center: &[f64],
    params: &DtwParams,
) -> Result<f64> {
    let dists: Vec<f64> = members
        .par_iter()
        .map(|m| dtw_distance(m.as_ref(), center, params))
        .collect::<Result<_>>()?;
    Ok(dists.iter().map(|d| d * d).sum())
}

/// Index of the member with the smallest total DTW distance to all others
/// (lowest index on ties).
pub fn medoid<M: AsRef<[f64]> + Sync>(members: &[M], params: &DtwParams) -> Result<usize> {
    check_members(members)?;
    let k = members.len();
    let rows: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|i| {
            (i + 1..k)
                .map(|j| dtw_distance(members[i].as_ref(), members[j].as_ref(), params))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut totals = vec![0.0; k];
    for (i, row) in rows.iter().enumerate() {
        for (off, d) in row.iter().enumerate() {
            totals[i] += d;
            totals[i + 1 + off] += d;
        }
    }
    Ok(totals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap_or(0))
}

/// Aligns all members to `center`; returns the inertia and the per-coordinate
/// sums and counts of warped member values.
fn align<M: AsRef<[f64]> + Sync>(
    members: &[M],
    center: &[f64],
    params: &DtwParams,
) -> Result<(f64, Vec<f64>, Vec<usize>)> {
    let aligned: Vec<(f64, Vec<(usize, usize)>)> = members
        .par_iter()
        .map(|m| dtw_path(center, m.as_ref(), params).map(|(d, p)| (d, p.pairs().to_vec())))
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; center.len()];
    let mut counts = vec![0usize; center.len()];
    let mut inertia = 0.0;
    for (m, (d, pairs)) in members.iter().zip(&aligned) {
        inertia += d * d;
        let m = m.as_ref();
        for &(i, j) in pairs {
            sums[i] += m[j];
            counts[i] += 1;
        }
    }
    Ok((inertia, sums, counts))
}

/// Computes the DBA barycenter of `members`, starting from `init` or, when
/// absent, from the medoid.
pub fn dba_average<M: AsRef<[f64]> + Sync>(
    members: &[M],
    init: Option<&[f64]>,
    params: &DbaParams,
) -> Result<Barycenter> {
    params.validate()?;
    let n = check_members(members)?;
    let mut center = match init {
        Some(seed) if seed.len() != n => {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: seed.len(),
            })
        }
        Some(seed) => seed.to_vec(),
        None => members[medoid(members, &params.dtw)?].as_ref().to_vec(),
    };

    let (mut inertia, mut sums, mut counts) = align(members, &center, &params.dtw)?;
    let mut history = vec![inertia];
    let mut iterations_used = 0;
    for it in 1..=params.max_iter {
        iterations_used = it;
        if inertia == 0.0 {
            break;
        }
        let candidate: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s / c as f64)
            .collect();
        let (cand_inertia, cand_sums, cand_counts) = align(members, &candidate, &params.dtw)?;
        if cand_inertia > inertia {
            debug!(iteration = it, inertia, cand_inertia, "dba update rejected");
            break;
        }
        let improvement = (inertia - cand_inertia) / inertia;
        center = candidate;
        inertia = cand_inertia;
        sums = cand_sums;
        counts = cand_counts;
        history.push(inertia);
        if improvement < params.tol {
            break;
        }
    }
    debug!(members = members.len(), iterations_used, inertia, "dba converged");
    Ok(Barycenter {
        values: center,
        inertia,
        iterations_used,
        inertia_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> DbaParams {
        DbaParams::default()
    }

    #[test]
    fn identical_members_are_a_fixed_point() {
        let s = vec![0.1, 0.7, 0.3, 0.9];
        let members = vec![s.clone(); 5];
        let b = dba_average(&members, None, &params()).unwrap();
        assert_eq!(b.values, s);
        assert_eq!(b.inertia, 0.0);
        assert_eq!(b.iterations_used, 1);
    }

    #[test]
    fn single_member() {
        let s = vec![3.0, 1.0, 2.0];
        let b = dba_average(std::slice::from_ref(&s), None, &params()).unwrap();
        assert_eq!(b.values, s);
        assert_eq!(b.inertia, 0.0);
    }

    #[test]
    fn two_constant_levels_average_to_the_midline() {
        let members = vec![vec![0.0; 3], vec![2.0; 3]];
        let b = dba_average(&members, None, &params()).unwrap();
        for v in &b.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // Each member is sqrt(3) away from the midline.
        assert!((b.inertia - 6.0).abs() < 1e-12);
    }

    #[test]
    fn inertia_examples() {
        let p = DtwParams::default();
        let s = vec![0.5, 0.2];
        assert_eq!(dba_inertia(&[s.clone(), s.clone()], &s, &p).unwrap(), 0.0);
        let i = dba_inertia(&[vec![0.0, 1.0, 2.0]], &[0.0, 2.0], &p).unwrap();
        assert!((i - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            dba_average(&empty, None, &params()),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            dba_average(&[vec![1.0, 2.0], vec![1.0]], None, &params()),
            Err(Error::LengthMismatch { .. })
        ));
        let bad = DbaParams { max_iter: 0, ..params() };
        assert!(dba_average(&[vec![1.0]], None, &bad).is_err());
        let bad = DbaParams { tol: 0.0, ..params() };
        assert!(dba_average(&[vec![1.0]], None, &bad).is_err());
        assert!(dba_average(&[vec![1.0, 2.0]], Some(&[1.0]), &params()).is_err());
    }

    #[test]
    fn medoid_is_the_central_member() {
        let members = vec![vec![0.0; 4], vec![1.0; 4], vec![1.1; 4], vec![5.0; 4]];
        assert_eq!(medoid(&members, &DtwParams::default()).unwrap(), 1);
    }

    #[test]
    fn one_iteration_without_update_is_the_medoid() {
        let members = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let m = medoid(&members, &DtwParams::default()).unwrap();
        let init = members[m].clone();
        let i0 = dba_inertia(&members, &init, &DtwParams::default()).unwrap();
        let b = dba_average(&members, Some(&init), &params()).unwrap();
        assert_eq!(b.inertia_history[0], i0);
        assert!(b.inertia <= i0);
    }
}
