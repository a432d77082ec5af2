//! Forward and adjoint Volterra operators on path sets.

use crate::kernels::NystromMatrices;
use crate::linalg::dot;
use crate::par;
use crate::paths::PathSet;
use crate::{Error, Result};

/// Estimator of `E_{t_p}[Y]` for a cross-section `Y` (one value per path).
///
/// Implementations must be linear in the target so that a weighted sum of
/// targets can be projected in a single call.
pub trait ConditionalExpectation: Sync {
    fn project(&self, p: usize, target: &[f64]) -> Result<Vec<f64>>;

    /// True when every projection is the identity (no information loss).
    fn is_pathwise(&self) -> bool {
        false
    }
}

/// Pathwise provider for deterministic signals: `E_{t_p}[Y] = Y`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pathwise;

impl ConditionalExpectation for Pathwise {
    fn project(&self, _p: usize, target: &[f64]) -> Result<Vec<f64>> {
        Ok(target.to_vec())
    }

    fn is_pathwise(&self) -> bool {
        true
    }
}

fn check_grid(mats: &NystromMatrices, u: &PathSet) -> Result<()> {
    if mats.grid() != u.grid() {
        return Err(Error::shape(format!(
            "operator has {} nodes, paths have {}",
            mats.grid().nodes_len(),
            u.num_nodes()
        )));
    }
    Ok(())
}

/// `out(m, i) = sum_{j<i} L(i, j) u(m, j)`.
pub fn apply_forward(mats: &NystromMatrices, u: &PathSet) -> Result<PathSet> {
    check_grid(mats, u)?;
    let n = u.num_nodes();
    let l = mats.forward();
    let mut out = PathSet::zeros(*u.grid(), u.num_paths());
    par::for_each_chunk_mut(out.values_mut(), n, |m, row| {
        let um = u.path(m);
        for (i, o) in row.iter_mut().enumerate() {
            *o = dot(&l.row(i)[..i], &um[..i]);
        }
    });
    Ok(out)
}

/// `out(m, i) = M(i, i) u(m, i) + E_{t_i}[sum_{j>i} M(i, j) u(., j)](m)`.
pub fn apply_adjoint(
    mats: &NystromMatrices,
    u: &PathSet,
    ce: &dyn ConditionalExpectation,
) -> Result<PathSet> {
    check_grid(mats, u)?;
    let n = u.num_nodes();
    let paths = u.num_paths();
    let mm = mats.adjoint();
    if ce.is_pathwise() {
        let mut out = PathSet::zeros(*u.grid(), paths);
        par::for_each_chunk_mut(out.values_mut(), n, |m, row| {
            let um = u.path(m);
            for (i, o) in row.iter_mut().enumerate() {
                *o = dot(&mm.row(i)[i..], &um[i..]);
            }
        });
        return Ok(out);
    }
    let columns = par::map_indices(n, |i| -> Result<Vec<f64>> {
        let tail: Vec<f64> = (0..paths)
            .map(|m| dot(&mm.row(i)[i + 1..], &u.path(m)[i + 1..]))
            .collect();
        let proj = ce.project(i, &tail)?;
        Ok((0..paths).map(|m| mm.get(i, i) * u.get(m, i) + proj[m]).collect())
    });
    let mut out = PathSet::zeros(*u.grid(), paths);
    for (i, col) in columns.into_iter().enumerate() {
        for (m, v) in col?.into_iter().enumerate() {
            out.set(m, i, v);
        }
    }
    Ok(out)
}

/// `<f, g> = (1/M) sum_m Delta sum_{i<N} f(m, i) g(m, i)`.
pub fn inner_product(f: &PathSet, g: &PathSet) -> Result<f64> {
    f.ensure_same_shape(g)?;
    let steps = f.grid().steps();
    let total: f64 = (0..f.num_paths())
        .map(|m| dot(&f.path(m)[..steps], &g.path(m)[..steps]))
        .sum();
    Ok(total * f.grid().delta() / f.num_paths() as f64)
}
