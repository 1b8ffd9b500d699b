//! Equiprobable recursive partitioning with per-cell least squares
//! (the Bouchard–Warin local regression).
//!
//! The design is split into `N_p` equal-count groups along dimension 0,
//! each group into `N_p` equal-count groups along dimension 1, and so on,
//! giving `N_p^d` cells. Each cell holds an ordinary least-squares fit with
//! intercept; a rank-deficient cell falls back to its mean.

use super::leaf::{Evidence, LeafFit, LeafModel, LeafStats};
use super::{alc_formula, PosteriorSummary};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
enum PNode {
    Split { dim: usize, thresholds: Vec<f64>, children: Vec<PNode> },
    Cell(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionModel {
    dim: usize,
    cells_per_dim: usize,
    root: PNode,
    cells: Vec<LeafFit>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Sizes of `parts` contiguous groups of `n` sorted items, differing by at
/// most one.
fn group_bounds(n: usize, parts: usize) -> Vec<usize> {
    (0..=parts).map(|g| n * g / parts).collect()
}

impl PartitionModel {
    /// Build the partition over row-major `xs` with responses `ys`.
    pub fn fit(xs: &[f64], ys: &[f64], dim: usize, cells_per_dim: usize) -> Result<Self> {
        if cells_per_dim == 0 {
            return Err(invalid("cells per dimension must be at least 1"));
        }
        let n = ys.len();
        if xs.len() != n * dim {
            return Err(invalid("design rows and responses disagree"));
        }
        let need = cells_per_dim.pow(dim as u32) * (dim + 2);
        if n < need {
            return Err(invalid(format!("partition regression with {cells_per_dim}^{dim} cells needs at least {need} points, got {n}")));
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for row in xs.chunks_exact(dim) {
            for j in 0..dim {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        let mut cells = Vec::new();
        let mut idx: Vec<usize> = (0..n).collect();
        let root = Self::build(xs, ys, dim, cells_per_dim, 0, &mut idx, &mut cells);
        Ok(PartitionModel { dim, cells_per_dim, root, cells, lo, hi })
    }

    fn build(xs: &[f64], ys: &[f64], dim: usize, parts: usize, level: usize, idx: &mut [usize], cells: &mut Vec<LeafFit>) -> PNode {
        if level == dim {
            let stats = LeafStats::from_points(LeafModel::Linear, dim, idx.iter().map(|&i| (&xs[i * dim..(i + 1) * dim], ys[i])));
            cells.push(LeafFit::from_stats(&stats, &Evidence::default()));
            return PNode::Cell(cells.len() - 1);
        }
        let key = |i: &usize| xs[i * dim + level];
        idx.sort_by(|a, b| key(a).total_cmp(&key(b)));
        let first = idx.first().map(key);
        let last = idx.last().map(key);
        if parts == 1 || first == last {
            // nothing to split on along this dimension
            return PNode::Split {
                dim: level,
                thresholds: Vec::new(),
                children: vec![Self::build(xs, ys, dim, parts, level + 1, idx, cells)],
            };
        }
        let bounds = group_bounds(idx.len(), parts);
        let thresholds: Vec<f64> = bounds[1..parts].iter().map(|&b| 0.5 * (key(&idx[b - 1]) + key(&idx[b]))).collect();
        let mut children = Vec::with_capacity(parts);
        for g in 0..parts {
            let (a, b) = (bounds[g], bounds[g + 1]);
            children.push(Self::build(xs, ys, dim, parts, level + 1, &mut idx[a..b], cells));
        }
        PNode::Split { dim: level, thresholds, children }
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cells_per_dim(&self) -> usize {
        self.cells_per_dim
    }

    /// Number of design points in each cell.
    pub fn cell_sizes(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.n).collect()
    }

    /// Cell index containing `x`; outer cells extend to infinity.
    pub fn locate(&self, x: &[f64]) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                PNode::Cell(c) => return *c,
                PNode::Split { dim, thresholds, children } => {
                    let g = thresholds.partition_point(|t| x[*dim] > *t);
                    node = &children[g];
                }
            }
        }
    }

    /// Intercept and slopes of a cell's fit in original coordinates, or
    /// `None` if the cell fell back to a constant.
    pub fn coefficients(&self, cell: usize) -> Option<Vec<f64>> {
        let f = &self.cells[cell];
        if !f.is_linear() {
            return None;
        }
        let mut c = f.coef.clone();
        for j in 0..self.dim {
            c[0] -= f.coef[j + 1] * f.origin[j];
        }
        Some(c)
    }

    #[inline]
    pub fn mean(&self, x: &[f64]) -> f64 {
        self.cells[self.locate(x)].mean_at(x)
    }

    pub fn predict(&self, x: &[f64]) -> PosteriorSummary {
        let f = &self.cells[self.locate(x)];
        PosteriorSummary {
            mean: f.mean_at(x),
            variance: f.latent_var_at(x).max(0.0),
            noise_var: f.noise_var,
            leaf_count: f.n,
            dof: f.n as f64 - self.dim as f64 - 1.0,
            extrapolated: x.iter().zip(self.lo.iter().zip(&self.hi)).any(|(v, (l, h))| v < l || v > h),
        }
    }

    pub fn alc(&self, x: &[f64]) -> f64 {
        let f = &self.cells[self.locate(x)];
        alc_formula(f.noise_var, f.n, self.dim)
    }
}
