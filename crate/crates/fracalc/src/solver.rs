//! Sparse LDL^T factorization of conductance Laplacians.
//!
//! The elimination order follows the cell hierarchy (vertices born at deeper
//! levels first), which keeps fill bounded by the cell separator size.

use crate::error::{Error, Result};
use crate::model::LevelGraph;
use std::collections::{BTreeMap, HashMap};

pub struct SparseLdl {
    /// Unknown vertices (graph ids) in elimination order.
    order: Vec<usize>,
    pos: HashMap<usize, usize>,
    cols: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

impl SparseLdl {
    /// Factors the conductance Laplacian restricted to `unknowns`, with all
    /// other vertices treated as (pinned) Dirichlet data.
    pub fn factor(graph: &LevelGraph, unknowns: &[usize]) -> Result<Self> {
        let mut order: Vec<usize> = unknowns.to_vec();
        order.sort_by(|&a, &b| {
            graph.birth_depth[b]
                .cmp(&graph.birth_depth[a])
                .then(a.cmp(&b))
        });
        let pos: HashMap<usize, usize> = order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let n = order.len();
        let mut work: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        let mut diag = vec![0.0; n];
        for (k, &v) in order.iter().enumerate() {
            for &(u, c) in graph.neighbors(v) {
                diag[k] += c;
                if let Some(&j) = pos.get(&u) {
                    if j > k {
                        *work[k].entry(j).or_insert(0.0) -= c;
                    }
                }
            }
        }
        let mut cols = vec![Vec::new(); n];
        for k in 0..n {
            let d = diag[k];
            if d <= 1e-300 {
                return Err(Error::Numerical(format!(
                    "non-positive pivot at elimination step {k}"
                )));
            }
            let colk: Vec<(usize, f64)> = work[k].iter().map(|(&i, &a)| (i, a)).collect();
            for (ii, &(i, ai)) in colk.iter().enumerate() {
                diag[i] -= ai * ai / d;
                for &(j, aj) in &colk[ii + 1..] {
                    *work[i].entry(j).or_insert(0.0) -= ai * aj / d;
                }
            }
            cols[k] = colk.into_iter().map(|(i, a)| (i, a / d)).collect();
            work[k].clear();
        }
        Ok(SparseLdl { order, pos, cols, diag })
    }

    pub fn unknowns(&self) -> &[usize] {
        &self.order
    }

    pub fn index_of(&self, vertex: usize) -> Option<usize> {
        self.pos.get(&vertex).copied()
    }

    /// Solves `A x = b` where `b` is indexed like `unknowns()`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.order.len();
        let mut x = b.to_vec();
        for k in 0..n {
            let xk = x[k];
            if xk != 0.0 {
                for &(i, l) in &self.cols[k] {
                    x[i] -= l * xk;
                }
            }
        }
        for k in 0..n {
            x[k] /= self.diag[k];
        }
        for k in (0..n).rev() {
            let mut acc = x[k];
            for &(i, l) in &self.cols[k] {
                acc -= l * x[i];
            }
            x[k] = acc;
        }
        x
    }
}

/// Solver with an arbitrary pinned vertex set; used for effective resistance
/// and harmonic interpolation problems.
pub struct PinnedSolver<'g> {
    graph: &'g LevelGraph,
    pinned: Vec<usize>,
    ldl: SparseLdl,
}

impl<'g> PinnedSolver<'g> {
    pub fn new(graph: &'g LevelGraph, pinned: &[usize]) -> Result<Self> {
        let pinned_set: std::collections::HashSet<usize> = pinned.iter().copied().collect();
        let unknowns: Vec<usize> = (0..graph.vertex_count())
            .filter(|v| !pinned_set.contains(v))
            .collect();
        Ok(PinnedSolver {
            graph,
            pinned: pinned.to_vec(),
            ldl: SparseLdl::factor(graph, &unknowns)?,
        })
    }

    /// Harmonic interpolation: minimizes energy subject to the pinned values.
    pub fn solve(&self, pinned_values: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.graph.vertex_count()];
        for (i, &v) in self.pinned.iter().enumerate() {
            full[v] = pinned_values[i];
        }
        let mut rhs = vec![0.0; self.ldl.unknowns().len()];
        for (k, &v) in self.ldl.unknowns().iter().enumerate() {
            for &(u, c) in self.graph.neighbors(v) {
                if self.ldl.index_of(u).is_none() {
                    rhs[k] += c * full[u];
                }
            }
        }
        let x = self.ldl.solve(&rhs);
        for (k, &v) in self.ldl.unknowns().iter().enumerate() {
            full[v] = x[k];
        }
        full
    }
}
