//! Eigenbasis computation, the spectral-decimation validation oracle for the
//! gasket, Fourier coefficients of test functions, and coefficient-sequence
//! distributions.

use crate::error::{Error, Result};
use crate::model::{GridFunction, LevelGraph};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

/// Measure-orthonormal eigenpairs of the level-m Laplacian, eigenvalues
/// nondecreasing; `-D psi = lambda psi`.
#[derive(Debug)]
pub struct EigenBasis {
    pub graph: Arc<LevelGraph>,
    pub bc: BoundaryCondition,
    pub eigenvalues: Vec<f64>,
    pub functions: Vec<GridFunction>,
}

pub fn eigenbasis(
    graph: &Arc<LevelGraph>,
    bc: BoundaryCondition,
    count: usize,
) -> Result<EigenBasis> {
    let n = graph.vertex_count();
    let active: Vec<usize> = match bc {
        BoundaryCondition::Dirichlet => (0..n).filter(|&v| !graph.boundary[v]).collect(),
        BoundaryCondition::Neumann => (0..n).collect(),
    };
    let dim = active.len();
    if count > dim {
        return Err(Error::Input(format!(
            "requested {count} modes, interior dimension is {dim}"
        )));
    }
    if dim > 4000 {
        return Err(Error::Input(format!(
            "dense eigensolver limited to dimension 4000, got {dim}; use a smaller level"
        )));
    }
    let pos: std::collections::HashMap<usize, usize> =
        active.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    // Symmetrized operator W^{-1/2} C W^{-1/2}.
    let mut a: DMatrix<f64> = DMatrix::zeros(dim, dim);
    for (i, &v) in active.iter().enumerate() {
        let wi = graph.measure[v].sqrt();
        let mut diag = 0.0;
        for &(u, c) in graph.neighbors(v) {
            diag += c;
            if let Some(&j) = pos.get(&u) {
                let wj = graph.measure[u].sqrt();
                a[(i, j)] -= c / (wi * wj);
            }
        }
        a[(i, i)] += diag / (wi * wi);
    }
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&x: &usize, &y: &usize| {
        let a: f64 = eig.eigenvalues[x];
        let b: f64 = eig.eigenvalues[y];
        a.partial_cmp(&b).unwrap()
    });
    let mut eigenvalues = Vec::with_capacity(count);
    let mut functions = Vec::with_capacity(count);
    for &k in order.iter().take(count) {
        eigenvalues.push(eig.eigenvalues[k]);
        let mut f = GridFunction::zeros(graph);
        for (i, &v) in active.iter().enumerate() {
            f.values[v] = eig.eigenvectors[(i, k)] / graph.measure[v].sqrt();
        }
        // Deterministic sign: largest-magnitude entry positive.
        let mut pivot = 0.0f64;
        for &v in &f.values {
            if v.abs() > pivot.abs() {
                pivot = v;
            }
        }
        if pivot < 0.0 {
            f.scale(-1.0);
        }
        functions.push(f);
    }
    Ok(EigenBasis { graph: graph.clone(), bc, eigenvalues, functions })
}

impl EigenBasis {
    /// Inner products against the basis: `a_i = <phi, psi_i>_mu`.
    pub fn coefficients(&self, phi: &GridFunction) -> Vec<f64> {
        self.functions
            .iter()
            .map(|psi| crate::calculus::inner_product(&self.graph, phi, psi))
            .collect()
    }

    /// Gram residual `max |<psi_i, psi_j> - delta_ij|`.
    pub fn gram_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.functions.iter().enumerate() {
            for (j, b) in self.functions.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = crate::calculus::inner_product(&self.graph, a, b);
                worst = worst.max((got - want).abs());
            }
        }
        worst
    }
}

/// One inverse decimation step `l_{m+1} = (5 - s sqrt(25 - 4 l_m)) / 2`;
/// `sign = +1` selects the branch that continues an eigenvalue downward.
pub fn decimation_step(lambda: f64, sign: i8) -> f64 {
    (5.0 - f64::from(sign) * (25.0 - 4.0 * lambda).sqrt()) / 2.0
}

/// Renormalization from a graph eigenvalue of the unit-conductance gasket
/// Laplacian at level m to the vertex-measure convention used by `laplacian`.
pub fn renormalize_sg(graph_eigenvalue: f64, level: usize) -> f64 {
    1.5 * 5f64.powi(level as i32) * graph_eigenvalue
}

/// Exact level-m gasket eigenvalue obtained by propagating a seed born at
/// `generation` through the listed branch signs (one per level from
/// generation+1 to m), renormalized to match `laplacian`.
pub fn decimation_eigenvalue(seed: f64, generation: usize, signs: &[i8], level: usize) -> Result<f64> {
    if generation + signs.len() != level {
        return Err(Error::Input(format!(
            "need {} branch signs from generation {generation} to level {level}",
            level - generation
        )));
    }
    let mut lambda = seed;
    for &s in signs {
        lambda = decimation_step(lambda, s);
    }
    Ok(renormalize_sg(lambda, level))
}

/// Birth data of the level-m Dirichlet spectrum of the gasket graph
/// Laplacian: (graph eigenvalue, multiplicity) of the newly born modes.
pub fn sg_dirichlet_births(level: usize) -> Vec<(f64, usize)> {
    if level == 0 {
        return Vec::new();
    }
    if level == 1 {
        return vec![(2.0, 1), (5.0, 2)];
    }
    let p = 3usize.pow(level as u32 - 1);
    vec![(5.0, (p + 3) / 2), (6.0, (3 * p - 3) / 2)]
}

/// The full level-m Dirichlet spectrum of the gasket by decimation, sorted,
/// with multiplicities expanded, in the `laplacian` normalization.
pub fn sg_dirichlet_spectrum_oracle(level: usize) -> Vec<f64> {
    let mut per_level: Vec<Vec<(f64, usize)>> = vec![Vec::new(); level + 1];
    for m in 1..=level {
        per_level[m] = sg_dirichlet_births(m);
        if m > 1 {
            let prev = per_level[m - 1].clone();
            for (lambda, mult) in prev {
                // Eigenvalue 6 only continues through the upper branch: the
                // lower branch lands on the forbidden value 2.
                if (lambda - 6.0).abs() > 1e-12 {
                    per_level[m].push((decimation_step(lambda, 1), mult));
                }
                per_level[m].push((decimation_step(lambda, -1), mult));
            }
        }
    }
    let mut out = Vec::new();
    for (lambda, mult) in &per_level[level] {
        for _ in 0..*mult {
            out.push(renormalize_sg(*lambda, level));
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Fourier analysis of a sampled function against an eigenbasis, with a
/// sliding-window fit of the polynomial decay exponent of the coefficients.
#[derive(Debug, Clone)]
pub struct FourierReport {
    pub coefficients: Vec<f64>,
    /// Fitted exponents p in |a_i| ~ lambda_i^{-p} over successive windows.
    pub decay_exponents: Vec<f64>,
}

pub fn fourier(basis: &EigenBasis, phi: &GridFunction) -> FourierReport {
    let coefficients = basis.coefficients(phi);
    let mut decay_exponents = Vec::new();
    let window = 8usize;
    let usable: Vec<(f64, f64)> = basis
        .eigenvalues
        .iter()
        .zip(&coefficients)
        .filter(|(l, a)| **l > 1e-9 && a.abs() > 1e-14)
        .map(|(l, a)| (l.ln(), a.abs().ln()))
        .collect();
    if usable.len() >= window {
        let mut start = 0;
        while start + window <= usable.len() {
            let xs: Vec<f64> = usable[start..start + window].iter().map(|p| p.0).collect();
            let ys: Vec<f64> = usable[start..start + window].iter().map(|p| p.1).collect();
            let (slope, _) = crate::rates::fit_line(&xs, &ys);
            decay_exponents.push(-slope);
            start += window / 2;
        }
    }
    FourierReport { coefficients, decay_exponents }
}

/// A distribution given by a coefficient sequence of declared polynomial
/// growth: `T phi = sum a_i b_i` truncated to the computed modes, with a tail
/// bound from the declared growth and the fitted decay of the coefficients.
#[derive(Debug, Clone)]
pub struct CoeffDistribution {
    pub weights: Vec<f64>,
    /// Declared growth: `|b_i| <= c lambda_i^m`.
    pub growth_constant: f64,
    pub growth_power: f64,
}

impl CoeffDistribution {
    pub fn new(weights: Vec<f64>, growth_constant: f64, growth_power: f64, basis: &EigenBasis) -> Result<Self> {
        if weights.len() > basis.eigenvalues.len() {
            return Err(Error::Input("more weights than computed modes".into()));
        }
        for (b, l) in weights.iter().zip(&basis.eigenvalues) {
            let bound = growth_constant * l.max(1.0).powf(growth_power);
            if b.abs() > bound * (1.0 + 1e-12) {
                return Err(Error::Input(format!(
                    "weight {b} violates declared growth bound {bound}"
                )));
            }
        }
        Ok(CoeffDistribution { weights, growth_constant, growth_power })
    }

    /// Applies the truncated functional and estimates the truncation error
    /// from the declared growth and the fitted decay of `phi`'s coefficients.
    pub fn apply(&self, basis: &EigenBasis, phi: &GridFunction) -> (f64, f64) {
        let coeffs = basis.coefficients(phi);
        let mut value = 0.0;
        for (a, b) in coeffs.iter().zip(&self.weights) {
            value += a * b;
        }
        // Tail estimate: extrapolate |a_i| lambda_i^m decay past the window.
        let report = fourier(basis, phi);
        let p = report.decay_exponents.last().copied().unwrap_or(0.0);
        let tail = match (basis.eigenvalues.last(), coeffs.last()) {
            (Some(&lmax), Some(&alast)) if p > self.growth_power + 1.0 => {
                let ratio = self.growth_power - p;
                self.growth_constant * alast.abs() * lmax.powf(self.growth_power)
                    / (1.0 - 5f64.powf(ratio))
            }
            _ => f64::INFINITY,
        };
        (value, tail.abs())
    }

    /// Truncation to the first j modes.
    pub fn truncate(&self, j: usize) -> CoeffDistribution {
        CoeffDistribution {
            weights: self.weights.iter().take(j).copied().collect(),
            growth_constant: self.growth_constant,
            growth_power: self.growth_power,
        }
    }
}

/// Export eigen data rows: (index, eigenvalue, boundary condition).
pub fn eigen_csv_rows(basis: &EigenBasis) -> Vec<(usize, f64, &'static str)> {
    let bc = match basis.bc {
        BoundaryCondition::Dirichlet => "dirichlet",
        BoundaryCondition::Neumann => "neumann",
    };
    basis
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (i, l, bc))
        .collect()
}

/// Applies the discrete Green's operator in eigen coordinates (for cross
/// checks): `G psi_i = psi_i / lambda_i` for Dirichlet modes.
pub fn green_in_eigen(basis: &EigenBasis, coeffs: &[f64], power: i32) -> Result<Vec<f64>> {
    if basis.bc != BoundaryCondition::Dirichlet {
        return Err(Error::Input("eigen Green needs Dirichlet modes".into()));
    }
    Ok(coeffs
        .iter()
        .zip(&basis.eigenvalues)
        .map(|(a, l)| a * l.powi(-power))
        .collect())
}

/// Dense symmetric eigenvalues of the plain unit-conductance graph Laplacian
/// (Dirichlet), used to validate the decimation birth bookkeeping.
pub fn sg_graph_dirichlet_spectrum(graph: &LevelGraph) -> Vec<f64> {
    let n = graph.vertex_count();
    let active: Vec<usize> = (0..n).filter(|&v| !graph.boundary[v]).collect();
    let pos: std::collections::HashMap<usize, usize> =
        active.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let dim = active.len();
    let mut a: DMatrix<f64> = DMatrix::zeros(dim, dim);
    for (i, &v) in active.iter().enumerate() {
        let mut deg = 0.0;
        for &(u, _) in graph.neighbors(v) {
            deg += 1.0;
            if let Some(&j) = pos.get(&u) {
                a[(i, j)] -= 1.0;
            }
        }
        a[(i, i)] = deg;
    }
    let eig = a.symmetric_eigen();
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v
}

/// Projects a grid function onto the span of the basis (Parseval check).
pub fn parseval_gap(basis: &EigenBasis, phi: &GridFunction) -> f64 {
    let norm2 = crate::calculus::inner_product(&basis.graph, phi, phi);
    let coeffs = basis.coefficients(phi);
    let sum2: f64 = coeffs.iter().map(|a| a * a).sum();
    norm2 - sum2
}

/// Helper constructing a `DVector` from coefficients (used by callers in
/// products and distributions).
pub fn coeff_vector(coeffs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(coeffs)
}
