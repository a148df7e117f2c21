//! Per-structure calibration of multiharmonic primitives.
//!
//! For the model cell X and the Dirichlet Green's operator G, the matrices
//!
//!   W_l[x, i] = (G^l h_i)(x)   for x in V_1,
//!   N_l[p, i] = dn (G^l h_i)(p) for p in V_0,
//!
//! (h_i the harmonic function with boundary values e_i) close the algebra of
//! multiharmonic functions under restriction to subcells. They satisfy exact
//! self-similar linear relations: the flux sums of G^l h vanish at interior
//! level-1 junctions and the boundary flux is seen from a single child cell.
//! Solving those relations level by level in l gives the matrices without any
//! grid discretization.

use crate::error::{Error, Result};
use crate::model::{HarmonicStructure, LevelGraph};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

#[derive(Debug)]
pub struct Calibration {
    pub hs: Arc<HarmonicStructure>,
    /// Highest multiharmonic degree supported by the tables.
    pub degree: usize,
    /// `slot_vertex[j][a]` = V1 vertex id of `F_j(q_a)` in the level-1 graph.
    pub slot_vertex: Vec<Vec<usize>>,
    pub v1_count: usize,
    /// W_l matrices, l = 0..=degree.
    pub values_v1: Vec<DMatrix<f64>>,
    /// N_l matrices, l = 0..=degree.
    pub normals: Vec<DMatrix<f64>>,
    /// Largest linear-system residual encountered while solving the tables.
    pub residual: f64,
}

impl Calibration {
    pub fn new(hs: &Arc<HarmonicStructure>, degree: usize) -> Result<Self> {
        let n = hs.map_count();
        let n0 = hs.boundary_size();
        let graph = LevelGraph::build(hs, 1)?;
        let slot_vertex: Vec<Vec<usize>> = (0..n)
            .map(|j| graph.cells_at_depth(1)[j].vertices.clone())
            .collect();
        let v1 = graph.vertex_count();
        let interior: Vec<usize> = (0..v1).filter(|&x| !graph.boundary[x]).collect();
        let j_count = interior.len();
        let int_pos: Vec<Option<usize>> = (0..v1)
            .map(|x| interior.iter().position(|&y| y == x))
            .collect();

        // W_0: harmonic extension values; N_0: the level-0 flux matrix Q0.
        let mut w0 = DMatrix::zeros(v1, n0);
        for j in 0..n {
            for a in 0..n0 {
                for i in 0..n0 {
                    w0[(slot_vertex[j][a], i)] = hs.extension[j][(a, i)];
                }
            }
        }
        let mut values_v1 = vec![w0];
        let mut normals = vec![hs.q0.clone()];
        let mut residual = 0.0f64;

        // K_0[c, d] = int h_c h_d dmu: fixed point of K -> sum_j mu_j A_j^T K A_j
        // at eigenvalue 1, normalized so the constant function integrates to 1
        // (the normalization also fixes the sign).
        let k0 = {
            let dim = n0 * n0;
            let mut t = DMatrix::zeros(dim, dim);
            for (j, a) in hs.extension.iter().enumerate() {
                let mu = hs.measure_weights[j];
                for p in 0..n0 {
                    for q in 0..n0 {
                        for s in 0..n0 {
                            for u in 0..n0 {
                                // vec index row-major: (p, q) -> p * n0 + q.
                                t[(p * n0 + q, s * n0 + u)] += mu * a[(s, p)] * a[(u, q)];
                            }
                        }
                    }
                }
            }
            let svd = (t - DMatrix::identity(dim, dim)).svd(true, true);
            let v_t = svd.v_t.as_ref().unwrap();
            let mut best = None;
            for (i, s) in svd.singular_values.iter().enumerate() {
                if best.map_or(true, |(bs, _)| *s < bs) {
                    best = Some((*s, i));
                }
            }
            let (smin, idx) = best.unwrap();
            if smin > 1e-9 {
                return Err(Error::Numerical(
                    "no invariant bilinear form for harmonic products".into(),
                ));
            }
            let vec = v_t.row(idx).transpose();
            let mut k = DMatrix::zeros(n0, n0);
            for p in 0..n0 {
                for q in 0..n0 {
                    k[(p, q)] = vec[p * n0 + q];
                }
            }
            let k = (k.clone() + k.transpose()) * 0.5;
            let total: f64 = k.iter().sum();
            if total.abs() < 1e-12 {
                return Err(Error::Numerical("degenerate harmonic product form".into()));
            }
            k / total
        };

        // Junction matching matrix: coefficient of the unknown interior values
        // of W_l in the flux-sum equations. Shared across degrees and columns.
        let mut junction_mat = DMatrix::zeros(j_count, j_count);
        for (jx, &x) in interior.iter().enumerate() {
            for j in 0..n {
                let rinv = 1.0 / hs.energy_weights[j];
                for a in 0..n0 {
                    if slot_vertex[j][a] != x {
                        continue;
                    }
                    for b in 0..n0 {
                        let coeff = rinv * hs.q0[(a, b)];
                        if coeff == 0.0 {
                            continue;
                        }
                        // Boundary rows of W_l are zero for l >= 1, so only
                        // interior columns enter the system.
                        if let Some(iy) = int_pos[slot_vertex[j][b]] {
                            junction_mat[(jx, iy)] += coeff;
                        }
                    }
                }
            }
        }
        let junction_lu = junction_mat.clone().lu();

        let mut k_tables = vec![k0.clone()];
        for l in 1..=degree {
            // Normal derivatives from Gauss-Green against corner harmonics.
            let nl = -k_tables[l - 1].clone();
            normals.push(nl);

            // Interior values of W_l: flux sums vanish at interior junctions.
            // sum_{(j,a) at x} r_j^{-1} [ N_0 S_j W_l + sum_{t>=1} (r_j mu_j)^t N_t S_j W_{l-t} ] = 0.
            let mut rhs = DMatrix::zeros(j_count, n0);
            for (jx, &x) in interior.iter().enumerate() {
                for j in 0..n {
                    let r = hs.energy_weights[j];
                    let mu = hs.measure_weights[j];
                    let rinv = 1.0 / r;
                    for a in 0..n0 {
                        if slot_vertex[j][a] != x {
                            continue;
                        }
                        for t in 1..=l {
                            let scale = rinv * (r * mu).powi(t as i32);
                            for b in 0..n0 {
                                let nt = normals[t][(a, b)];
                                if nt == 0.0 {
                                    continue;
                                }
                                for i in 0..n0 {
                                    rhs[(jx, i)] -=
                                        scale * nt * values_v1[l - t][(slot_vertex[j][b], i)];
                                }
                            }
                        }
                    }
                }
            }
            let mut wl = DMatrix::zeros(v1, n0);
            for i in 0..n0 {
                let col = DVector::from_iterator(j_count, (0..j_count).map(|jx| rhs[(jx, i)]));
                let sol = junction_lu.solve(&col).ok_or_else(|| {
                    Error::Numerical("junction matching system singular".into())
                })?;
                for (ix, &x) in interior.iter().enumerate() {
                    wl[(x, i)] = sol[ix];
                }
            }
            values_v1.push(wl);

            // Consistency: the boundary flux of G^l h from the single child
            // cell at q_p must reproduce N_l.
            for p in 0..n0 {
                let (jp, bp) = hs.boundary_embeddings[p];
                let r = hs.energy_weights[jp];
                let mu = hs.measure_weights[jp];
                let rinv = 1.0 / r;
                for i in 0..n0 {
                    let mut flux = 0.0;
                    for t in 0..=l {
                        let scale = rinv * (r * mu).powi(t as i32);
                        for b in 0..n0 {
                            flux += scale
                                * normals[t][(bp, b)]
                                * values_v1[l - t][(slot_vertex[jp][b], i)];
                        }
                    }
                    residual = residual.max((flux - normals[l][(p, i)]).abs());
                }
            }

            // K_l from its contractive self-similar recursion:
            // K_l = C_l + sum_j mu_j (r_j mu_j)^l A_j^T K_l A_j.
            if l < degree {
                let mut c = DMatrix::zeros(n0, n0);
                for j in 0..n {
                    let r = hs.energy_weights[j];
                    let mu = hs.measure_weights[j];
                    let a = &hs.extension[j];
                    for t in 0..l {
                        let scale = mu * (r * mu).powi(t as i32);
                        // S_j W_{l-t}: rows of W_{l-t} at cell-j slots.
                        let mut sjw = DMatrix::zeros(n0, n0);
                        for b in 0..n0 {
                            for i in 0..n0 {
                                sjw[(b, i)] = values_v1[l - t][(slot_vertex[j][b], i)];
                            }
                        }
                        c += scale * a.transpose() * &k_tables[t] * sjw;
                    }
                }
                let dim = n0 * n0;
                let mut m = DMatrix::identity(dim, dim);
                for j in 0..n {
                    let r = hs.energy_weights[j];
                    let mu = hs.measure_weights[j];
                    let a = &hs.extension[j];
                    let scale = mu * (r * mu).powi(l as i32);
                    for p in 0..n0 {
                        for q in 0..n0 {
                            for s in 0..n0 {
                                for u in 0..n0 {
                                    m[(p * n0 + q, s * n0 + u)] -= scale * a[(s, p)] * a[(u, q)];
                                }
                            }
                        }
                    }
                }
                let cvec = DVector::from_iterator(
                    dim,
                    (0..n0).flat_map(|p| (0..n0).map(move |q| (p, q))).map(|(p, q)| c[(p, q)]),
                );
                let sol = m
                    .lu()
                    .solve(&cvec)
                    .ok_or_else(|| Error::Numerical("K-table system singular".into()))?;
                let mut kl = DMatrix::zeros(n0, n0);
                for p in 0..n0 {
                    for q in 0..n0 {
                        kl[(p, q)] = sol[p * n0 + q];
                    }
                }
                k_tables.push(kl);
            }
        }
        if residual > 1e-9 {
            return Err(Error::Numerical(format!(
                "calibration self-consistency residual {residual:.3e} too large"
            )));
        }
        Ok(Calibration {
            hs: hs.clone(),
            degree,
            slot_vertex,
            v1_count: v1,
            values_v1,
            normals,
            residual,
        })
    }

    pub fn boundary_size(&self) -> usize {
        self.hs.boundary_size()
    }
}

/// A multiharmonic function on the model cell X: `sum_l G^l h_l` with `h_l`
/// the harmonic function with boundary values `coeffs[l]`. Closed under the
/// Laplacian, Green's operator, and restriction to subcells.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub coeffs: Vec<DVector<f64>>,
}

impl Stack {
    pub fn zero(n0: usize) -> Self {
        Stack { coeffs: vec![DVector::zeros(n0)] }
    }

    pub fn harmonic(bvals: DVector<f64>) -> Self {
        Stack { coeffs: vec![bvals] }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn n0(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.coeffs.iter().all(|c| c.amax() <= tol)
    }

    /// Exact Laplacian: `D(G^l h) = -G^{l-1} h`, `D h = 0`.
    pub fn laplacian(&self) -> Stack {
        if self.coeffs.len() == 1 {
            return Stack::zero(self.n0());
        }
        Stack { coeffs: self.coeffs[1..].iter().map(|c| -c).collect() }
    }

    pub fn laplacian_power(&self, k: usize) -> Stack {
        let mut s = self.clone();
        for _ in 0..k {
            s = s.laplacian();
        }
        s
    }

    /// Exact Green's operator: raises the degree by one.
    pub fn green(&self) -> Stack {
        let mut coeffs = Vec::with_capacity(self.coeffs.len() + 1);
        coeffs.push(DVector::zeros(self.n0()));
        coeffs.extend(self.coeffs.iter().cloned());
        Stack { coeffs }
    }

    pub fn add(&self, other: &Stack) -> Stack {
        let n0 = self.n0();
        let len = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = Vec::with_capacity(len);
        for l in 0..len {
            let mut c = DVector::zeros(n0);
            if l < self.coeffs.len() {
                c += &self.coeffs[l];
            }
            if l < other.coeffs.len() {
                c += &other.coeffs[l];
            }
            coeffs.push(c);
        }
        Stack { coeffs }
    }

    pub fn scale(&self, alpha: f64) -> Stack {
        Stack { coeffs: self.coeffs.iter().map(|c| c * alpha).collect() }
    }

    /// Values at the model boundary V0 (only the harmonic part survives).
    pub fn boundary_values(&self) -> DVector<f64> {
        self.coeffs[0].clone()
    }

    /// Values at all V1 points of the model.
    pub fn values_v1(&self, calib: &Calibration) -> DVector<f64> {
        let mut out = DVector::zeros(calib.v1_count);
        for (l, h) in self.coeffs.iter().enumerate() {
            out += &calib.values_v1[l] * h;
        }
        out
    }

    /// Normal derivative at a model boundary point.
    pub fn normal_derivative(&self, calib: &Calibration, p: usize) -> f64 {
        let mut out = 0.0;
        for (l, h) in self.coeffs.iter().enumerate() {
            out += (calib.normals[l].row(p) * h)[0];
        }
        out
    }

    /// Restriction to the child cell j, rescaled to the model:
    /// returns the stack of `u o F_j`.
    pub fn pullback(&self, calib: &Calibration, j: usize) -> Stack {
        let n0 = self.n0();
        let hs = &calib.hs;
        let rm = hs.energy_weights[j] * hs.measure_weights[j];
        let deg = self.degree();
        let mut coeffs = Vec::with_capacity(deg + 1);
        let mut scale = 1.0;
        for t in 0..=deg {
            // Values at V1 of the degree-shifted tail sum_{s} G^s h_{t+s}.
            let mut tail = DVector::zeros(calib.v1_count);
            for s in 0..=(deg - t) {
                tail += &calib.values_v1[s] * &self.coeffs[t + s];
            }
            let mut h = DVector::zeros(n0);
            for a in 0..n0 {
                h[a] = scale * tail[calib.slot_vertex[j][a]];
            }
            coeffs.push(h);
            scale *= rm;
        }
        Stack { coeffs }
    }

    /// Restriction along a word (repeated pullback).
    pub fn pullback_word(&self, calib: &Calibration, letters: &[u8]) -> Stack {
        let mut s = self.clone();
        for &l in letters {
            s = s.pullback(calib, l as usize);
        }
        s
    }
}
