//! Exact smooth-function representation: finite sums of cell-supported
//! multiharmonic atoms and global eigenfunction atoms, closed under the
//! Laplacian, with jets computed by exact linear algebra.

use crate::calibrate::{Calibration, Stack};
use crate::error::{Error, Result};
use crate::model::{GridFunction, LevelGraph, Word};
use crate::spectral::EigenBasis;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub enum AtomKind {
    /// `sum_l G_w^l h_l` on the cell, stored as the model stack of the
    /// pullback through `F_w`; zero outside the cell.
    Multiharmonic(Stack),
    /// A global Laplacian eigenfunction scaled by a coefficient.
    Eigen {
        basis: Arc<EigenBasis>,
        index: usize,
        coefficient: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Atom {
    pub copy: usize,
    pub cell: Word,
    pub kind: AtomKind,
}

/// A smooth function: a global constant plus finitely many atoms. The
/// Laplacian acts exactly on every atom.
#[derive(Debug, Clone, Default)]
pub struct SmoothFunction {
    pub constant: f64,
    pub atoms: Vec<Atom>,
}

impl SmoothFunction {
    pub fn zero() -> Self {
        SmoothFunction { constant: 0.0, atoms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        SmoothFunction { constant: c, atoms: Vec::new() }
    }

    pub fn from_stack(copy: usize, cell: Word, stack: Stack) -> Self {
        SmoothFunction {
            constant: 0.0,
            atoms: vec![Atom { copy, cell, kind: AtomKind::Multiharmonic(stack) }],
        }
    }

    pub fn eigen(basis: &Arc<EigenBasis>, index: usize, coefficient: f64) -> Self {
        SmoothFunction {
            constant: 0.0,
            atoms: vec![Atom {
                copy: 0,
                cell: Word::empty(),
                kind: AtomKind::Eigen { basis: basis.clone(), index, coefficient },
            }],
        }
    }

    pub fn add(&self, other: &SmoothFunction) -> SmoothFunction {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        SmoothFunction { constant: self.constant + other.constant, atoms }
    }

    pub fn scale(&self, alpha: f64) -> SmoothFunction {
        SmoothFunction {
            constant: self.constant * alpha,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    copy: a.copy,
                    cell: a.cell.clone(),
                    kind: match &a.kind {
                        AtomKind::Multiharmonic(s) => AtomKind::Multiharmonic(s.scale(alpha)),
                        AtomKind::Eigen { basis, index, coefficient } => AtomKind::Eigen {
                            basis: basis.clone(),
                            index: *index,
                            coefficient: coefficient * alpha,
                        },
                    },
                })
                .collect(),
        }
    }

    /// Exact Laplacian on atoms: multiharmonic stacks shift down with the cell
    /// scaling factor, eigenfunctions multiply by their eigenvalue.
    pub fn laplacian(&self, calib: &Calibration) -> Result<SmoothFunction> {
        let mut atoms = Vec::new();
        for a in &self.atoms {
            match &a.kind {
                AtomKind::Multiharmonic(s) => {
                    let (r, mu) = calib.hs.word_scaling(&a.cell)?;
                    let lap = s.laplacian().scale(1.0 / (r * mu));
                    atoms.push(Atom {
                        copy: a.copy,
                        cell: a.cell.clone(),
                        kind: AtomKind::Multiharmonic(lap),
                    });
                }
                AtomKind::Eigen { basis, index, coefficient } => {
                    atoms.push(Atom {
                        copy: a.copy,
                        cell: a.cell.clone(),
                        kind: AtomKind::Eigen {
                            basis: basis.clone(),
                            index: *index,
                            coefficient: -basis.eigenvalues[*index] * coefficient,
                        },
                    });
                }
            }
        }
        Ok(SmoothFunction { constant: 0.0, atoms })
    }

    pub fn laplacian_power(&self, calib: &Calibration, k: usize) -> Result<SmoothFunction> {
        let mut f = self.clone();
        for _ in 0..k {
            f = f.laplacian(calib)?;
        }
        Ok(f)
    }

    /// Samples the function on a level graph. Nested atoms add; sibling atoms
    /// sharing only junctions are resolved through the deepest covering chain.
    pub fn sample(&self, calib: &Calibration, graph: &LevelGraph) -> Result<GridFunction> {
        let mut out = GridFunction::constant(graph, self.constant);
        // Merge multiharmonic atoms per cell.
        let mut per_cell: HashMap<(usize, Word), Stack> = HashMap::new();
        for a in &self.atoms {
            match &a.kind {
                AtomKind::Multiharmonic(s) => {
                    if a.cell.len() > graph.level {
                        return Err(Error::Input(format!(
                            "atom cell {} deeper than graph level {}",
                            a.cell, graph.level
                        )));
                    }
                    per_cell
                        .entry((a.copy, a.cell.clone()))
                        .and_modify(|acc| *acc = acc.add(s))
                        .or_insert_with(|| s.clone());
                }
                AtomKind::Eigen { basis, index, coefficient } => {
                    if basis.graph.level != graph.level
                        || basis.graph.vertex_count() != graph.vertex_count()
                    {
                        return Err(Error::Input(
                            "eigen atom sampled on a different graph".into(),
                        ));
                    }
                    out.axpy(*coefficient, &basis.functions[*index]);
                }
            }
        }
        if per_cell.is_empty() {
            return Ok(out);
        }
        // Per-cell subtree values.
        let n = calib.hs.map_count();
        let mut cell_values: Vec<((usize, Word), HashMap<usize, f64>)> = Vec::new();
        for ((copy, word), stack) in per_cell {
            let mut values = HashMap::new();
            // Locate the cell index at its depth.
            let depth = word.len();
            let idx = graph
                .cells_at_depth(depth)
                .iter()
                .position(|c| c.copy == copy && c.word == word)
                .ok_or_else(|| Error::Geometry(format!("no cell {word} in copy {copy}")))?;
            let mut frontier = vec![(idx, stack)];
            for d in depth..graph.level {
                let mut next = Vec::with_capacity(frontier.len() * n);
                for (ci, s) in frontier {
                    let _ = d;
                    for j in 0..n {
                        next.push((ci * n + j, s.pullback(calib, j)));
                    }
                }
                frontier = next;
            }
            for (ci, s) in frontier {
                let cell = &graph.cells_at_depth(graph.level)[ci];
                let bv = s.boundary_values();
                for (slot, &v) in cell.vertices.iter().enumerate() {
                    values.entry(v).or_insert(bv[slot]);
                }
            }
            cell_values.push(((copy, word), values));
        }
        // Combine: per vertex, sum the contributions along the deepest chain.
        let mut touched: HashMap<usize, Vec<usize>> = HashMap::new();
        for (ci, (_, values)) in cell_values.iter().enumerate() {
            for &v in values.keys() {
                touched.entry(v).or_default().push(ci);
            }
        }
        for (v, cells) in touched {
            let (mut best_len, mut best): (usize, &(usize, Word)) = (0, &cell_values[cells[0]].0);
            for &ci in &cells {
                let key = &cell_values[ci].0;
                if key.1.len() >= best_len {
                    best_len = key.1.len();
                    best = key;
                }
            }
            let (best_copy, best_word) = (best.0, best.1.clone());
            let mut total = 0.0;
            for &ci in &cells {
                let (key, values) = &cell_values[ci];
                if key.0 == best_copy && key.1.is_prefix_of(&best_word) {
                    total += values[&v];
                }
            }
            out.values[v] += total;
        }
        Ok(out)
    }

    /// Samples `D^k` of the function (exact atom algebra, then sampling).
    pub fn sample_laplacian(
        &self,
        calib: &Calibration,
        graph: &LevelGraph,
        k: usize,
    ) -> Result<GridFunction> {
        self.laplacian_power(calib, k)?.sample(calib, graph)
    }

    /// Seminorm `|phi|_m = max_{k<=m} sup |D^k phi|` sampled on the graph
    /// vertices inside the given region (None = everywhere).
    pub fn seminorm(
        &self,
        calib: &Calibration,
        graph: &LevelGraph,
        m: usize,
        region: Option<&[usize]>,
    ) -> Result<f64> {
        let mut worst = 0.0f64;
        for k in 0..=m {
            let g = self.sample_laplacian(calib, graph, k)?;
            match region {
                Some(vs) => {
                    for &v in vs {
                        worst = worst.max(g.values[v].abs());
                    }
                }
                None => worst = worst.max(g.sup_norm()),
            }
        }
        Ok(worst)
    }

    /// Value and normal jets at the corner `slot` of `cell`, to order `order`,
    /// from the germ inside `cell`. Eigen atoms contribute their exact value
    /// jets; their normal jets come from extrapolated grid fluxes.
    pub fn jet(
        &self,
        calib: &Calibration,
        copy: usize,
        cell: &Word,
        slot: usize,
        order: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let hs = &calib.hs;
        let mut rho = vec![0.0; order + 1];
        let mut sigma = vec![0.0; order + 1];
        rho[0] += self.constant;
        for a in &self.atoms {
            match &a.kind {
                AtomKind::Multiharmonic(s) => {
                    if a.copy != copy {
                        continue;
                    }
                    if a.cell.is_prefix_of(cell) {
                        // Ancestor (or equal): localize to `cell`.
                        let suffix = &cell.0[a.cell.len()..];
                        let local = s.pullback_word(calib, suffix);
                        let (r, mu) = hs.word_scaling(cell)?;
                        accumulate_jets(calib, &local, slot, r, mu, order, &mut rho, &mut sigma);
                    } else if cell.is_prefix_of(&a.cell) {
                        // Descendant: contributes only if it sits on the
                        // corner chain toward the point.
                        if let Some(deep_slot) = corner_chain_slot(hs, cell, slot, &a.cell) {
                            let (r, mu) = hs.word_scaling(&a.cell)?;
                            accumulate_jets(
                                calib, s, deep_slot, r, mu, order, &mut rho, &mut sigma,
                            );
                        }
                    }
                }
                AtomKind::Eigen { basis, index, coefficient } => {
                    let graph = &basis.graph;
                    let c = graph.cell(copy, cell)?;
                    let q = c.vertices[slot];
                    let psi = &basis.functions[*index];
                    let lambda = basis.eigenvalues[*index];
                    let mut factor = *coefficient;
                    for k in 0..=order {
                        rho[k] += factor * psi.values[q];
                        let nd = crate::calculus::normal_derivative(graph, psi, q, copy, cell)?;
                        sigma[k] += factor * nd.extrapolation.estimate;
                        factor *= -lambda;
                    }
                }
            }
        }
        Ok((rho, sigma))
    }
}

fn accumulate_jets(
    calib: &Calibration,
    local: &Stack,
    slot: usize,
    r: f64,
    mu: f64,
    order: usize,
    rho: &mut [f64],
    sigma: &mut [f64],
) {
    let mut s = local.clone();
    let mut scale = 1.0;
    for k in 0..=order {
        rho[k] += scale * s.boundary_values()[slot];
        sigma[k] += scale / r * s.normal_derivative(calib, slot);
        s = s.laplacian();
        scale /= r * mu;
    }
}

/// If `deep` lies on the corner chain of (cell, slot), returns the slot of the
/// same point in `deep`.
pub fn corner_chain_slot(
    hs: &crate::model::HarmonicStructure,
    cell: &Word,
    slot: usize,
    deep: &Word,
) -> Option<usize> {
    let mut cur_slot = slot;
    for depth in cell.len()..deep.len() {
        let (j, b) = hs.boundary_embeddings[cur_slot];
        if deep.0[depth] != j as u8 {
            return None;
        }
        cur_slot = b;
    }
    Some(cur_slot)
}

/// Serializable form of a smooth function. Eigen atoms keep their index and
/// eigenvalue; rebinding to a basis happens at load time.
#[derive(Debug, Serialize, Deserialize)]
pub struct SmoothFunctionSpec {
    pub constant: f64,
    pub atoms: Vec<AtomSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtomSpec {
    Multiharmonic {
        copy: usize,
        cell: String,
        /// Row-major stack coefficients: degree+1 rows of boundary values.
        coefficients: Vec<Vec<f64>>,
    },
    Eigenfunction {
        index: usize,
        eigenvalue: f64,
        coefficient: f64,
    },
}

impl SmoothFunction {
    pub fn to_spec(&self) -> SmoothFunctionSpec {
        SmoothFunctionSpec {
            constant: self.constant,
            atoms: self
                .atoms
                .iter()
                .map(|a| match &a.kind {
                    AtomKind::Multiharmonic(s) => AtomSpec::Multiharmonic {
                        copy: a.copy,
                        cell: a.cell.to_string(),
                        coefficients: s
                            .coeffs
                            .iter()
                            .map(|c| c.iter().copied().collect())
                            .collect(),
                    },
                    AtomKind::Eigen { basis, index, coefficient } => AtomSpec::Eigenfunction {
                        index: *index,
                        eigenvalue: basis.eigenvalues[*index],
                        coefficient: *coefficient,
                    },
                })
                .collect(),
        }
    }

    pub fn from_spec(
        spec: &SmoothFunctionSpec,
        basis: Option<&Arc<EigenBasis>>,
    ) -> Result<SmoothFunction> {
        let mut atoms = Vec::new();
        for a in &spec.atoms {
            match a {
                AtomSpec::Multiharmonic { copy, cell, coefficients } => {
                    let word = if cell == "-" { Word::empty() } else { Word::parse(cell)? };
                    let stack = Stack {
                        coeffs: coefficients
                            .iter()
                            .map(|c| DVector::from_column_slice(c))
                            .collect(),
                    };
                    atoms.push(Atom { copy: *copy, cell: word, kind: AtomKind::Multiharmonic(stack) });
                }
                AtomSpec::Eigenfunction { index, eigenvalue, coefficient } => {
                    let basis = basis.ok_or_else(|| {
                        Error::Input("eigen atom needs a basis to rebind against".into())
                    })?;
                    let have = basis.eigenvalues.get(*index).copied().ok_or_else(|| {
                        Error::Input(format!("basis has no mode {index}"))
                    })?;
                    if (have - eigenvalue).abs() > 1e-6 * eigenvalue.abs().max(1.0) {
                        return Err(Error::Input(format!(
                            "mode {index} eigenvalue mismatch: file {eigenvalue}, basis {have}"
                        )));
                    }
                    atoms.push(Atom {
                        copy: 0,
                        cell: Word::empty(),
                        kind: AtomKind::Eigen {
                            basis: basis.clone(),
                            index: *index,
                            coefficient: *coefficient,
                        },
                    });
                }
            }
        }
        Ok(SmoothFunction { constant: spec.constant, atoms })
    }
}
