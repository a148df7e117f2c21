//! Harmonic structures, cell addressing and level-m approximating graphs.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// A finite address word over the contraction alphabet {0, .., N-1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Word(pub Vec<u8>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn from_letters(letters: &[u8]) -> Self {
        Word(letters.to_vec())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut letters = Vec::with_capacity(text.len());
        for ch in text.chars() {
            let d = ch
                .to_digit(10)
                .ok_or_else(|| Error::Input(format!("word letter `{ch}` is not a digit")))?;
            letters.push(d as u8);
        }
        Ok(Word(letters))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, letter: u8) -> Word {
        let mut w = self.0.clone();
        w.push(letter);
        Word(w)
    }

    pub fn is_prefix_of(&self, other: &Word) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "-");
        }
        for l in &self.0 {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Harmonic structure data: extension matrices `A_j`, energy renormalization
/// factors `r_j`, measure weights `mu_j`, the boundary embedding of V0 into the
/// level-1 cells, and the level-1 junction identifications.
///
/// The level-0 conductance matrix is derived from the structure (it is the
/// fixed point of `Q -> sum_j r_j^{-1} A_j^T Q A_j`) unless the structure is the
/// built-in gasket, where it is stored exactly.
#[derive(Debug, Clone)]
pub struct HarmonicStructure {
    pub name: String,
    /// Harmonic extension matrices, one per contraction; `A_j` maps boundary
    /// values of a harmonic function to its values on the j-th cell's slots.
    pub extension: Vec<DMatrix<f64>>,
    pub energy_weights: Vec<f64>,
    pub measure_weights: Vec<f64>,
    /// For every V0 index `a`, the pair `(j, b)` with `F_j(q_b) = q_a`.
    pub boundary_embeddings: Vec<(usize, usize)>,
    /// Level-1 identifications `((j, a), (k, b))` meaning `F_j(q_a) = F_k(q_b)`.
    pub identifications: Vec<((usize, usize), (usize, usize))>,
    /// Level-0 conductance Laplacian (`Q0`): `E_0(u, v) = u^T Q0 v`.
    pub q0: DMatrix<f64>,
}

/// JSON document for loadable fractal structures. Matrix entries are decimal
/// strings or `p/q` fractions so exact rationals survive the trip.
#[derive(Debug, Serialize, Deserialize)]
pub struct FractalSpecFile {
    pub name: String,
    pub matrices: Vec<Vec<String>>,
    pub r: Vec<String>,
    pub mu: Vec<String>,
    pub boundary_embeddings: Vec<[usize; 2]>,
    pub identifications: Vec<[[usize; 2]; 2]>,
}

fn parse_decimal(text: &str) -> Result<f64> {
    let t = text.trim();
    if let Some((p, q)) = t.split_once('/') {
        let num: f64 = p
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("bad numerator in `{t}`")))?;
        let den: f64 = q
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("bad denominator in `{t}`")))?;
        if den == 0.0 {
            return Err(Error::Input(format!("zero denominator in `{t}`")));
        }
        Ok(num / den)
    } else {
        t.parse()
            .map_err(|_| Error::Input(format!("bad decimal `{t}`")))
    }
}

impl HarmonicStructure {
    pub fn map_count(&self) -> usize {
        self.extension.len()
    }

    pub fn boundary_size(&self) -> usize {
        self.q0.nrows()
    }

    /// The Sierpinski gasket with its standard symmetric harmonic structure:
    /// `r_j = 3/5`, `mu_j = 1/3`, unit level-0 conductances, and the 1/5-2/5
    /// extension rule.
    pub fn sierpinski_gasket() -> Arc<Self> {
        let n = 3usize;
        let mut extension = Vec::with_capacity(n);
        for j in 0..n {
            let mut a = DMatrix::zeros(3, 3);
            for slot in 0..3 {
                if slot == j {
                    a[(slot, j)] = 1.0;
                } else {
                    // F_j(q_slot) is the midpoint between q_j and q_slot.
                    for col in 0..3 {
                        a[(slot, col)] = if col == j || col == slot { 2.0 / 5.0 } else { 1.0 / 5.0 };
                    }
                }
            }
            extension.push(a);
        }
        let q0 = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0]);
        let hs = HarmonicStructure {
            name: "sg".into(),
            extension,
            energy_weights: vec![3.0 / 5.0; 3],
            measure_weights: vec![1.0 / 3.0; 3],
            boundary_embeddings: vec![(0, 0), (1, 1), (2, 2)],
            identifications: vec![((0, 1), (1, 0)), ((0, 2), (2, 0)), ((1, 2), (2, 1))],
            q0,
        };
        hs.validate().expect("built-in gasket must validate");
        Arc::new(hs)
    }

    pub fn from_spec_file(spec: &FractalSpecFile) -> Result<Arc<Self>> {
        let n = spec.matrices.len();
        if n < 2 {
            return Err(Error::Structure("need at least two contractions".into()));
        }
        if spec.r.len() != n || spec.mu.len() != n {
            return Err(Error::Structure("r and mu must have one entry per map".into()));
        }
        let n0 = spec.boundary_embeddings.len();
        if n0 < 2 {
            return Err(Error::Structure("boundary must have at least two points".into()));
        }
        let mut extension = Vec::with_capacity(n);
        for rows in &spec.matrices {
            if rows.len() != n0 * n0 {
                return Err(Error::Structure(format!(
                    "extension matrix must be {n0}x{n0} row-major"
                )));
            }
            let vals: Result<Vec<f64>> = rows.iter().map(|s| parse_decimal(s)).collect();
            extension.push(DMatrix::from_row_slice(n0, n0, &vals?));
        }
        let r: Result<Vec<f64>> = spec.r.iter().map(|s| parse_decimal(s)).collect();
        let mu: Result<Vec<f64>> = spec.mu.iter().map(|s| parse_decimal(s)).collect();
        let boundary_embeddings = spec.boundary_embeddings.iter().map(|e| (e[0], e[1])).collect();
        let identifications = spec
            .identifications
            .iter()
            .map(|p| ((p[0][0], p[0][1]), (p[1][0], p[1][1])))
            .collect();
        let r = r?;
        let extension = extension;
        let q0 = derive_base_conductances(&extension, &r)?;
        let hs = HarmonicStructure {
            name: spec.name.clone(),
            extension,
            energy_weights: r,
            measure_weights: mu?,
            boundary_embeddings,
            identifications,
            q0,
        };
        hs.validate()?;
        Ok(Arc::new(hs))
    }

    pub fn to_spec_file(&self) -> FractalSpecFile {
        FractalSpecFile {
            name: self.name.clone(),
            matrices: self
                .extension
                .iter()
                .map(|a| {
                    let mut rows = Vec::new();
                    for i in 0..a.nrows() {
                        for j in 0..a.ncols() {
                            rows.push(format!("{:.17e}", a[(i, j)]));
                        }
                    }
                    rows
                })
                .collect(),
            r: self.energy_weights.iter().map(|v| format!("{v:.17e}")).collect(),
            mu: self.measure_weights.iter().map(|v| format!("{v:.17e}")).collect(),
            boundary_embeddings: self.boundary_embeddings.iter().map(|&(j, b)| [j, b]).collect(),
            identifications: self
                .identifications
                .iter()
                .map(|&((j, a), (k, b))| [[j, a], [k, b]])
                .collect(),
        }
    }

    /// Checks all structural invariants; rejects rather than repairs.
    pub fn validate(&self) -> Result<()> {
        let n = self.map_count();
        let n0 = self.boundary_size();
        if n < 2 {
            return Err(Error::Structure("need at least two contractions".into()));
        }
        if n0 < 2 {
            return Err(Error::Structure("boundary must hold at least two points".into()));
        }
        if self.energy_weights.len() != n || self.measure_weights.len() != n {
            return Err(Error::Structure("weight counts must match map count".into()));
        }
        for (j, a) in self.extension.iter().enumerate() {
            if a.nrows() != n0 || a.ncols() != n0 {
                return Err(Error::Structure(format!("A_{j} has wrong shape")));
            }
            for row in 0..n0 {
                let sum: f64 = (0..n0).map(|c| a[(row, c)]).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::Structure(format!(
                        "A_{j} row {row} sums to {sum}, not 1"
                    )));
                }
            }
            let r = self.energy_weights[j];
            if !(0.0 < r && r < 1.0) {
                return Err(Error::Structure(format!("r_{j} = {r} outside (0,1)")));
            }
            // Spectral conditions: rho(A_j) = 1 simple, |lambda_2| = r_j.
            let eigs = a.clone().complex_eigenvalues();
            let mut mags: Vec<f64> = eigs.iter().map(|z| z.norm()).collect();
            mags.sort_by(|x, y| y.partial_cmp(x).unwrap());
            if (mags[0] - 1.0).abs() > 1e-10 {
                return Err(Error::Structure(format!(
                    "A_{j} spectral radius {} is not 1",
                    mags[0]
                )));
            }
            if (mags[1] - r).abs() > 1e-10 {
                return Err(Error::Structure(format!(
                    "A_{j} second eigenvalue modulus {} does not match r_{j} = {r}",
                    mags[1]
                )));
            }
        }
        let mu_sum: f64 = self.measure_weights.iter().sum();
        if (mu_sum - 1.0).abs() > 1e-12 {
            return Err(Error::Structure(format!("measure weights sum to {mu_sum}")));
        }
        for &m in &self.measure_weights {
            if !(0.0 < m && m < 1.0) {
                return Err(Error::Structure(format!("mu = {m} outside (0,1)")));
            }
        }
        if self.boundary_embeddings.len() != n0 {
            return Err(Error::Structure("need one boundary embedding per V0 point".into()));
        }
        for (a, &(j, b)) in self.boundary_embeddings.iter().enumerate() {
            if j >= n || b >= n0 {
                return Err(Error::Structure("boundary embedding out of range".into()));
            }
            // F_j(q_b) = q_a forces row b of A_j to be the a-th unit row.
            for c in 0..n0 {
                let want = if c == a { 1.0 } else { 0.0 };
                if (self.extension[j][(b, c)] - want).abs() > 1e-12 {
                    return Err(Error::Structure(format!(
                        "embedding ({j},{b}) -> {a} inconsistent with A_{j}"
                    )));
                }
            }
        }
        for &((j, a), (k, b)) in &self.identifications {
            if j >= n || k >= n || a >= n0 || b >= n0 {
                return Err(Error::Structure("identification out of range".into()));
            }
            if j == k {
                return Err(Error::Structure(
                    "identification must join distinct cells".into(),
                ));
            }
            // The two slots are the same point, so harmonic values must agree.
            for c in 0..n0 {
                if (self.extension[j][(a, c)] - self.extension[k][(b, c)]).abs() > 1e-12 {
                    return Err(Error::Structure(format!(
                        "identification (({j},{a}),({k},{b})) inconsistent with extensions"
                    )));
                }
            }
        }
        // Q0 must be the renormalization fixed point, PSD with kernel = constants,
        // and a conductance matrix (nonpositive off-diagonal).
        let mut t = DMatrix::zeros(n0, n0);
        for j in 0..n {
            t += self.extension[j].transpose() * &self.q0 * &self.extension[j] / self.energy_weights[j];
        }
        let resid = (&t - &self.q0).norm();
        if resid > 1e-10 * self.q0.norm() {
            return Err(Error::Structure(format!(
                "level-0 form is not renormalization-invariant (residual {resid:.3e})"
            )));
        }
        for i in 0..n0 {
            let row_sum: f64 = (0..n0).map(|c| self.q0[(i, c)]).sum();
            if row_sum.abs() > 1e-10 {
                return Err(Error::Structure("Q0 must annihilate constants".into()));
            }
            for c in 0..n0 {
                if c != i && self.q0[(i, c)] > 1e-12 {
                    return Err(Error::Structure("Q0 off-diagonal must be <= 0".into()));
                }
            }
        }
        // Extension matrices must reproduce levelwise energy minimization; this
        // pins the composition order operationally.
        self.check_extension_against_minimizer()?;
        Ok(())
    }

    /// Level-1 harmonic extension computed two ways: by the extension matrices
    /// and by minimizing the level-1 energy over interior values.
    fn check_extension_against_minimizer(&self) -> Result<()> {
        let graph = LevelGraph::build(&Arc::new(self.clone()), 1)?;
        let n0 = self.boundary_size();
        for basis in 0..n0 {
            let mut bvals = vec![0.0; n0];
            bvals[basis] = 1.0;
            let by_matrix = graph.extend_harmonically(&bvals);
            let by_solve = graph.minimize_energy_with_boundary(&bvals)?;
            for v in 0..graph.vertex_count() {
                if (by_matrix[v] - by_solve[v]).abs() > 1e-12 {
                    return Err(Error::Structure(format!(
                        "extension matrices disagree with energy minimization at vertex {v}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `(r_w, mu_w)` for a word.
    pub fn word_scaling(&self, w: &Word) -> Result<(f64, f64)> {
        let mut r = 1.0;
        let mut mu = 1.0;
        for &l in &w.0 {
            if l as usize >= self.map_count() {
                return Err(Error::Input(format!("letter {l} out of range")));
            }
            r *= self.energy_weights[l as usize];
            mu *= self.measure_weights[l as usize];
        }
        Ok((r, mu))
    }

    /// Extension matrix along a word: boundary values of a harmonic function to
    /// its values on `F_w(V_0)`. Letters compose so that
    /// `A_{w · j} = A_j * A_w`.
    pub fn word_matrix(&self, w: &Word) -> DMatrix<f64> {
        let n0 = self.boundary_size();
        let mut m = DMatrix::identity(n0, n0);
        for &l in &w.0 {
            m = &self.extension[l as usize] * m;
        }
        m
    }
}

/// Derives the level-0 conductance matrix as the fixed point of the energy
/// renormalization map, scaled so the largest conductance is 1.
pub fn derive_base_conductances(extension: &[DMatrix<f64>], r: &[f64]) -> Result<DMatrix<f64>> {
    let n0 = extension[0].nrows();
    let dim = n0 * n0;
    // Transfer operator on full matrices; the fixed point we want is symmetric.
    let mut transfer = DMatrix::zeros(dim, dim);
    for (j, a) in extension.iter().enumerate() {
        // vec(A^T Q A) = (A^T (x) A^T) vec(Q) with column-major vec.
        for p in 0..n0 {
            for q in 0..n0 {
                for s in 0..n0 {
                    for t in 0..n0 {
                        transfer[(p + q * n0, s + t * n0)] += a[(s, p)] * a[(t, q)] / r[j];
                    }
                }
            }
        }
    }
    let ident = DMatrix::identity(dim, dim);
    let svd = (transfer - ident).svd(true, true);
    let v_t = svd.v_t.as_ref().unwrap();
    // Nullspace vectors = rows of V^T with tiny singular values.
    let mut candidates = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s < 1e-8 {
            candidates.push(v_t.row(i).transpose());
        }
    }
    if candidates.is_empty() {
        return Err(Error::Structure(
            "no renormalization-invariant level-0 form exists".into(),
        ));
    }
    // Pick the symmetric candidate with negative off-diagonals.
    for cand in &candidates {
        let mut q = DMatrix::zeros(n0, n0);
        for p in 0..n0 {
            for c in 0..n0 {
                q[(p, c)] = cand[p + c * n0];
            }
        }
        let q = (q.clone() + q.transpose()) * 0.5;
        let mut max_off: f64 = 0.0;
        for p in 0..n0 {
            for c in 0..n0 {
                if p != c {
                    max_off = max_off.max(q[(p, c)].abs());
                }
            }
        }
        if max_off < 1e-12 {
            continue;
        }
        // Orient so off-diagonals are <= 0, then normalize.
        let sign = if q[(0, 0)] < 0.0 { -1.0 } else { 1.0 };
        let q = q * (sign / max_off);
        let ok_signs = (0..n0).all(|p| (0..n0).all(|c| p == c || q[(p, c)] <= 1e-12));
        if ok_signs {
            return Ok(q);
        }
    }
    Err(Error::Structure(
        "invariant form exists but is not a conductance matrix".into(),
    ))
}

/// A cell of the level graph: a copy index (for fractafolds), an address word,
/// and the global vertex id for each V0 slot.
#[derive(Debug, Clone)]
pub struct Cell {
    pub copy: usize,
    pub word: Word,
    pub vertices: Vec<usize>,
    pub r_w: f64,
    pub mu_w: f64,
}

/// Gluing instructions for a restricted cellular fractafold: copies of X with
/// pairs of boundary slots identified. `((copy, a), (copy', b))`.
#[derive(Debug, Clone, Default)]
pub struct FractafoldSpec {
    pub copies: usize,
    pub gluings: Vec<((usize, usize), (usize, usize))>,
}

impl FractafoldSpec {
    pub fn single() -> Self {
        FractafoldSpec { copies: 1, gluings: Vec::new() }
    }

    /// Two copies with each boundary point glued to its twin: a compact
    /// boundaryless fractafold.
    pub fn double_cover(n0: usize) -> Self {
        FractafoldSpec {
            copies: 2,
            gluings: (0..n0).map(|a| ((0, a), (1, a))).collect(),
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }
    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }
    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// The level-m vertex network: identified vertex slots of all level-m cells,
/// conductances, quadrature weights, boundary flags and the full cell tree.
#[derive(Debug)]
pub struct LevelGraph {
    pub hs: Arc<HarmonicStructure>,
    pub fractafold: FractafoldSpec,
    pub level: usize,
    vertex_count: usize,
    pub boundary: Vec<bool>,
    pub measure: Vec<f64>,
    /// Depth at which each vertex first appears (0 for copies of V0 slots).
    pub birth_depth: Vec<usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    /// Cells indexed by depth 0..=level; depth-d entry holds all depth-d cells.
    cells_by_depth: Vec<Vec<Cell>>,
    cell_lookup: HashMap<(usize, Word), usize>,
}

impl LevelGraph {
    pub fn build(hs: &Arc<HarmonicStructure>, level: usize) -> Result<Self> {
        Self::build_fractafold(hs, level, FractafoldSpec::single())
    }

    pub fn build_fractafold(
        hs: &Arc<HarmonicStructure>,
        level: usize,
        fractafold: FractafoldSpec,
    ) -> Result<Self> {
        let n = hs.map_count();
        let n0 = hs.boundary_size();
        if fractafold.copies == 0 {
            return Err(Error::Structure("fractafold needs at least one copy".into()));
        }

        // Depth-0 vertices: V0 slots per copy, merged along gluings.
        let slot_total = fractafold.copies * n0;
        let mut uf = UnionFind::new(slot_total);
        for &((c0, a), (c1, b)) in &fractafold.gluings {
            if c0 >= fractafold.copies || c1 >= fractafold.copies || a >= n0 || b >= n0 {
                return Err(Error::Structure("gluing out of range".into()));
            }
            uf.union(c0 * n0 + a, c1 * n0 + b);
        }
        let mut rep_to_id = HashMap::new();
        let mut glued = vec![false; slot_total];
        for &((c0, a), (c1, b)) in &fractafold.gluings {
            glued[c0 * n0 + a] = true;
            glued[c1 * n0 + b] = true;
        }
        let mut boundary = Vec::new();
        let mut birth_depth = Vec::new();
        let mut slot_vertex = vec![0usize; slot_total];
        let mut is_glued = Vec::new();
        for s in 0..slot_total {
            let r = uf.find(s);
            let id = *rep_to_id.entry(r).or_insert_with(|| {
                boundary.push(true);
                is_glued.push(false);
                birth_depth.push(0);
                boundary.len() - 1
            });
            slot_vertex[s] = id;
            if glued[s] {
                is_glued[id] = true;
            }
        }
        // Glued points are interior junction points of the fractafold.
        for (id, g) in is_glued.iter().enumerate() {
            if *g {
                boundary[id] = false;
            }
        }

        let mut cells_by_depth: Vec<Vec<Cell>> = Vec::with_capacity(level + 1);
        let depth0: Vec<Cell> = (0..fractafold.copies)
            .map(|copy| Cell {
                copy,
                word: Word::empty(),
                vertices: (0..n0).map(|a| slot_vertex[copy * n0 + a]).collect(),
                r_w: 1.0,
                mu_w: 1.0,
            })
            .collect();
        cells_by_depth.push(depth0);

        let mut vertex_count = boundary.len();
        for depth in 1..=level {
            let parents = cells_by_depth.last().unwrap().clone();
            // Slot ids for the new generation: (parent index, letter, slot).
            let stride = n * n0;
            let new_slot = |p: usize, j: usize, a: usize| p * stride + j * n0 + a;
            let mut uf = UnionFind::new(parents.len() * stride);
            // Junctions born at this depth.
            for (p, _) in parents.iter().enumerate() {
                for &((j, a), (k, b)) in &hs.identifications {
                    uf.union(new_slot(p, j, a), new_slot(p, k, b));
                }
            }
            // Inherited vertices: parent's slot a sits at (j_a, b_a) in the children.
            // Collect groups keyed by the existing vertex id.
            let mut inherit: HashMap<usize, Vec<usize>> = HashMap::new();
            for (p, cell) in parents.iter().enumerate() {
                for (a, &(j, b)) in hs.boundary_embeddings.iter().enumerate() {
                    inherit.entry(cell.vertices[a]).or_default().push(new_slot(p, j, b));
                }
            }
            for slots in inherit.values() {
                for pair in slots.windows(2) {
                    uf.union(pair[0], pair[1]);
                }
            }
            // Assign vertex ids: inherited groups keep the old id, fresh groups
            // get new ids.
            let mut rep_to_id: HashMap<usize, usize> = HashMap::new();
            for (old_id, slots) in &inherit {
                rep_to_id.insert(uf.find(slots[0]), *old_id);
            }
            let mut cells = Vec::with_capacity(parents.len() * n);
            let mut slot_id = vec![usize::MAX; parents.len() * stride];
            for (p, _) in parents.iter().enumerate() {
                for j in 0..n {
                    for a in 0..n0 {
                        let s = new_slot(p, j, a);
                        let r = uf.find(s);
                        let id = *rep_to_id.entry(r).or_insert_with(|| {
                            boundary.push(false);
                            birth_depth.push(depth);
                            vertex_count += 1;
                            vertex_count - 1
                        });
                        slot_id[s] = id;
                    }
                }
            }
            for (p, parent) in parents.iter().enumerate() {
                for j in 0..n {
                    cells.push(Cell {
                        copy: parent.copy,
                        word: parent.word.child(j as u8),
                        vertices: (0..n0).map(|a| slot_id[new_slot(p, j, a)]).collect(),
                        r_w: parent.r_w * hs.energy_weights[j],
                        mu_w: parent.mu_w * hs.measure_weights[j],
                    });
                }
            }
            cells_by_depth.push(cells);
        }

        let mut graph = LevelGraph {
            hs: hs.clone(),
            fractafold,
            level,
            vertex_count,
            boundary,
            measure: vec![0.0; vertex_count],
            birth_depth,
            adjacency: vec![Vec::new(); vertex_count],
            cells_by_depth,
            cell_lookup: HashMap::new(),
        };
        for (idx, cell) in graph.cells_by_depth[level].iter().enumerate() {
            graph.cell_lookup.insert((cell.copy, cell.word.clone()), idx);
        }

        // Conductances and quadrature weights from the finest cells.
        let n0f = n0 as f64;
        let mut edge_acc: HashMap<(usize, usize), f64> = HashMap::new();
        for cell in &graph.cells_by_depth[level] {
            for a in 0..n0 {
                let va = cell.vertices[a];
                graph.measure[va] += cell.mu_w / n0f;
                for b in (a + 1)..n0 {
                    let c = -hs.q0[(a, b)];
                    if c > 0.0 {
                        let vb = cell.vertices[b];
                        if va == vb {
                            return Err(Error::Structure(
                                "identifications collapse a conducting edge".into(),
                            ));
                        }
                        let key = (va.min(vb), va.max(vb));
                        *edge_acc.entry(key).or_insert(0.0) += c / cell.r_w;
                    }
                }
            }
        }
        for ((a, b), c) in edge_acc {
            graph.adjacency[a].push((b, c));
            graph.adjacency[b].push((a, c));
        }
        for nbrs in &mut graph.adjacency {
            nbrs.sort_by_key(|&(v, _)| v);
        }
        Ok(graph)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells_by_depth[self.level]
    }

    pub fn cells_at_depth(&self, depth: usize) -> &[Cell] {
        &self.cells_by_depth[depth]
    }

    pub fn cell(&self, copy: usize, word: &Word) -> Result<&Cell> {
        if word.len() > self.level {
            return Err(Error::Geometry(format!(
                "cell {word} deeper than graph level {}",
                self.level
            )));
        }
        self.cells_by_depth[word.len()]
            .iter()
            .find(|c| c.copy == copy && &c.word == word)
            .ok_or_else(|| Error::Geometry(format!("no cell {word} in copy {copy}")))
    }

    /// All level-graph vertices lying in the (possibly coarse) cell.
    pub fn cell_vertex_set(&self, copy: usize, word: &Word) -> Result<Vec<usize>> {
        self.cell(copy, word)?;
        let mut seen = vec![false; self.vertex_count];
        let mut out = Vec::new();
        for cell in self.cells() {
            if cell.copy == copy && word.is_prefix_of(&cell.word) {
                for &v in &cell.vertices {
                    if !seen[v] {
                        seen[v] = true;
                        out.push(v);
                    }
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.vertex_count).filter(|&v| self.boundary[v]).collect()
    }

    pub fn total_measure(&self) -> f64 {
        self.fractafold.copies as f64
    }

    /// Harmonic extension of boundary values to the whole level graph via the
    /// extension matrices. Only defined for single-copy graphs.
    pub fn extend_harmonically(&self, boundary_values: &[f64]) -> Vec<f64> {
        assert_eq!(self.fractafold.copies, 1, "extension needs a single copy");
        let n0 = self.hs.boundary_size();
        assert_eq!(boundary_values.len(), n0);
        let mut values = vec![0.0; self.vertex_count];
        let mut assigned = vec![false; self.vertex_count];
        let b = DVector::from_column_slice(boundary_values);
        // Walk the cell tree, carrying boundary values per cell.
        let mut frontier: Vec<(usize, DVector<f64>)> = vec![(0, b)];
        for depth in 0..=self.level {
            let mut next = Vec::new();
            for (cell_idx, bvals) in frontier {
                let cell = &self.cells_by_depth[depth][cell_idx];
                for (a, &v) in cell.vertices.iter().enumerate() {
                    if !assigned[v] {
                        assigned[v] = true;
                        values[v] = bvals[a];
                    }
                }
                if depth < self.level {
                    for j in 0..self.hs.map_count() {
                        let child_idx = cell_idx * self.hs.map_count() + j;
                        next.push((child_idx, &self.hs.extension[j] * &bvals));
                    }
                }
            }
            frontier = next;
        }
        values
    }

    /// Direct energy minimization with pinned boundary values (dense; used for
    /// validation oracles at small levels).
    pub fn minimize_energy_with_boundary(&self, boundary_values: &[f64]) -> Result<Vec<f64>> {
        let bd = self.boundary_vertices();
        if bd.len() != boundary_values.len() {
            return Err(Error::Input("boundary value count mismatch".into()));
        }
        let interior: Vec<usize> = (0..self.vertex_count).filter(|&v| !self.boundary[v]).collect();
        let pos: HashMap<usize, usize> = interior.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let ni = interior.len();
        if ni == 0 {
            let mut values = vec![0.0; self.vertex_count];
            for (i, &v) in bd.iter().enumerate() {
                values[v] = boundary_values[i];
            }
            return Ok(values);
        }
        let mut a = DMatrix::zeros(ni, ni);
        let mut rhs = DVector::zeros(ni);
        let mut bval = vec![0.0; self.vertex_count];
        for (i, &v) in bd.iter().enumerate() {
            bval[v] = boundary_values[i];
        }
        for (i, &v) in interior.iter().enumerate() {
            for &(u, c) in self.neighbors(v) {
                a[(i, i)] += c;
                if let Some(&jj) = pos.get(&u) {
                    a[(i, jj)] -= c;
                } else {
                    rhs[i] += c * bval[u];
                }
            }
        }
        let sol = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular interior system".into()))?;
        let mut values = bval;
        for (i, &v) in interior.iter().enumerate() {
            values[v] = sol[i];
        }
        Ok(values)
    }

    /// Renormalized flux into the cell at a vertex: the level-m discrete normal
    /// derivative of `u` at `q` with respect to `cell`.
    pub fn cell_flux(&self, cell: &Cell, u: &[f64], q: usize) -> f64 {
        let n0 = self.hs.boundary_size();
        let slot = cell.vertices.iter().position(|&v| v == q).expect("q on cell");
        let mut flux = 0.0;
        for b in 0..n0 {
            let c = -self.hs.q0[(slot, b)];
            if b != slot && c > 0.0 {
                flux += c / cell.r_w * (u[q] - u[cell.vertices[b]]);
            }
        }
        flux
    }
}

/// A point addressed as a corner of a cell: `F_w(q_slot)` in the given copy.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellPoint {
    pub copy: usize,
    pub cell: Word,
    pub slot: usize,
}

impl CellPoint {
    pub fn new(copy: usize, cell: Word, slot: usize) -> Self {
        CellPoint { copy, cell, slot }
    }

    pub fn vertex_id(&self, graph: &LevelGraph) -> Result<usize> {
        Ok(graph.cell(self.copy, &self.cell)?.vertices[self.slot])
    }
}

/// Sampled function values on the vertices of a LevelGraph.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub level: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(graph: &LevelGraph) -> Self {
        GridFunction { level: graph.level, values: vec![0.0; graph.vertex_count()] }
    }

    pub fn constant(graph: &LevelGraph, c: f64) -> Self {
        GridFunction { level: graph.level, values: vec![c; graph.vertex_count()] }
    }

    pub fn from_values(graph: &LevelGraph, values: Vec<f64>) -> Result<Self> {
        if values.len() != graph.vertex_count() {
            return Err(Error::Input(format!(
                "expected {} values, got {}",
                graph.vertex_count(),
                values.len()
            )));
        }
        Ok(GridFunction { level: graph.level, values })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&mut self, alpha: f64, other: &GridFunction) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.values {
            *a *= alpha;
        }
    }
}

/// Effective resistance between two vertices: reciprocal of the minimum energy
/// over functions with `u(x) = 0`, `u(y) = 1`.
pub fn effective_resistance(graph: &LevelGraph, x: usize, y: usize) -> Result<f64> {
    if x == y {
        return Ok(0.0);
    }
    let solver = crate::solver::PinnedSolver::new(graph, &[x, y])?;
    let u = solver.solve(&[0.0, 1.0]);
    // Minimum energy is the flux through the pinned pair.
    let mut energy = 0.0;
    for v in 0..graph.vertex_count() {
        for &(w, c) in graph.neighbors(v) {
            if v < w {
                let d = u[v] - u[w];
                energy += c * d * d;
            }
        }
    }
    if energy <= 0.0 {
        return Err(Error::NoPath(format!("vertices {x} and {y} are not connected")));
    }
    Ok(1.0 / energy)
}
