//! Dirichlet Green's operators on cells and finite cell unions, the gluing
//! construction, and the harmonic-projected operator acting on test functions.

use crate::calculus::laplacian;
use crate::error::{Error, Result};
use crate::model::{GridFunction, LevelGraph, Word};
use crate::solver::SparseLdl;
use nalgebra::{DMatrix, DVector};
use std::collections::HashSet;
use std::sync::Arc;

/// A vertex measure on a level graph: point atoms plus a grid density
/// integrated with the quadrature weights.
#[derive(Debug, Clone)]
pub struct Measure {
    pub atoms: Vec<(usize, f64)>,
    pub density: Option<GridFunction>,
}

impl Measure {
    pub fn zero() -> Self {
        Measure { atoms: Vec::new(), density: None }
    }

    pub fn dirac(vertex: usize, weight: f64) -> Self {
        Measure { atoms: vec![(vertex, weight)], density: None }
    }

    pub fn from_density(density: GridFunction) -> Self {
        Measure { atoms: Vec::new(), density: Some(density) }
    }

    pub fn total(&self, graph: &LevelGraph) -> f64 {
        let mut t: f64 = self.atoms.iter().map(|&(_, w)| w).sum();
        if let Some(d) = &self.density {
            t += d
                .values
                .iter()
                .zip(&graph.measure)
                .map(|(v, w)| v * w)
                .sum::<f64>();
        }
        t
    }

    /// Pointwise source for the equation `-Delta u = nu`: atoms divided by the
    /// vertex quadrature weight plus the density.
    pub fn pointwise(&self, graph: &LevelGraph, vertex: usize) -> f64 {
        let mut s = 0.0;
        for &(v, w) in &self.atoms {
            if v == vertex {
                s += w / graph.measure[vertex];
            }
        }
        if let Some(d) = &self.density {
            s += d.values[vertex];
        }
        s
    }

    pub fn integrate(&self, graph: &LevelGraph, phi: &GridFunction) -> f64 {
        let mut t: f64 = self.atoms.iter().map(|&(v, w)| w * phi.values[v]).sum();
        if let Some(d) = &self.density {
            t += d
                .values
                .iter()
                .zip(&phi.values)
                .zip(&graph.measure)
                .map(|((a, b), w)| a * b * w)
                .sum::<f64>();
        }
        t
    }
}

/// A connected finite union of cells realized on a level graph (or the whole
/// graph, which is boundaryless for glued fractafolds like the double cover).
#[derive(Debug)]
pub struct Region {
    pub graph: Arc<LevelGraph>,
    pub cells: Vec<(usize, Word)>,
    pub vertices: Vec<usize>,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    pub in_region: Vec<bool>,
    pub is_interior: Vec<bool>,
    /// Quadrature weights restricted to the region's cells.
    pub measure: Vec<f64>,
}

impl Region {
    pub fn whole(graph: Arc<LevelGraph>) -> Region {
        let n = graph.vertex_count();
        let vertices: Vec<usize> = (0..n).collect();
        let boundary = graph.boundary_vertices();
        let interior: Vec<usize> = (0..n).filter(|&v| !graph.boundary[v]).collect();
        let mut is_interior = vec![false; n];
        for &v in &interior {
            is_interior[v] = true;
        }
        let cells = graph
            .cells_at_depth(0)
            .iter()
            .map(|c| (c.copy, c.word.clone()))
            .collect();
        Region {
            measure: graph.measure.clone(),
            cells,
            vertices,
            interior,
            boundary,
            in_region: vec![true; n],
            is_interior,
            graph,
        }
    }

    pub fn cell_union(graph: Arc<LevelGraph>, cells: &[(usize, Word)]) -> Result<Region> {
        if cells.is_empty() {
            return Err(Error::Geometry("empty cell union".into()));
        }
        for (copy, w) in cells {
            graph.cell(*copy, w)?;
            for (copy2, w2) in cells {
                if (copy, w) != (copy2, w2) && copy == copy2 && w.is_prefix_of(w2) {
                    return Err(Error::Geometry(format!(
                        "cell {w2} is contained in cell {w}"
                    )));
                }
            }
        }
        let n = graph.vertex_count();
        let n0 = graph.hs.boundary_size();
        let covered = |copy: usize, word: &Word| {
            cells.iter().any(|(c, w)| *c == copy && w.is_prefix_of(word))
        };
        let mut in_region = vec![false; n];
        let mut measure = vec![0.0; n];
        let mut outside_touch = vec![false; n];
        for cell in graph.cells() {
            let inside = covered(cell.copy, &cell.word);
            for &v in &cell.vertices {
                if inside {
                    in_region[v] = true;
                } else {
                    outside_touch[v] = true;
                }
            }
            if inside {
                for &v in &cell.vertices {
                    measure[v] += cell.mu_w / n0 as f64;
                }
            }
        }
        let vertices: Vec<usize> = (0..n).filter(|&v| in_region[v]).collect();
        let mut is_interior = vec![false; n];
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for &v in &vertices {
            if outside_touch[v] || graph.boundary[v] {
                boundary.push(v);
            } else {
                is_interior[v] = true;
                interior.push(v);
            }
        }
        let region = Region {
            graph,
            cells: cells.to_vec(),
            vertices,
            interior,
            boundary,
            in_region,
            is_interior,
            measure,
        };
        if !region.is_connected() {
            return Err(Error::Geometry("cell union is not connected".into()));
        }
        Ok(region)
    }

    pub fn single_cell(graph: Arc<LevelGraph>, copy: usize, word: Word) -> Result<Region> {
        Region::cell_union(graph, &[(copy, word)])
    }

    fn is_connected(&self) -> bool {
        if self.vertices.is_empty() {
            return false;
        }
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack = vec![self.vertices[0]];
        seen.insert(self.vertices[0]);
        while let Some(v) = stack.pop() {
            // Walk only edges interior to the region: any edge from an
            // interior endpoint stays inside; for boundary vertices walk
            // through region cells.
            for &(u, _) in self.graph.neighbors(v) {
                if self.in_region[u]
                    && !seen.contains(&u)
                    && (self.is_interior[v] || self.is_interior[u] || self.share_region_cell(v, u))
                {
                    seen.insert(u);
                    stack.push(u);
                }
            }
        }
        seen.len() == self.vertices.len()
    }

    fn share_region_cell(&self, v: usize, u: usize) -> bool {
        self.graph.cells().iter().any(|c| {
            c.vertices.contains(&v)
                && c.vertices.contains(&u)
                && self
                    .cells
                    .iter()
                    .any(|(copy, w)| *copy == c.copy && w.is_prefix_of(&c.word))
        })
    }

    pub fn is_boundaryless(&self) -> bool {
        self.boundary.is_empty()
    }

    /// Measure-weighted inner product over the region.
    pub fn inner(&self, u: &GridFunction, v: &GridFunction) -> f64 {
        self.vertices
            .iter()
            .map(|&x| u.values[x] * v.values[x] * self.measure[x])
            .sum()
    }

    pub fn total_measure(&self) -> f64 {
        self.vertices.iter().map(|&x| self.measure[x]).sum()
    }

    pub fn sup_norm_on(&self, u: &GridFunction) -> f64 {
        self.vertices
            .iter()
            .fold(0.0f64, |m, &x| m.max(u.values[x].abs()))
    }
}

/// Cached Dirichlet factorization for a region. Solves `Delta u = f` interior,
/// `u = g` on the boundary; for boundaryless regions the mean-zero
/// representative is returned and sources must have zero mean.
pub struct DirichletSolver {
    pub region: Arc<Region>,
    ldl: SparseLdl,
    /// For boundaryless regions one vertex is pinned to fix the constant.
    pinned: Option<usize>,
}

impl DirichletSolver {
    pub fn new(region: Arc<Region>) -> Result<Self> {
        let (unknowns, pinned) = if region.is_boundaryless() {
            let pin = region.vertices[0];
            (
                region.interior.iter().copied().filter(|&v| v != pin).collect::<Vec<_>>(),
                Some(pin),
            )
        } else {
            (region.interior.clone(), None)
        };
        if unknowns.is_empty() {
            return Err(Error::Geometry("region has no interior vertices".into()));
        }
        let ldl = SparseLdl::factor(&region.graph, &unknowns)?;
        Ok(DirichletSolver { region, ldl, pinned })
    }

    /// Solves the Poisson problem: `source` holds the target pointwise
    /// Laplacian at interior vertices (indexed by graph vertex id), `boundary`
    /// the pinned values in `region.boundary` order.
    pub fn solve(&self, source: &[f64], boundary: &[f64]) -> Result<GridFunction> {
        let graph = &self.region.graph;
        let n = graph.vertex_count();
        if source.len() != n {
            return Err(Error::Input("source must be sized to the graph".into()));
        }
        if boundary.len() != self.region.boundary.len() {
            return Err(Error::Input("boundary value count mismatch".into()));
        }
        let mut full = vec![0.0; n];
        for (i, &v) in self.region.boundary.iter().enumerate() {
            full[v] = boundary[i];
        }
        if self.pinned.is_some() {
            let mean: f64 = self
                .region
                .interior
                .iter()
                .map(|&v| source[v] * self.region.measure[v])
                .sum();
            let scale: f64 = self
                .region
                .interior
                .iter()
                .map(|&v| source[v].abs() * self.region.measure[v])
                .sum::<f64>()
                .max(1e-30);
            if mean.abs() > 1e-9 * scale.max(1.0) {
                return Err(Error::Contract(format!(
                    "boundaryless region requires a mean-zero source (mean {mean:.3e})"
                )));
            }
        }
        // Conductance system: C u = -W source + boundary coupling.
        let mut rhs = vec![0.0; self.ldl.unknowns().len()];
        for (k, &v) in self.ldl.unknowns().iter().enumerate() {
            rhs[k] = -graph.measure[v] * source[v];
            for &(u, c) in graph.neighbors(v) {
                if self.ldl.index_of(u).is_none() {
                    rhs[k] += c * full[u];
                }
            }
        }
        let x = self.ldl.solve(&rhs);
        for (k, &v) in self.ldl.unknowns().iter().enumerate() {
            full[v] = x[k];
        }
        let mut u = GridFunction { level: graph.level, values: full };
        if self.pinned.is_some() {
            // Mean-zero representative.
            let total = self.region.total_measure();
            let mean = self.region.inner(&u, &GridFunction::constant(graph, 1.0)) / total;
            for &v in &self.region.vertices {
                u.values[v] -= mean;
            }
        }
        Ok(u)
    }

    /// Harmonic function on the region with prescribed boundary values.
    pub fn harmonic(&self, boundary: &[f64]) -> Result<GridFunction> {
        let zero = vec![0.0; self.region.graph.vertex_count()];
        self.solve(&zero, boundary)
    }

    /// Green's operator: `-Delta (G nu) = nu` interior, zero boundary values;
    /// boundaryless regions require zero total mass and return the mean-zero
    /// representative.
    pub fn green_apply(&self, nu: &Measure) -> Result<GridFunction> {
        let graph = &self.region.graph;
        if self.pinned.is_some() {
            let total = nu.total(graph);
            let scale = nu
                .atoms
                .iter()
                .map(|(_, w)| w.abs())
                .chain(nu.density.iter().map(|d| d.sup_norm()))
                .fold(0.0f64, f64::max)
                .max(1.0);
            if total.abs() > 1e-9 * scale {
                return Err(Error::Contract(format!(
                    "boundaryless Green's operator needs total mass zero, got {total:.3e}"
                )));
            }
        }
        let n = graph.vertex_count();
        let mut source = vec![0.0; n];
        for &v in &self.region.interior {
            source[v] = -nu.pointwise(graph, v);
        }
        let boundary = vec![0.0; self.region.boundary.len()];
        self.solve(&source, &boundary)
    }
}

/// Green's operator on a union of cells built the constructive way: cellwise
/// Dirichlet Green's functions, then subtraction of the piecewise harmonic
/// function carrying the flux defects at the interior gluing points.
pub fn glue_green(region: &Arc<Region>, nu: &Measure) -> Result<GridFunction> {
    let graph = region.graph.clone();
    if region.is_boundaryless() {
        return Err(Error::Geometry(
            "gluing construction needs a nonempty boundary".into(),
        ));
    }
    // Cellwise Green's functions, extended by zero.
    let mut glued = GridFunction::zeros(&graph);
    let mut cell_solvers = Vec::new();
    for (copy, w) in &region.cells {
        let cell_region = Arc::new(Region::single_cell(graph.clone(), *copy, w.clone())?);
        let solver = DirichletSolver::new(cell_region.clone())?;
        let u = solver.green_apply(nu)?;
        for &v in &cell_region.vertices {
            glued.values[v] += u.values[v];
        }
        cell_solvers.push((cell_region, solver));
    }
    // Gluing points: interior vertices of the region on cell boundaries.
    let gluing: Vec<usize> = region
        .interior
        .iter()
        .copied()
        .filter(|&v| {
            cell_solvers
                .iter()
                .any(|(cr, _)| cr.in_region[v] && !cr.is_interior[v])
        })
        .collect();
    if gluing.is_empty() {
        return Ok(glued);
    }
    // Defect: the pointwise Laplacian of the glued function misses -nu at the
    // gluing points.
    let lap = laplacian(&graph, &glued)?;
    let mut defect = Vec::with_capacity(gluing.len());
    for &x in &gluing {
        defect.push(lap.values.values[x] + nu.pointwise(&graph, x));
    }
    // Piecewise harmonic basis spanned by values at the gluing points,
    // vanishing on the region boundary.
    let mut basis = Vec::with_capacity(gluing.len());
    for &g in &gluing {
        let mut h = GridFunction::zeros(&graph);
        for (cr, solver) in &cell_solvers {
            let bvals: Vec<f64> = cr
                .boundary
                .iter()
                .map(|&v| if v == g { 1.0 } else { 0.0 })
                .collect();
            let hb = solver.harmonic(&bvals)?;
            for &v in &cr.vertices {
                h.values[v] = hb.values[v];
            }
        }
        basis.push(h);
    }
    let m = gluing.len();
    let mut a = DMatrix::zeros(m, m);
    for (col, h) in basis.iter().enumerate() {
        let lap_h = laplacian(&graph, h)?;
        for (row, &x) in gluing.iter().enumerate() {
            a[(row, col)] = lap_h.values.values[x];
        }
    }
    let rhs = DVector::from_vec(defect);
    let sol = a.lu().solve(&rhs).ok_or_else(|| {
        Error::Structure("defect-cancellation system singular".into())
    })?;
    let mut correction = GridFunction::zeros(&graph);
    for (i, h) in basis.iter().enumerate() {
        correction.axpy(sol[i], h);
    }
    let mut out = glued;
    out.axpy(-1.0, &correction);
    Ok(out)
}

/// The harmonic-projected Green's operator on a region: subtracts the
/// projection onto harmonics using a biorthogonal test family, applies the
/// Dirichlet Green's operator, and extends by zero. Test functions in its
/// image have vanishing boundary normal derivatives.
pub struct TildeGreen {
    pub solver: Arc<DirichletSolver>,
    /// L2-orthonormal basis of harmonic functions on the region.
    pub harmonics: Vec<GridFunction>,
    /// Biorthogonal family: `<phi_i, h_j> = delta_ij`.
    pub family: Vec<GridFunction>,
    /// Condition number of the Gram system that produced the family.
    pub gram_condition: f64,
}

impl TildeGreen {
    /// Builds the operator from any candidate family spanning against the
    /// harmonics (bump functions centered on distinct cells work well).
    pub fn new(solver: Arc<DirichletSolver>, candidates: &[GridFunction]) -> Result<Self> {
        let region = solver.region.clone();
        let harmonics = harmonic_basis(&solver)?;
        let k = harmonics.len();
        if candidates.len() < k {
            return Err(Error::Input(format!(
                "need at least {k} candidate functions, got {}",
                candidates.len()
            )));
        }
        // Gram matrix <cand_i, h_j>.
        let m = candidates.len();
        let mut gram = DMatrix::zeros(k, m);
        for (j, c) in candidates.iter().enumerate() {
            for (i, h) in harmonics.iter().enumerate() {
                gram[(i, j)] = region.inner(c, h);
            }
        }
        let svd = gram.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.iter().cloned().fold(f64::MAX, f64::min);
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(cond.is_finite()) || smin < 1e-12 * smax {
            return Err(Error::Numerical(format!(
                "biorthogonal Gram system ill-conditioned (condition {cond:.3e})"
            )));
        }
        // Solve gram * X = I_k for coefficients (least squares via SVD).
        let mut family = Vec::with_capacity(k);
        for i in 0..k {
            let mut e = DVector::zeros(k);
            e[i] = 1.0;
            let coeffs = svd.solve(&e, 1e-14).map_err(|e| Error::Numerical(e.to_string()))?;
            let mut phi = GridFunction::zeros(&region.graph);
            for (j, c) in candidates.iter().enumerate() {
                phi.axpy(coeffs[j], c);
            }
            family.push(phi);
        }
        Ok(TildeGreen { solver, harmonics, family, gram_condition: cond })
    }

    /// The harmonic projection term `phi~ = sum <phi, h_i> phi_i`.
    pub fn projection(&self, phi: &GridFunction) -> GridFunction {
        let region = &self.solver.region;
        let mut out = GridFunction::zeros(&region.graph);
        for (h, f) in self.harmonics.iter().zip(&self.family) {
            out.axpy(region.inner(phi, h), f);
        }
        out
    }

    /// Applies the operator to a grid sample of a test function.
    pub fn apply(&self, phi: &GridFunction) -> Result<GridFunction> {
        let region = &self.solver.region;
        let mut corrected = phi.clone();
        corrected.axpy(-1.0, &self.projection(phi));
        // Restrict to the region before integrating.
        let mut density = GridFunction::zeros(&region.graph);
        for &v in &region.vertices {
            density.values[v] = corrected.values[v];
        }
        self.solver.green_apply(&Measure::from_density(density))
    }
}

/// L2-orthonormal basis of harmonic functions on the region (constants when
/// the region has no boundary).
pub fn harmonic_basis(solver: &DirichletSolver) -> Result<Vec<GridFunction>> {
    let region = &solver.region;
    let mut raw = Vec::new();
    if region.is_boundaryless() {
        raw.push(GridFunction::constant(&region.graph, 1.0));
    } else {
        for i in 0..region.boundary.len() {
            let mut b = vec![0.0; region.boundary.len()];
            b[i] = 1.0;
            raw.push(solver.harmonic(&b)?);
        }
    }
    // Gram-Schmidt in the region inner product.
    let mut basis: Vec<GridFunction> = Vec::new();
    for mut f in raw {
        for b in &basis {
            let c = region.inner(&f, b);
            f.axpy(-c, b);
        }
        let norm = region.inner(&f, &f).sqrt();
        if norm > 1e-12 {
            f.scale(1.0 / norm);
            basis.push(f);
        }
    }
    Ok(basis)
}
