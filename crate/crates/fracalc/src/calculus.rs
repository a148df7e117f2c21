//! Harmonic extension, discrete energy, renormalized Laplacian, normal
//! derivatives and the discrete Gauss-Green identity.

use crate::error::{Error, Result};
use crate::model::{GridFunction, LevelGraph, Word};
use crate::rates::{aitken_limit, Extrapolation};

/// Harmonic extension of V0 boundary values to the level-m graph via iterated
/// extension matrices.
pub fn harmonic_extension(graph: &LevelGraph, boundary_values: &[f64]) -> GridFunction {
    GridFunction {
        level: graph.level,
        values: graph.extend_harmonically(boundary_values),
    }
}

fn check_level(graph: &LevelGraph, u: &GridFunction) -> Result<()> {
    if u.level != graph.level || u.values.len() != graph.vertex_count() {
        return Err(Error::Input(format!(
            "grid function at level {} does not match graph level {}",
            u.level, graph.level
        )));
    }
    Ok(())
}

/// Renormalized bilinear energy `E_m(u, v)`.
pub fn energy(graph: &LevelGraph, u: &GridFunction, v: &GridFunction) -> Result<f64> {
    check_level(graph, u)?;
    check_level(graph, v)?;
    let mut e = 0.0;
    for x in 0..graph.vertex_count() {
        for &(y, c) in graph.neighbors(x) {
            if x < y {
                e += c * (u.values[x] - u.values[y]) * (v.values[x] - v.values[y]);
            }
        }
    }
    Ok(e)
}

/// Pointwise renormalized Laplacian. Defined at non-boundary vertices; the
/// returned mask marks where the value is meaningful.
#[derive(Debug, Clone)]
pub struct LaplacianResult {
    pub values: GridFunction,
    pub defined: Vec<bool>,
}

pub fn laplacian(graph: &LevelGraph, u: &GridFunction) -> Result<LaplacianResult> {
    check_level(graph, u)?;
    let mut out = vec![0.0; graph.vertex_count()];
    let mut defined = vec![false; graph.vertex_count()];
    for x in 0..graph.vertex_count() {
        if graph.boundary[x] {
            continue;
        }
        let mut acc = 0.0;
        for &(y, c) in graph.neighbors(x) {
            acc += c * (u.values[y] - u.values[x]);
        }
        out[x] = acc / graph.measure[x];
        defined[x] = true;
    }
    Ok(LaplacianResult {
        values: GridFunction { level: graph.level, values: out },
        defined,
    })
}

/// Normal-derivative sequence of a grid function at a boundary vertex of a
/// cell, over refinement depths inside the cell, plus an extrapolated limit.
#[derive(Debug, Clone)]
pub struct NormalDerivative {
    pub sequence: Vec<f64>,
    pub extrapolation: Extrapolation,
}

impl NormalDerivative {
    pub fn estimate(&self) -> f64 {
        self.extrapolation.estimate
    }
}

pub fn normal_derivative(
    graph: &LevelGraph,
    u: &GridFunction,
    q: usize,
    copy: usize,
    cell_word: &Word,
) -> Result<NormalDerivative> {
    check_level(graph, u)?;
    let chain = cell_chain(graph, copy, cell_word, q)?;
    let mut sequence = Vec::with_capacity(chain.len());
    for (depth, idx) in chain {
        let cell = &graph.cells_at_depth(depth)[idx];
        sequence.push(graph.cell_flux(cell, &u.values, q));
    }
    let extrapolation = aitken_limit(&sequence);
    Ok(NormalDerivative { sequence, extrapolation })
}

/// Chain of (depth, cell index) pairs of subcells of `cell_word` containing `q`,
/// from the cell itself down to the graph level. `q` must be a vertex slot of
/// the cell at each depth, i.e. a corner of the cell.
fn cell_chain(
    graph: &LevelGraph,
    copy: usize,
    cell_word: &Word,
    q: usize,
) -> Result<Vec<(usize, usize)>> {
    let depth0 = cell_word.len();
    let n = graph.hs.map_count();
    let mut idx = graph
        .cells_at_depth(depth0)
        .iter()
        .position(|c| c.copy == copy && &c.word == cell_word)
        .ok_or_else(|| Error::Geometry(format!("no cell {cell_word} in copy {copy}")))?;
    if !graph.cells_at_depth(depth0)[idx].vertices.contains(&q) {
        return Err(Error::Geometry(format!(
            "vertex {q} is not on the boundary of cell {cell_word}"
        )));
    }
    let mut chain = vec![(depth0, idx)];
    for depth in depth0..graph.level {
        // Children of cell `idx` occupy indices idx*N .. idx*N+N at depth+1.
        let mut next = None;
        for j in 0..n {
            let child = idx * n + j;
            if graph.cells_at_depth(depth + 1)[child].vertices.contains(&q) {
                next = Some(child);
                break;
            }
        }
        idx = next.ok_or_else(|| {
            Error::Geometry(format!("vertex {q} is interior to cell {cell_word}"))
        })?;
        chain.push((depth + 1, idx));
    }
    Ok(chain)
}

/// Total discrete flux at a boundary vertex (sum over containing cells at the
/// graph level).
pub fn boundary_flux(graph: &LevelGraph, u: &GridFunction, q: usize) -> f64 {
    let mut flux = 0.0;
    for &(y, c) in graph.neighbors(q) {
        flux += c * (u.values[q] - u.values[y]);
    }
    flux
}

/// `|E_m(u,v) + sum_int (D u) v w - sum_bdy v dn u|`; an exact discrete
/// identity, so the residual is rounding noise.
pub fn gauss_green_residual(graph: &LevelGraph, u: &GridFunction, v: &GridFunction) -> Result<f64> {
    check_level(graph, u)?;
    check_level(graph, v)?;
    let e = energy(graph, u, v)?;
    let lap = laplacian(graph, u)?;
    let mut interior_sum = 0.0;
    let mut boundary_sum = 0.0;
    for x in 0..graph.vertex_count() {
        if graph.boundary[x] {
            boundary_sum += v.values[x] * boundary_flux(graph, u, x);
        } else {
            interior_sum += lap.values.values[x] * v.values[x] * graph.measure[x];
        }
    }
    Ok((e + interior_sum - boundary_sum).abs())
}

/// Measure-weighted inner product on the level graph.
pub fn inner_product(graph: &LevelGraph, u: &GridFunction, v: &GridFunction) -> f64 {
    u.values
        .iter()
        .zip(&v.values)
        .zip(&graph.measure)
        .map(|((a, b), w)| a * b * w)
        .sum()
}
