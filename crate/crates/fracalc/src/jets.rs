//! Jets, the finite-order Borel construction, bump functions, smooth
//! partitioning, point cutoffs and the local Taylor decomposition.

use crate::calibrate::{Calibration, Stack};
use crate::error::{Error, Result};
use crate::green::{DirichletSolver, Measure, Region};
use crate::model::{CellPoint, GridFunction, LevelGraph, Word};
use crate::smooth::SmoothFunction;
use nalgebra::{DMatrix, DVector};
use std::collections::HashSet;
use std::sync::Arc;

/// The order-L jet of a function at a cell corner: Laplacian values and
/// normal derivatives of the Laplacians.
#[derive(Debug, Clone)]
pub struct JetSample {
    pub point: CellPoint,
    pub order: usize,
    pub laplacian_values: Vec<f64>,
    pub normal_values: Vec<f64>,
}

impl JetSample {
    pub fn zero(point: CellPoint, order: usize) -> Self {
        JetSample {
            point,
            order,
            laplacian_values: vec![0.0; order + 1],
            normal_values: vec![0.0; order + 1],
        }
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.laplacian_values.iter().chain(&self.normal_values).all(|v| v.abs() <= tol)
    }
}

/// Extracts the order-L jet of a smooth function at a cell corner.
pub fn jet_extract(
    calib: &Calibration,
    phi: &SmoothFunction,
    point: &CellPoint,
    order: usize,
) -> Result<JetSample> {
    let (rho, sigma) = phi.jet(calib, point.copy, &point.cell, point.slot, order)?;
    Ok(JetSample { point: point.clone(), order, laplacian_values: rho, normal_values: sigma })
}

/// Builds a smooth piece on the target cell whose jet at the target corner
/// matches `target` and whose value-and-normal jets vanish at the other
/// constrained corners.
///
/// The ansatz is a multiharmonic spline over a depth-d subdivision of the
/// cell: one stack per subcell, with value matching and normal-flux
/// cancellation imposed at the internal junctions to the declared order.
/// Single-cell stacks cannot reach arbitrary corner jets (the jet data of a
/// global multiharmonic satisfies two extra linear identities), so rank
/// deficiencies trigger subdivision up to depth 3.
pub fn borel_finite(
    calib: &Calibration,
    target: &JetSample,
    zero_slots: &[usize],
) -> Result<SmoothFunction> {
    borel_finite_capped(calib, target, zero_slots, usize::MAX)
}

pub fn borel_finite_capped(
    calib: &Calibration,
    target: &JetSample,
    zero_slots: &[usize],
    max_cell_depth: usize,
) -> Result<SmoothFunction> {
    let order = target.order;
    let mut constrained: Vec<usize> = vec![target.point.slot];
    for &s in zero_slots {
        if s != target.point.slot && !constrained.contains(&s) {
            constrained.push(s);
        }
    }
    let scale = target
        .laplacian_values
        .iter()
        .chain(&target.normal_values)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut last = (0usize, 0usize, 0usize);
    for depth in 0..=3usize {
        if target.point.cell.len() + depth > max_cell_depth {
            break;
        }
        for degree in (order + 1)..=(2 * order + 1).min(calib.degree) {
            match try_borel_spline(calib, target, &constrained, degree, depth) {
                Ok(f) => {
                    // Accept only when the extracted jets reproduce the
                    // targets: that is the contract downstream code relies on.
                    let got = jet_extract(calib, &f, &target.point, order)?;
                    let mut worst = 0.0f64;
                    for k in 0..=order {
                        worst = worst
                            .max((got.laplacian_values[k] - target.laplacian_values[k]).abs());
                        worst = worst.max((got.normal_values[k] - target.normal_values[k]).abs());
                    }
                    for &s in &constrained[1..] {
                        let p = CellPoint::new(target.point.copy, target.point.cell.clone(), s);
                        let z = jet_extract(calib, &f, &p, order)?;
                        for k in 0..=order {
                            worst = worst.max(z.laplacian_values[k].abs());
                            worst = worst.max(z.normal_values[k].abs());
                        }
                    }
                    if worst <= 1e-8 * (1.0 + scale) {
                        return Ok(f);
                    }
                    last = (0, 0, 0);
                }
                Err(Error::RankDeficient { rank, need, headroom, .. }) => {
                    last = (rank, need, headroom);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Err(Error::RankDeficient {
        detail: "jet constraint system stayed rank-deficient up to subdivision depth 3".into(),
        rank: last.0,
        need: last.1,
        headroom: last.2,
    })
}

fn try_borel_spline(
    calib: &Calibration,
    target: &JetSample,
    constrained: &[usize],
    degree: usize,
    depth: usize,
) -> Result<SmoothFunction> {
    let hs = &calib.hs;
    let n0 = calib.boundary_size();
    let n = hs.map_count();
    let order = target.order;
    let base = &target.point.cell;
    // Subcells: all words of length `depth` under the base cell.
    let mut words: Vec<Word> = vec![Word::empty()];
    for _ in 0..depth {
        words = words
            .iter()
            .flat_map(|w| (0..n as u8).map(move |j| w.child(j)))
            .collect();
    }
    let cell_count = words.len();
    let stride = (degree + 1) * n0;
    let unknowns = cell_count * stride;
    // Identify subdivision vertices structurally via a scratch level graph of
    // the subdivision depth.
    let scratch = LevelGraph::build(hs, depth)?;
    let sub_cells = scratch.cells_at_depth(depth);
    let word_pos: Vec<usize> = words
        .iter()
        .map(|w| sub_cells.iter().position(|c| &c.word == w).unwrap())
        .collect();
    // Work in the frame of the base cell with per-subcell normalized unknowns
    // u_(c,l) = h_(c,l) / (r_rel mu_rel)^l, which keeps all coefficients O(1)
    // regardless of the base depth.
    let (rb, mub) = hs.word_scaling(base)?;
    let scalings: Vec<(f64, f64)> = words
        .iter()
        .map(|w| hs.word_scaling(w))
        .collect::<Result<_>>()?;

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    // Base-frame value of the k-th Laplacian of piece c at its corner slot p.
    let value_row = |c: usize, p: usize, k: usize| -> Vec<(usize, f64)> {
        vec![(c * stride + k * n0 + p, neg_pow(k))]
    };
    let normal_row = |c: usize, p: usize, k: usize| -> Vec<(usize, f64)> {
        let (rr, mr) = scalings[c];
        let mut out = Vec::new();
        let mut tscale = neg_pow(k) / rr;
        for t in 0..=(degree - k) {
            for b in 0..n0 {
                let coeff = tscale * calib.normals[t][(p, b)];
                if coeff != 0.0 {
                    out.push((c * stride + (k + t) * n0 + b, coeff));
                }
            }
            tscale *= rr * mr;
        }
        out
    };

    // Internal junctions of the subdivision.
    for v in 0..scratch.vertex_count() {
        if scratch.boundary[v] {
            continue;
        }
        let meeting: Vec<(usize, usize)> = (0..cell_count)
            .filter_map(|c| {
                sub_cells[word_pos[c]]
                    .vertices
                    .iter()
                    .position(|&x| x == v)
                    .map(|slot| (c, slot))
            })
            .collect();
        for k in 0..=order {
            // Value matching against the first meeting piece.
            let (c0, p0) = meeting[0];
            for &(c, p) in &meeting[1..] {
                let mut row = value_row(c, p, k);
                for (idx, coeff) in value_row(c0, p0, k) {
                    row.push((idx, -coeff));
                }
                rows.push(row);
                rhs.push(0.0);
            }
            // Normal fluxes cancel.
            let mut row = Vec::new();
            for &(c, p) in &meeting {
                row.extend(normal_row(c, p, k));
            }
            rows.push(row);
            rhs.push(0.0);
        }
    }
    // Outer corners: target jets at the marked slot, zero at the other
    // constrained slots.
    for &s in constrained {
        // The chain subcell holding this corner.
        let mut chain_word = Word::empty();
        let mut slot = s;
        for _ in 0..depth {
            let (j, b) = hs.boundary_embeddings[slot];
            chain_word.0.push(j as u8);
            slot = b;
        }
        let c = words.iter().position(|w| w == &chain_word).unwrap();
        let on_target = s == target.point.slot;
        let mut kscale = 1.0;
        for k in 0..=order {
            rows.push(value_row(c, slot, k));
            rhs.push(if on_target { target.laplacian_values[k] * kscale } else { 0.0 });
            rows.push(normal_row(c, slot, k));
            rhs.push(if on_target { target.normal_values[k] * kscale * rb } else { 0.0 });
            kscale *= rb * mub;
        }
    }

    let m = rows.len();
    let mut mat = DMatrix::zeros(m, unknowns);
    let mut b = DVector::zeros(m);
    for (ri, row) in rows.iter().enumerate() {
        let norm: f64 = row.iter().map(|(_, c)| c * c).sum::<f64>().sqrt().max(1e-300);
        for &(ci, coeff) in row {
            mat[(ri, ci)] += coeff / norm;
        }
        b[ri] = rhs[ri] / norm;
    }
    // Column scaling keeps weakly-coupled coefficients from polluting the
    // singular spectrum.
    let mut col_scale = vec![1.0f64; unknowns];
    for (ci, cs) in col_scale.iter_mut().enumerate() {
        let norm = mat.column(ci).norm();
        if norm > 1e-14 {
            *cs = 1.0 / norm;
        }
    }
    for ci in 0..unknowns {
        let cs = col_scale[ci];
        for ri in 0..m {
            mat[(ri, ci)] *= cs;
        }
    }
    let svd = mat.clone().svd(true, true);
    let smax: f64 = svd.singular_values.max();
    let eps = 1e-13 * smax.max(1.0);
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let mut sol = svd
        .solve(&b, eps)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    // Iterative refinement pushes the residual of the consistent system to
    // rounding; the jet extraction amplifies it by inverse scale powers.
    for _ in 0..3 {
        let r = &b - &mat * &sol;
        if r.norm() <= 1e-14 * b.norm().max(1.0) {
            break;
        }
        if let Ok(dx) = svd.solve(&r, eps) {
            sol += dx;
        } else {
            break;
        }
    }
    let resid = (&mat * &sol - &b).norm();
    for (ci, cs) in col_scale.iter().enumerate() {
        sol[ci] *= cs;
    }
    if resid > 1e-10 * b.norm().max(1.0) {
        return Err(Error::RankDeficient {
            detail: format!("depth-{depth} spline misses the jet targets (residual {resid:.2e})"),
            rank,
            need: m,
            headroom: 0,
        });
    }
    let mut out = SmoothFunction::zero();
    for (c, w) in words.iter().enumerate() {
        let (rr, mr) = scalings[c];
        let mut lscale = 1.0;
        let coeffs: Vec<DVector<f64>> = (0..=degree)
            .map(|l| {
                let v = DVector::from_iterator(
                    n0,
                    (0..n0).map(|bb| lscale * sol[c * stride + l * n0 + bb]),
                );
                let _ = l;
                lscale *= rr * mr;
                v
            })
            .collect();
        let stack = Stack { coeffs };
        if stack.is_zero(0.0) {
            continue;
        }
        let mut full = base.clone();
        full.0.extend_from_slice(&w.0);
        out = out.add(&SmoothFunction::from_stack(target.point.copy, full, stack));
    }
    Ok(out)
}

fn neg_pow(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Cells adjacent to a vertex at a given depth, excluding those inside the
/// listed core; returns (cell words, their corner slot at the vertex).
fn attach_cells_at(
    graph: &LevelGraph,
    vertex: usize,
    depth: usize,
    exclude: &dyn Fn(usize, &Word) -> bool,
) -> Vec<CellPoint> {
    let mut out = Vec::new();
    for cell in graph.cells_at_depth(depth) {
        if exclude(cell.copy, &cell.word) {
            continue;
        }
        if let Some(slot) = cell.vertices.iter().position(|&v| v == vertex) {
            out.push(CellPoint::new(cell.copy, cell.word.clone(), slot));
        }
    }
    out
}

fn covered_by(copy: usize, word: &Word, cells: &[(usize, Word)]) -> bool {
    cells.iter().any(|(c, w)| *c == copy && w.is_prefix_of(word))
}

/// A bump function: exactly 1 on the core cells, exactly 0 outside the
/// collar, smooth to order L at every attachment point.
#[derive(Debug, Clone)]
pub struct BumpResult {
    pub f: SmoothFunction,
    pub sup_norm: f64,
    pub min_value: f64,
    /// Observed (not guaranteed) nonnegativity on the sample grid.
    pub positive: bool,
}

pub fn bump(
    calib: &Calibration,
    graph: &Arc<LevelGraph>,
    core: &[(usize, Word)],
    collar_depth: usize,
    order: usize,
) -> Result<BumpResult> {
    if core.is_empty() {
        return Err(Error::Geometry("empty bump core".into()));
    }
    if collar_depth > graph.level {
        return Err(Error::Geometry(format!(
            "collar depth {collar_depth} exceeds graph level {}",
            graph.level
        )));
    }
    let mut ones = SmoothFunction::zero();
    for (copy, w) in core {
        graph.cell(*copy, w)?;
        let stack = Stack::harmonic(DVector::from_element(calib.boundary_size(), 1.0));
        ones = ones.add(&SmoothFunction::from_stack(*copy, w.clone(), stack));
    }
    // Boundary corners of the core: vertices on core cells that touch
    // non-core cells.
    let mut corners: Vec<usize> = Vec::new();
    for (copy, w) in core {
        for &v in &graph.cell(*copy, w)?.vertices {
            let outside = !attach_cells_at(graph, v, graph.level, &|c, word| {
                covered_by(c, word, core)
            })
            .is_empty();
            if outside && !corners.contains(&v) {
                corners.push(v);
            }
        }
    }
    let mut f = ones;
    for &q in &corners {
        let attach = attach_cells_at(graph, q, collar_depth, &|c, w| covered_by(c, w, core));
        if attach.is_empty() {
            return Err(Error::Geometry(format!(
                "no attachable cells at vertex {q}: neighborhood too tight"
            )));
        }
        for point in attach {
            // Value jet of the constant 1, vanishing normal jets, zero jets at
            // the other corners.
            let mut jet = JetSample::zero(point.clone(), order);
            jet.laplacian_values[0] = 1.0;
            let zero_slots: Vec<usize> =
                (0..calib.boundary_size()).filter(|&s| s != point.slot).collect();
            f = f.add(&borel_finite(calib, &jet, &zero_slots)?);
        }
    }
    let sample = f.sample(calib, graph)?;
    let sup_norm = sample.sup_norm();
    let min_value = sample.values.iter().cloned().fold(f64::MAX, f64::min);
    Ok(BumpResult { f, sup_norm, min_value, positive: min_value >= -1e-9 })
}

/// Cutoff of a smooth function on a core of cells: equals `phi` on the core,
/// vanishes outside the collar, and is smooth to order L. The collar depth is
/// chosen per attachment point to minimize the predicted piece seminorm,
/// which makes the construction nonlinear in `phi`.
pub fn cutoff_on_core(
    calib: &Calibration,
    graph: &Arc<LevelGraph>,
    phi: &SmoothFunction,
    core: &[(usize, Word)],
    order: usize,
    allowed: Option<&dyn Fn(usize, &Word) -> bool>,
    max_extra_depth: usize,
) -> Result<SmoothFunction> {
    let core_depth = core.iter().map(|(_, w)| w.len()).max().unwrap_or(0);
    // Core part: phi's germ on each core cell plus deeper atoms.
    let mut out = SmoothFunction::zero();
    for (copy, w) in core {
        out = out.add(&localize_to_cell(calib, phi, *copy, w)?);
    }
    // Attachment corners.
    let mut corners: Vec<usize> = Vec::new();
    for (copy, w) in core {
        for &v in &graph.cell(*copy, w)?.vertices {
            if !corners.contains(&v)
                && !attach_cells_at(graph, v, graph.level, &|c, word| covered_by(c, word, core))
                    .is_empty()
            {
                corners.push(v);
            }
        }
    }
    for &q in &corners {
        // Jets of phi at q from inside the core.
        let core_points: Vec<CellPoint> = core
            .iter()
            .filter_map(|(copy, w)| {
                graph
                    .cell(*copy, w)
                    .ok()
                    .and_then(|c| c.vertices.iter().position(|&v| v == q))
                    .map(|slot| CellPoint::new(*copy, w.clone(), slot))
            })
            .collect();
        if core_points.is_empty() {
            continue;
        }
        let value_jet = jet_extract(calib, phi, &core_points[0], order)?;
        let mut normal_sum = vec![0.0; order + 1];
        for p in &core_points {
            let j = jet_extract(calib, phi, p, order)?;
            for k in 0..=order {
                normal_sum[k] += j.normal_values[k];
            }
        }
        if value_jet.is_zero(1e-13)
            && normal_sum.iter().all(|v| v.abs() <= 1e-13)
        {
            continue;
        }
        // Candidate collar depths: pick the one with the smallest predicted
        // seminorm for the pieces.
        let mut core_vertices: HashSet<usize> = HashSet::new();
        for (copy, w) in core {
            core_vertices.extend(graph.cell(*copy, w)?.vertices.iter().copied());
        }
        let mut chosen: Option<(f64, Vec<CellPoint>)> = None;
        for extra in 0..=max_extra_depth {
            let depth = core_depth + extra;
            if depth > graph.level {
                break;
            }
            let attach = attach_cells_at(graph, q, depth, &|c, w| {
                covered_by(c, w, core) || allowed.map_or(false, |ok| !ok(c, w))
            });
            if attach.is_empty() {
                continue;
            }
            // Attach cells must intersect the core only at q.
            let clean = attach.iter().all(|p| {
                graph
                    .cell(p.copy, &p.cell)
                    .map(|c| c.vertices.iter().all(|&v| v == q || !core_vertices.contains(&v)))
                    .unwrap_or(false)
            });
            if !clean {
                continue;
            }
            let (r, mu) = calib.hs.word_scaling(&attach[0].cell)?;
            // Predicted seminorm of a piece from the jet-estimate shape:
            // max_k (r mu)^{-k} sum_l (r mu)^l (|rho_l| + r |sigma_l|).
            let mut budget = 0.0;
            let mut wl = 1.0;
            for k in 0..=order {
                budget += wl * (value_jet.laplacian_values[k].abs()
                    + r * normal_sum[k].abs() / attach.len() as f64);
                wl *= r * mu;
            }
            let predicted = budget / (r * mu).powi(order as i32);
            if chosen.as_ref().map_or(true, |(best, _)| predicted < *best) {
                chosen = Some((predicted, attach));
            }
        }
        let (_, attach) = chosen.ok_or_else(|| {
            Error::Geometry(format!("no attachable cells at vertex {q} inside the cover"))
        })?;
        let n_q = attach.len() as f64;
        for point in attach {
            let mut jet = JetSample::zero(point.clone(), order);
            jet.laplacian_values.copy_from_slice(&value_jet.laplacian_values);
            for k in 0..=order {
                jet.normal_values[k] = -normal_sum[k] / n_q;
            }
            let zero_slots: Vec<usize> =
                (0..calib.boundary_size()).filter(|&s| s != point.slot).collect();
            out = out.add(&borel_finite(calib, &jet, &zero_slots)?);
        }
    }
    Ok(out)
}

/// The germ of `phi` on a cell as a smooth function supported there: ancestor
/// atoms are localized into one stack, descendant atoms are kept.
pub fn localize_to_cell(
    calib: &Calibration,
    phi: &SmoothFunction,
    copy: usize,
    cell: &Word,
) -> Result<SmoothFunction> {
    let n0 = calib.boundary_size();
    let mut stack = Stack::harmonic(DVector::from_element(n0, phi.constant));
    let mut out = SmoothFunction::zero();
    for a in &phi.atoms {
        match &a.kind {
            crate::smooth::AtomKind::Multiharmonic(s) => {
                if a.copy != copy {
                    continue;
                }
                if a.cell.is_prefix_of(cell) {
                    let local = s.pullback_word(calib, &cell.0[a.cell.len()..]);
                    stack = stack.add(&local);
                } else if cell.is_prefix_of(&a.cell) && a.cell.len() > cell.len() {
                    out.atoms.push(a.clone());
                }
            }
            crate::smooth::AtomKind::Eigen { .. } => {
                return Err(Error::UnsupportedClass(
                    "eigen atoms cannot be localized to a cell".into(),
                ));
            }
        }
    }
    out = out.add(&SmoothFunction::from_stack(copy, cell.clone(), stack));
    Ok(out)
}

/// Result of partitioning a smooth function over a cover.
#[derive(Debug)]
pub struct PartitionResult {
    pub pieces: Vec<SmoothFunction>,
    /// Seminorm table: `seminorms[j][m] = |f_j|_m` for m = 0..=order.
    pub seminorms: Vec<Vec<f64>>,
}

/// Partitions `phi` into pieces supported in the cover elements (each a cell
/// union), summing to `phi` exactly on the grid.
pub fn partition(
    calib: &Calibration,
    graph: &Arc<LevelGraph>,
    phi: &SmoothFunction,
    cover: &[Vec<(usize, Word)>],
    order: usize,
) -> Result<PartitionResult> {
    if cover.is_empty() {
        return Err(Error::Input("empty cover".into()));
    }
    // Common core depth and disjoint cores inside the elements.
    let depth = cover
        .iter()
        .flat_map(|el| el.iter().map(|(_, w)| w.len()))
        .max()
        .unwrap_or(0);
    if depth > graph.level {
        return Err(Error::Geometry("cover deeper than graph level".into()));
    }
    let all_cells = graph.cells_at_depth(depth);
    // Assign each cell to an element that also covers everything it touches
    // (interiority), falling back to plain containment; openness of the cover
    // is what makes room for the collar pieces.
    let adjacent: Vec<Vec<usize>> = all_cells
        .iter()
        .map(|c| {
            all_cells
                .iter()
                .enumerate()
                .filter(|(_, d)| {
                    d.copy == c.copy && d.word != c.word
                        || d.copy != c.copy
                })
                .filter(|(_, d)| d.vertices.iter().any(|v| c.vertices.contains(v)))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let mut assigned: Vec<Option<usize>> = vec![None; all_cells.len()];
    for (ci, c) in all_cells.iter().enumerate() {
        let mut fallback = None;
        for (ei, el) in cover.iter().enumerate() {
            if !covered_by(c.copy, &c.word, el) {
                continue;
            }
            if fallback.is_none() {
                fallback = Some(ei);
            }
            let interior = adjacent[ci]
                .iter()
                .all(|&di| covered_by(all_cells[di].copy, &all_cells[di].word, el));
            if interior {
                assigned[ci] = Some(ei);
                break;
            }
        }
        if assigned[ci].is_none() {
            assigned[ci] = fallback;
        }
        if assigned[ci].is_none() {
            return Err(Error::Geometry(format!(
                "cover gap: cell {} in copy {} uncovered",
                c.word, c.copy
            )));
        }
    }
    let mut pieces = Vec::with_capacity(cover.len());
    let mut remainder = phi.clone();
    for (ei, el) in cover.iter().enumerate() {
        let core: Vec<(usize, Word)> = all_cells
            .iter()
            .enumerate()
            .filter(|(ci, _)| assigned[*ci] == Some(ei))
            .map(|(_, c)| (c.copy, c.word.clone()))
            .collect();
        if ei + 1 == cover.len() {
            pieces.push(remainder.clone());
            break;
        }
        if core.is_empty() {
            pieces.push(SmoothFunction::zero());
            continue;
        }
        let allowed = |c: usize, w: &Word| covered_by(c, w, el);
        let piece = cutoff_on_core(
            calib,
            graph,
            &remainder,
            &core,
            order,
            Some(&allowed as &dyn Fn(usize, &Word) -> bool),
            2,
        )?;
        remainder = remainder.add(&piece.scale(-1.0));
        pieces.push(piece);
    }
    let mut seminorms = Vec::with_capacity(pieces.len());
    for p in &pieces {
        let mut table = Vec::with_capacity(order + 1);
        for m in 0..=order {
            table.push(p.seminorm(calib, graph, m, None)?);
        }
        seminorms.push(table);
    }
    Ok(PartitionResult { pieces, seminorms })
}

/// Cutoff of `phi` near a point: equals `phi` on the depth-i cells at the
/// point, supported in the depth-(i-1) neighborhood. Returns the cutoff and
/// its achieved seminorm `|phi_q|_m`.
pub fn cutoff_near_point(
    calib: &Calibration,
    graph: &Arc<LevelGraph>,
    phi: &SmoothFunction,
    q: &CellPoint,
    depth: usize,
    m: usize,
    order: usize,
) -> Result<(SmoothFunction, f64)> {
    if depth > graph.level {
        return Err(Error::Geometry("cutoff depth exceeds graph level".into()));
    }
    let v = q.vertex_id(graph)?;
    let core: Vec<(usize, Word)> = graph
        .cells_at_depth(depth)
        .iter()
        .filter(|c| c.vertices.contains(&v))
        .map(|c| (c.copy, c.word.clone()))
        .collect();
    if core.is_empty() {
        return Err(Error::Geometry("point has no cells at the requested depth".into()));
    }
    let f_q = cutoff_on_core(calib, graph, phi, &core, order.max(m), None, 2)?;
    let seminorm = f_q.seminorm(calib, graph, m, None)?;
    Ok((f_q, seminorm))
}

/// The local Taylor decomposition of a smooth function on a cell, realized by
/// the discrete operators so the reconstruction is exact on the grid:
/// components `h^l` solve `Delta h = 0` with the boundary data of the l-th
/// discrete Laplacian, composed with l Dirichlet inversions of `Delta`.
#[derive(Debug)]
pub struct LocalTaylor {
    pub components: Vec<GridFunction>,
    pub remainder: GridFunction,
}

pub fn local_taylor(
    calib: &Calibration,
    graph: &Arc<LevelGraph>,
    phi: &SmoothFunction,
    cell: (usize, Word),
    m: usize,
) -> Result<LocalTaylor> {
    let region = Arc::new(Region::single_cell(graph.clone(), cell.0, cell.1.clone())?);
    let solver = DirichletSolver::new(region.clone())?;
    // Discrete Laplacian iterates of the sample; global boundary rows are
    // filled from the exact atom algebra.
    let mut iterates = Vec::with_capacity(m + 1);
    let mut cur = phi.sample(calib, graph)?;
    iterates.push(cur.clone());
    for k in 1..=m {
        let lap = crate::calculus::laplacian(graph, &cur)?;
        let mut next = lap.values;
        let exact = phi.sample_laplacian(calib, graph, k)?;
        for (v, ok) in lap.defined.iter().enumerate() {
            if !ok {
                next.values[v] = exact.values[v];
            }
        }
        cur = next.clone();
        iterates.push(next);
    }
    // Dirichlet inversion of the discrete Laplacian: solve Delta u = f, u = 0.
    let invert = |f: &GridFunction, solver: &DirichletSolver| -> Result<GridFunction> {
        let mut density = GridFunction::zeros(graph);
        for &v in &solver.region.vertices {
            density.values[v] = -f.values[v];
        }
        solver.green_apply(&Measure::from_density(density))
    };
    let mut components = Vec::with_capacity(m);
    for (l, ul) in iterates.iter().take(m).enumerate() {
        let bvals: Vec<f64> = region.boundary.iter().map(|&v| ul.values[v]).collect();
        let mut h = solver.harmonic(&bvals)?;
        for _ in 0..l {
            h = invert(&h, &solver)?;
        }
        components.push(h);
    }
    let mut remainder = iterates[m].clone();
    // Restrict and invert m times.
    let mut r = GridFunction::zeros(graph);
    for &v in &region.vertices {
        r.values[v] = remainder.values[v];
    }
    remainder = r;
    for _ in 0..m {
        remainder = invert(&remainder, &solver)?;
    }
    Ok(LocalTaylor { components, remainder })
}

/// Convenience: the corner points of a cell that are junctions (not global
/// boundary).
pub fn junction_corners(graph: &LevelGraph, copy: usize, cell: &Word) -> Result<Vec<CellPoint>> {
    let c = graph.cell(copy, cell)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (slot, &v) in c.vertices.iter().enumerate() {
        if !graph.boundary[v] && seen.insert(v) {
            out.push(CellPoint::new(copy, cell.clone(), slot));
        }
    }
    Ok(out)
}
