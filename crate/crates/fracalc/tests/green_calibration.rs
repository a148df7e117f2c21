//! Green operator contracts plus a two-route check of the calibration tables:
//! the fixed-point values/normals of G^l on harmonics must agree with honest
//! grid solves extrapolated across levels.

use fracalc::calculus::{laplacian, normal_derivative};
use fracalc::calibrate::{Calibration, Stack};
use fracalc::green::*;
use fracalc::model::*;
use fracalc::rates::richardson_ladder;
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn sg() -> Arc<HarmonicStructure> {
    HarmonicStructure::sierpinski_gasket()
}

fn whole_solver(hs: &Arc<HarmonicStructure>, level: usize) -> DirichletSolver {
    let graph = Arc::new(LevelGraph::build(hs, level).unwrap());
    DirichletSolver::new(Arc::new(Region::whole(graph))).unwrap()
}

/// Discrete G^l applied to the harmonic with boundary values `b`.
fn discrete_green_power(solver: &DirichletSolver, b: &[f64], l: usize) -> GridFunction {
    let graph = &solver.region.graph;
    let mut cur = GridFunction {
        level: graph.level,
        values: graph.extend_harmonically(b),
    };
    for _ in 0..l {
        cur = solver
            .green_apply(&Measure::from_density(cur.clone()))
            .unwrap();
    }
    cur
}

#[test]
fn calibration_matches_grid_solves() {
    let hs = sg();
    let calib = Calibration::new(&hs, 4).unwrap();
    let levels = [5usize, 6, 7, 8];
    for l in 1..=2usize {
        for i in 0..3 {
            let mut b = vec![0.0; 3];
            b[i] = 1.0;
            // Values at the three interior V1 junctions, per level.
            let mut per_level: Vec<Vec<f64>> = Vec::new();
            let mut normals_per_level: Vec<Vec<f64>> = Vec::new();
            for &m in &levels {
                let solver = whole_solver(&hs, m);
                let u = discrete_green_power(&solver, &b, l);
                let graph = &solver.region.graph;
                let v1_cells = graph.cells_at_depth(1);
                let mut vals = Vec::new();
                for x in 3..6 {
                    // Junction ids 3,4,5 are the interior V1 vertices.
                    let _ = v1_cells;
                    vals.push(u.values[x]);
                }
                per_level.push(vals);
                let mut fluxes = Vec::new();
                for p in 0..3 {
                    let nd = normal_derivative(graph, &u, p, 0, &Word::empty()).unwrap();
                    fluxes.push(nd.extrapolation.estimate);
                }
                normals_per_level.push(fluxes);
            }
            for x in 0..3 {
                let seq: Vec<f64> = per_level.iter().map(|v| v[x]).collect();
                let extr = richardson_ladder(&seq, &[0.2, 0.2]);
                let got = *extr.last().unwrap();
                let want = calib.values_v1[l][(3 + x, i)];
                assert!(
                    (got - want).abs() < 1e-8,
                    "W_{l} junction {x} basis {i}: grid {got} vs table {want}"
                );
            }
            for p in 0..3 {
                let seq: Vec<f64> = normals_per_level.iter().map(|v| v[p]).collect();
                let extr = richardson_ladder(&seq, &[0.2]);
                let got = *extr.last().unwrap();
                let want = calib.normals[l][(p, i)];
                assert!(
                    (got - want).abs() < 1e-6,
                    "N_{l} point {p} basis {i}: grid {got} vs table {want}"
                );
            }
        }
    }
}

#[test]
fn stack_evaluation_matches_grid() {
    // A random degree-2 stack evaluated via pullback at depth-2 corners agrees
    // with the discrete solve.
    let hs = sg();
    let calib = Calibration::new(&hs, 6).unwrap();
    let stack = Stack {
        coeffs: vec![
            DVector::from_vec(vec![0.3, -0.7, 1.1]),
            DVector::from_vec(vec![1.0, 0.2, -0.4]),
            DVector::from_vec(vec![-0.5, 0.9, 0.6]),
        ],
    };
    let solver = whole_solver(&hs, 8);
    let graph = solver.region.graph.clone();
    let mut grid = GridFunction::zeros(&graph);
    for (l, h) in stack.coeffs.iter().enumerate() {
        let part = discrete_green_power(&solver, h.as_slice(), l);
        grid.axpy(1.0, &part);
    }
    // Compare at the corners of every depth-2 cell.
    for cell in graph.cells_at_depth(2) {
        let local = stack.pullback_word(&calib, &cell.word.0);
        let bv = local.boundary_values();
        for (slot, &v) in cell.vertices.iter().enumerate() {
            let err = (bv[slot] - grid.values[v]).abs();
            assert!(err < 2e-5, "cell {} slot {slot}: err {err}", cell.word);
        }
    }
}

#[test]
fn solve_dirichlet_contract() {
    let hs = sg();
    let solver = whole_solver(&hs, 6);
    let graph = solver.region.graph.clone();
    // Zero data gives zero.
    let u = solver.solve(&vec![0.0; graph.vertex_count()], &[0.0, 0.0, 0.0]).unwrap();
    assert_eq!(u.sup_norm(), 0.0);
    // Harmonic boundary problem equals the extension matrices.
    let u = solver.harmonic(&[1.0, 0.0, 0.0]).unwrap();
    let ext = graph.extend_harmonically(&[1.0, 0.0, 0.0]);
    for v in 0..graph.vertex_count() {
        assert!((u.values[v] - ext[v]).abs() < 1e-12);
    }
    // Residual on random sources.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..3 {
        let src: Vec<f64> = (0..graph.vertex_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bvals: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = solver.solve(&src, &bvals).unwrap();
        let lap = laplacian(&graph, &u).unwrap();
        for v in 0..graph.vertex_count() {
            if lap.defined[v] {
                assert!((lap.values.values[v] - src[v]).abs() < 1e-10);
            }
        }
        for (i, &q) in solver.region.boundary.iter().enumerate() {
            assert_eq!(u.values[q], bvals[i]);
        }
    }
}

#[test]
fn green_apply_contract() {
    let hs = sg();
    for level in [5usize, 8] {
        let solver = whole_solver(&hs, level);
        let graph = solver.region.graph.clone();
        // nu = 0 -> 0.
        let u = solver.green_apply(&Measure::zero()).unwrap();
        assert_eq!(u.sup_norm(), 0.0);
        // Unit density: -Delta u = 1 interior, u = 0 on the boundary.
        let one = Measure::from_density(GridFunction::constant(&graph, 1.0));
        let u = solver.green_apply(&one).unwrap();
        let lap = laplacian(&graph, &u).unwrap();
        for v in 0..graph.vertex_count() {
            if lap.defined[v] {
                assert!((lap.values.values[v] + 1.0).abs() < 1e-10);
            } else {
                assert_eq!(u.values[v], 0.0);
            }
        }
        // Dirac atom: -Delta G delta_x is the unit vertex functional.
        let x = graph.vertex_count() / 2;
        assert!(!graph.boundary[x]);
        let u = solver.green_apply(&Measure::dirac(x, 1.0)).unwrap();
        let lap = laplacian(&graph, &u).unwrap();
        for v in 0..graph.vertex_count() {
            if lap.defined[v] {
                let want = if v == x { -1.0 / graph.measure[x] } else { 0.0 };
                let scale = 1.0 + want.abs();
                assert!((lap.values.values[v] - want).abs() < 1e-9 * scale);
            }
        }
    }
}

#[test]
fn glue_green_matches_direct_solve() {
    let hs = sg();
    let graph = Arc::new(LevelGraph::build(&hs, 6).unwrap());
    // Two glued cells 0 and 1.
    let region = Arc::new(
        Region::cell_union(graph.clone(), &[(0, Word(vec![0])), (0, Word(vec![1]))]).unwrap(),
    );
    let solver = DirichletSolver::new(region.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut density = GridFunction::zeros(&graph);
    for &v in &region.vertices {
        density.values[v] = rng.gen_range(-1.0..1.0);
    }
    let nu = Measure::from_density(density);
    let direct = solver.green_apply(&nu).unwrap();
    let glued = glue_green(&region, &nu).unwrap();
    let mut worst = 0.0f64;
    for &v in &region.vertices {
        worst = worst.max((direct.values[v] - glued.values[v]).abs());
    }
    assert!(worst < 1e-10, "gluing path differs from direct solve by {worst}");

    // Single cell: gluing path is the plain Green's operator.
    let single = Arc::new(Region::single_cell(graph.clone(), 0, Word(vec![2])).unwrap());
    let ssolver = DirichletSolver::new(single.clone()).unwrap();
    let direct = ssolver.green_apply(&nu).unwrap();
    let glued = glue_green(&single, &nu).unwrap();
    for &v in &single.vertices {
        assert!((direct.values[v] - glued.values[v]).abs() < 1e-12);
    }
}

#[test]
fn boundaryless_cover_requires_mean_zero() {
    let hs = sg();
    let graph = Arc::new(
        LevelGraph::build_fractafold(&hs, 4, FractafoldSpec::double_cover(3)).unwrap(),
    );
    let region = Arc::new(Region::whole(graph.clone()));
    assert!(region.is_boundaryless());
    let solver = DirichletSolver::new(region.clone()).unwrap();
    // Nonzero mean is a contract violation.
    let bad = Measure::dirac(5, 1.0);
    assert!(matches!(
        solver.green_apply(&bad),
        Err(fracalc::Error::Contract(_))
    ));
    // Mean-zero dipole: solvable, mean-zero output, -Delta u = nu.
    let nu = Measure { atoms: vec![(5, 1.0), (20, -1.0)], density: None };
    let u = solver.green_apply(&nu).unwrap();
    let mean: f64 = u
        .values
        .iter()
        .zip(&graph.measure)
        .map(|(v, w)| v * w)
        .sum();
    assert!(mean.abs() < 1e-10);
    let lap = laplacian(&graph, &u).unwrap();
    for v in 0..graph.vertex_count() {
        let want = -nu.pointwise(&graph, v);
        assert!((lap.values.values[v] - want).abs() < 1e-9 * (1.0 + want.abs()));
    }
}

#[test]
fn harmonic_basis_spans_boundary_data() {
    let hs = sg();
    let graph = Arc::new(LevelGraph::build(&hs, 5).unwrap());
    let region = Arc::new(
        Region::cell_union(graph.clone(), &[(0, Word(vec![0])), (0, Word(vec![1]))]).unwrap(),
    );
    let solver = Arc::new(DirichletSolver::new(region.clone()).unwrap());
    let basis = harmonic_basis(&solver).unwrap();
    assert_eq!(basis.len(), region.boundary.len());
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((region.inner(a, b) - want).abs() < 1e-10);
        }
        let lap = laplacian(&graph, a).unwrap();
        for &v in &region.interior {
            assert!(lap.values.values[v].abs() < 1e-9);
        }
    }
}
