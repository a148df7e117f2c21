//! Level-graph construction, resistance, extension, energy, Laplacian and
//! Gauss-Green checks against independent oracles.

use fracalc::calculus::*;
use fracalc::model::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Independent enumeration oracle for SG vertex counts: realize every slot as
/// a point of the plane and merge by coordinates.
fn sg_vertex_count_by_enumeration(level: usize) -> usize {
    let corners = [(0.0, 0.0), (1.0, 0.0), (0.5, 3f64.sqrt() / 2.0)];
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut words: Vec<Vec<u8>> = vec![vec![]];
    for _ in 0..level {
        let mut next = Vec::new();
        for w in &words {
            for j in 0..3u8 {
                let mut c = w.clone();
                c.push(j);
                next.push(c);
            }
        }
        words = next;
    }
    for w in &words {
        for corner in corners {
            let mut p = corner;
            for &l in w.iter().rev() {
                let anchor = corners[l as usize];
                p = ((p.0 + anchor.0) / 2.0, (p.1 + anchor.1) / 2.0);
            }
            if !points.iter().any(|q| (q.0 - p.0).abs() + (q.1 - p.1).abs() < 1e-9) {
                points.push(p);
            }
        }
    }
    points.len()
}

fn sg_graph(level: usize) -> LevelGraph {
    let hs = HarmonicStructure::sierpinski_gasket();
    LevelGraph::build(&hs, level).unwrap()
}

fn edge_count(g: &LevelGraph) -> usize {
    (0..g.vertex_count()).map(|v| g.neighbors(v).len()).sum::<usize>() / 2
}

fn random_grid(g: &LevelGraph, rng: &mut ChaCha8Rng) -> GridFunction {
    GridFunction::from_values(
        g,
        (0..g.vertex_count()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn sg_level_graph_counts() {
    let g0 = sg_graph(0);
    assert_eq!(g0.vertex_count(), 3);
    assert_eq!(edge_count(&g0), 3);

    let g1 = sg_graph(1);
    assert_eq!(g1.vertex_count(), 6);
    assert_eq!(edge_count(&g1), 9);
    assert_eq!(g1.vertex_count(), sg_vertex_count_by_enumeration(1));

    let g2 = sg_graph(2);
    assert_eq!(g2.vertex_count(), 15);
    assert_eq!(g2.vertex_count(), sg_vertex_count_by_enumeration(2));

    for m in 0..=5 {
        let g = sg_graph(m);
        assert_eq!(g.vertex_count(), (3usize.pow(m as u32 + 1) + 3) / 2);
        let total: f64 = g.measure.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "measures sum to {total}");
    }
}

#[test]
fn refinement_preserves_identification_classes() {
    // The first |V_m| vertex ids of the level-(m+1) graph are the level-m
    // vertices, cell by cell.
    for m in 0..4 {
        let g = sg_graph(m);
        let gf = sg_graph(m + 1);
        assert!(gf.vertex_count() > g.vertex_count());
        for (depth, cells) in (0..=m).map(|d| (d, g.cells_at_depth(d))) {
            let fine = gf.cells_at_depth(depth);
            assert_eq!(cells.len(), fine.len());
            for (c, f) in cells.iter().zip(fine) {
                assert_eq!(c.word, f.word);
                assert_eq!(c.vertices, f.vertices);
            }
        }
    }
}

#[test]
fn word_scaling_examples() {
    let hs = HarmonicStructure::sierpinski_gasket();
    let (r, mu) = hs.word_scaling(&Word::empty()).unwrap();
    assert_eq!((r, mu), (1.0, 1.0));

    let (r, mu) = hs.word_scaling(&Word::parse("01").unwrap()).unwrap();
    assert!((r - 9.0 / 25.0).abs() < 1e-15);
    assert!((mu - 1.0 / 9.0).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let len = rng.gen_range(0..6);
        let w = Word((0..len).map(|_| rng.gen_range(0..3u8)).collect());
        let (r, mu) = hs.word_scaling(&w).unwrap();
        let ext = w.child(rng.gen_range(0..3u8));
        let (re, me) = hs.word_scaling(&ext).unwrap();
        assert!(re < r && me < mu);
    }

    assert!(hs.word_scaling(&Word(vec![7])).is_err());
}

#[test]
fn effective_resistance_examples() {
    let g = sg_graph(0);
    assert_eq!(effective_resistance(&g, 1, 1).unwrap(), 0.0);
    // Oracle: minimize 1 + t^2 + (1-t)^2 over t -> 3/2, reciprocal 2/3.
    let r = effective_resistance(&g, 0, 1).unwrap();
    assert!((r - 2.0 / 3.0).abs() < 1e-12);

    // Boundary pair stays 2/3 at every level.
    for m in 1..=5 {
        let g = sg_graph(m);
        let r = effective_resistance(&g, 0, 1).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-10, "level {m}: {r}");
    }

    // Symmetry and triangle inequality on sampled triples.
    let g = sg_graph(3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..15 {
        let x = rng.gen_range(0..g.vertex_count());
        let y = rng.gen_range(0..g.vertex_count());
        let z = rng.gen_range(0..g.vertex_count());
        let rxy = effective_resistance(&g, x, y).unwrap();
        let ryx = effective_resistance(&g, y, x).unwrap();
        assert!((rxy - ryx).abs() < 1e-12);
        let ryz = effective_resistance(&g, y, z).unwrap();
        let rxz = effective_resistance(&g, x, z).unwrap();
        assert!(rxz <= rxy + ryz + 1e-12);
    }
}

#[test]
fn harmonic_extension_examples() {
    let g1 = sg_graph(1);
    let u = harmonic_extension(&g1, &[1.0, 0.0, 0.0]);
    // Interior midpoint values from the 3x3 dense minimization oracle.
    let oracle = g1.minimize_energy_with_boundary(&[1.0, 0.0, 0.0]).unwrap();
    for v in 0..g1.vertex_count() {
        assert!((u.values[v] - oracle[v]).abs() < 1e-12);
    }
    let mut mids: Vec<f64> = u.values[3..].to_vec();
    mids.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert!((mids[0] - 0.4).abs() < 1e-15);
    assert!((mids[1] - 0.4).abs() < 1e-15);
    assert!((mids[2] - 0.2).abs() < 1e-15);

    // Constants extend to constants.
    let c = harmonic_extension(&g1, &[2.5, 2.5, 2.5]);
    assert!(c.values.iter().all(|&v| (v - 2.5).abs() < 1e-15));

    // Energy preserved (value 2) across levels, matching the minimizer.
    for m in 0..=3 {
        let g = sg_graph(m);
        let u = harmonic_extension(&g, &[1.0, 0.0, 0.0]);
        let e = energy(&g, &u, &u).unwrap();
        assert!((e - 2.0).abs() < 1e-12, "level {m}: energy {e}");
        let oracle = g.minimize_energy_with_boundary(&[1.0, 0.0, 0.0]).unwrap();
        for v in 0..g.vertex_count() {
            assert!((u.values[v] - oracle[v]).abs() < 1e-12);
        }
    }
}

#[test]
fn maximum_principle() {
    let g = sg_graph(4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let u = harmonic_extension(&g, &b);
        let hi = b.iter().cloned().fold(f64::MIN, f64::max);
        let lo = b.iter().cloned().fold(f64::MAX, f64::min);
        for &v in &u.values {
            assert!(v <= hi && v >= lo);
        }
    }
}

#[test]
fn energy_monotone_under_restriction() {
    let g5 = sg_graph(5);
    let g4 = sg_graph(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let u5 = random_grid(&g5, &mut rng);
        // Level-4 vertices are the id prefix.
        let u4 = GridFunction::from_values(&g4, u5.values[..g4.vertex_count()].to_vec()).unwrap();
        let e4 = energy(&g4, &u4, &u4).unwrap();
        let e5 = energy(&g5, &u5, &u5).unwrap();
        assert!(e4 <= e5 + 1e-12);
    }
    let c = GridFunction::constant(&g5, 3.0);
    assert_eq!(energy(&g5, &c, &c).unwrap(), 0.0);
}

#[test]
fn laplacian_examples() {
    let g = sg_graph(4);
    let u = harmonic_extension(&g, &[1.0, -0.5, 0.25]);
    let lap = laplacian(&g, &u).unwrap();
    for v in 0..g.vertex_count() {
        if lap.defined[v] {
            assert!(lap.values.values[v].abs() < 1e-9, "harmonic has zero Laplacian");
        } else {
            assert!(g.boundary[v]);
        }
    }
    // Linearity is exact.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_grid(&g, &mut rng);
    let b = random_grid(&g, &mut rng);
    let mut combo = a.clone();
    combo.scale(2.0);
    combo.axpy(-3.0, &b);
    let la = laplacian(&g, &a).unwrap();
    let lb = laplacian(&g, &b).unwrap();
    let lc = laplacian(&g, &combo).unwrap();
    for v in 0..g.vertex_count() {
        if lc.defined[v] {
            let want = 2.0 * la.values.values[v] - 3.0 * lb.values.values[v];
            assert!((lc.values.values[v] - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn normal_derivative_examples() {
    let g = sg_graph(6);
    // Constant: zero at every depth.
    let c = GridFunction::constant(&g, 4.0);
    let nd = normal_derivative(&g, &c, 0, 0, &Word::empty()).unwrap();
    assert!(nd.sequence.iter().all(|&s| s == 0.0));

    // Harmonic (1,0,0) at the 1-vertex: exactly constant 2.
    let u = harmonic_extension(&g, &[1.0, 0.0, 0.0]);
    let nd = normal_derivative(&g, &u, 0, 0, &Word::empty()).unwrap();
    assert_eq!(nd.sequence.len(), g.level + 1);
    for &s in &nd.sequence {
        assert!((s - 2.0).abs() < 1e-12, "sequence value {s}");
    }
    assert!(nd.extrapolation.constant);
    assert!((nd.estimate() - 2.0).abs() < 1e-12);

    // At a junction, the two cell fluxes of a harmonic function cancel.
    let cells = g.cells_at_depth(1);
    let q = cells[0]
        .vertices
        .iter()
        .copied()
        .find(|v| cells[1].vertices.contains(v))
        .unwrap();
    let w0 = Word(vec![0]);
    let w1 = Word(vec![1]);
    let s0 = normal_derivative(&g, &u, q, 0, &w0).unwrap();
    let s1 = normal_derivative(&g, &u, q, 0, &w1).unwrap();
    for (a, b) in s0.sequence.iter().zip(&s1.sequence) {
        assert!((a + b).abs() < 1e-12);
    }

    // Interior vertex is not on the boundary of the whole cell.
    assert!(normal_derivative(&g, &u, q, 0, &Word::empty()).is_err());
}

#[test]
fn gauss_green_identity() {
    let g = sg_graph(5);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let zero = GridFunction::zeros(&g);
    let u = random_grid(&g, &mut rng);
    assert_eq!(gauss_green_residual(&g, &u, &zero).unwrap(), 0.0);
    for _ in 0..10 {
        let u = random_grid(&g, &mut rng);
        let v = random_grid(&g, &mut rng);
        let r = gauss_green_residual(&g, &u, &v).unwrap();
        assert!(r <= 1e-10, "residual {r}");
    }
    // Harmonic u against v vanishing on the boundary: E(u, v) = 0.
    let u = harmonic_extension(&g, &[1.0, 2.0, -1.0]);
    let mut v = random_grid(&g, &mut rng);
    for q in g.boundary_vertices() {
        v.values[q] = 0.0;
    }
    assert!(energy(&g, &u, &v).unwrap().abs() < 1e-10);
}

#[test]
fn holder_estimate_against_resistance() {
    let g = sg_graph(4);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..4 {
        let u = random_grid(&g, &mut rng);
        let e = energy(&g, &u, &u).unwrap();
        for _ in 0..50 {
            let x = rng.gen_range(0..g.vertex_count());
            let y = rng.gen_range(0..g.vertex_count());
            let r = effective_resistance(&g, x, y).unwrap();
            let gap = u.values[x] - u.values[y];
            assert!(gap * gap <= e * r + 1e-10);
        }
    }
}

#[test]
fn structure_validation() {
    let hs = HarmonicStructure::sierpinski_gasket();
    // A_j 1 = 1 exactly and second eigenvalue matches r_j.
    for a in &hs.extension {
        for row in 0..3 {
            let s: f64 = (0..3).map(|c| a[(row, c)]).sum();
            assert_eq!(s, 1.0);
        }
        let mut mags: Vec<f64> = a.clone().complex_eigenvalues().iter().map(|z| z.norm()).collect();
        mags.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert!((mags[1] - 0.6).abs() < 1e-10);
    }

    // The level-0 conductances are recovered as the renormalization fixed point.
    let q0 = derive_base_conductances(&hs.extension, &hs.energy_weights).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((q0[(i, j)] - hs.q0[(i, j)]).abs() < 1e-9, "Q0 mismatch at ({i},{j})");
        }
    }

    // Inconsistent identifications are rejected, not repaired.
    let mut bad = (*hs).clone();
    bad.identifications[0] = ((0, 1), (1, 1));
    assert!(bad.validate().is_err());

    // JSON round-trip reproduces a working structure.
    let spec = hs.to_spec_file();
    let text = serde_json::to_string(&spec).unwrap();
    let parsed: FractalSpecFile = serde_json::from_str(&text).unwrap();
    let re = HarmonicStructure::from_spec_file(&parsed).unwrap();
    let g = LevelGraph::build(&re, 2).unwrap();
    assert_eq!(g.vertex_count(), 15);
}

#[test]
fn double_cover_has_no_boundary() {
    let hs = HarmonicStructure::sierpinski_gasket();
    let g = LevelGraph::build_fractafold(&hs, 2, FractafoldSpec::double_cover(3)).unwrap();
    assert!(g.boundary_vertices().is_empty());
    assert_eq!(g.vertex_count(), 2 * 15 - 3);
    let total: f64 = g.measure.iter().sum();
    assert!((total - 2.0).abs() < 1e-12);
    // Gauss-Green on a boundaryless fractafold: energy plus interior sum is zero.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let u = random_grid(&g, &mut rng);
    let v = random_grid(&g, &mut rng);
    assert!(gauss_green_residual(&g, &u, &v).unwrap() < 1e-10);
}
