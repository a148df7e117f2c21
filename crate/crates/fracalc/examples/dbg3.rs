use fracalc::calibrate::Calibration;
use fracalc::jets::*;
use fracalc::model::*;
use std::sync::Arc;

fn main() {
    let hs = HarmonicStructure::sierpinski_gasket();
    let calib = Calibration::new(&hs, 10).unwrap();
    let graph = Arc::new(LevelGraph::build(&hs, 6).unwrap());
    let core = vec![(0usize, Word(vec![0]))];
    match bump(&calib, &graph, &core, 2, 3) {
        Ok(b) => println!("bump ok: sup {} min {}", b.sup_norm, b.min_value),
        Err(e) => println!("bump ERR: {e}"),
    }
    // Direct borel with order 3:
    let q = CellPoint::new(0, Word(vec![1, 0]), 0);
    let mut jet = JetSample::zero(q.clone(), 3);
    jet.laplacian_values[0] = 1.0;
    match borel_finite(&calib, &jet, &[1, 2]) {
        Ok(f) => {
            let got = jet_extract(&calib, &f, &q, 3).unwrap();
            println!("borel ok atoms {}; rho {:?}", f.atoms.len(), got.laplacian_values);
        }
        Err(e) => println!("borel ERR: {e}"),
    }
}
