//! Convergence-rate fitting and sequence extrapolation helpers.

/// Least-squares slope and intercept of `y` against `x`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return (0.0, sy / n.max(1.0));
    }
    let slope = (n * sxy - sx * sy) / denom;
    (slope, (sy - slope * sx) / n)
}

/// Fitted slope of `log(values)` against the index positions, skipping
/// non-positive values (returns None when fewer than two usable points).
pub fn log_slope(indices: &[f64], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = indices
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&i, &v)| (i, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    Some(fit_line(&xs, &ys).0)
}

#[derive(Debug, Clone)]
pub struct Extrapolation {
    pub estimate: f64,
    /// Last forward difference of the raw sequence.
    pub last_delta: f64,
    /// Estimated geometric ratio of the differences, if meaningful.
    pub ratio: Option<f64>,
    /// True if the tail of the sequence was constant to rounding.
    pub constant: bool,
}

/// Aitken delta-squared extrapolation from the sequence tail. Sequences that
/// are already constant are reported as such with the exact value.
pub fn aitken_limit(seq: &[f64]) -> Extrapolation {
    let n = seq.len();
    assert!(n >= 1);
    if n == 1 {
        return Extrapolation { estimate: seq[0], last_delta: 0.0, ratio: None, constant: true };
    }
    let last_delta = seq[n - 1] - seq[n - 2];
    let scale = seq.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    if n >= 3 {
        let (s0, s1, s2) = (seq[n - 3], seq[n - 2], seq[n - 1]);
        let d1 = s1 - s0;
        let d2 = s2 - s1;
        let denom = d2 - d1;
        let constant = d1.abs() <= 1e-14 * scale && d2.abs() <= 1e-14 * scale;
        if constant {
            return Extrapolation { estimate: s2, last_delta, ratio: None, constant: true };
        }
        if denom.abs() > 1e-13 * scale {
            let est = s2 - d2 * d2 / denom;
            let ratio = if d1.abs() > 1e-300 { Some(d2 / d1) } else { None };
            return Extrapolation { estimate: est, last_delta, ratio, constant: false };
        }
    }
    Extrapolation {
        estimate: seq[n - 1],
        last_delta,
        ratio: None,
        constant: last_delta.abs() <= 1e-14 * scale,
    }
}

/// Repeated Richardson elimination of known geometric error terms: given
/// `s_i = s + sum_k c_k q_k^i`, eliminates the listed ratios in order.
pub fn richardson_ladder(seq: &[f64], ratios: &[f64]) -> Vec<f64> {
    let mut cur = seq.to_vec();
    for &q in ratios {
        if cur.len() < 2 {
            break;
        }
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            next.push((cur[i + 1] - q * cur[i]) / (1.0 - q));
        }
        cur = next;
    }
    cur
}
