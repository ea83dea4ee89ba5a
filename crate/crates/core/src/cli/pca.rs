//! Two-component PCA by power iteration with deflation.

use crate::error::{Error, Result};

const ITERATIONS: usize = 500;
const TOLERANCE: f64 = 1e-12;

/// Per-row coordinates and the unit axes that produced them.
pub type Projection = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Projects `rows` (each of width `d`) onto their top `k` principal axes.
/// Returns the projected coordinates and the axes. Axis signs are fixed so
/// that the largest-magnitude entry is positive.
pub fn pca(rows: &[Vec<f64>], k: usize) -> Result<Projection> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Contract("PCA needs a non-empty rectangular matrix".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += r[i] * r[j] / n as f64;
            }
        }
    }

    let mut axes = Vec::with_capacity(k);
    for c in 0..k.min(d) {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * ((i + c) % 7) as f64).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..ITERATIONS {
            let mut w: Vec<f64> = (0..d).map(|i| cov[i].iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            let norm = normalize(&mut w);
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = w;
            lambda = norm;
            if norm == 0.0 || delta < TOLERANCE {
                break;
            }
        }
        let pivot = v.iter().cloned().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            for j in 0..d {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        axes.push(v);
    }
    while axes.len() < k {
        axes.push(vec![0.0; d]);
    }
    let coords = centered
        .iter()
        .map(|r| axes.iter().map(|a| a.iter().zip(r).map(|(x, y)| x * y).sum()).collect())
        .collect();
    Ok((coords, axes))
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_known_axes() {
        // Spread 3 along (1,1,0)/√2, spread 1 along z, nothing along (1,-1,0).
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut rows = Vec::new();
        for a in [-3.0, 3.0] {
            for b in [-1.0, 1.0] {
                rows.push(vec![a * s + 5.0, a * s - 2.0, b]);
            }
        }
        let (coords, axes) = pca(&rows, 2).unwrap();
        assert!((axes[0][0] - s).abs() < 1e-9 && (axes[0][1] - s).abs() < 1e-9 && axes[0][2].abs() < 1e-9);
        assert!((axes[1][2].abs() - 1.0).abs() < 1e-9);
        for (c, r) in coords.iter().zip(&rows) {
            assert!((c[0].abs() - 3.0).abs() < 1e-9);
            assert!((c[1] - r[2] * axes[1][2]).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_and_rejects_ragged_input() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 % 7.0, 1.0]).collect();
        assert_eq!(pca(&rows, 2).unwrap(), pca(&rows, 2).unwrap());
        assert!(pca(&[vec![1.0], vec![1.0, 2.0]], 2).is_err());
        assert!(pca(&[], 2).is_err());
    }
}
