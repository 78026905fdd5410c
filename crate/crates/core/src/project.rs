//! Two-dimensional PCA projection of feature rows.

use crate::tensor::Tensor;

/// Relative variance below which the covariance is treated as degenerate.
const DEGENERATE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `N` rows of `(pc1, pc2)`.
    pub points: Vec<[f64; 2]>,
    /// Variance captured by each component.
    pub variance: [f64; 2],
    pub degenerate: bool,
}

/// Projects the rows of an `N × d` tensor onto their top two principal
/// components (power iteration with deflation). Zero-variance input yields
/// all-zero points and a warning.
pub fn pca_2d(features: &Tensor) -> Projection {
    let (n, d) = (features.shape()[0], features.shape()[1]);
    let x = features.data();
    let mut mean = vec![0.0; d];
    for row in x.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let centred: Vec<f64> = x
        .chunks(d)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    let mut cov = vec![0.0; d * d];
    for row in centred.chunks(d) {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += row[i] * row[j] / n.max(1) as f64;
            }
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if n < 2 || trace <= DEGENERATE * scale * scale {
        log::warn!("degenerate feature covariance; emitting zero projection");
        return Projection {
            points: vec![[0.0; 2]; n],
            variance: [0.0; 2],
            degenerate: true,
        };
    }
    let mut components = Vec::new();
    let mut variance = [0.0; 2];
    for (c, var) in variance.iter_mut().enumerate() {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64 * 0.618_034 + c as f64).sin()).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut next = vec![0.0; d];
            for i in 0..d {
                next[i] = (0..d).map(|j| cov[i * d + j] * v[j]).sum();
            }
            let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm <= DEGENERATE * trace {
                lambda = 0.0;
                break;
            }
            next.iter_mut().for_each(|a| *a /= norm);
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            lambda = norm;
            if delta < 1e-13 {
                break;
            }
        }
        if lambda == 0.0 {
            v = vec![0.0; d];
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        *var = lambda;
        components.push(v);
    }
    let points = centred
        .chunks(d)
        .map(|row| {
            let p = |c: &Vec<f64>| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    Projection {
        points,
        variance,
        degenerate: false,
    }
}

/// Mean silhouette coefficient of 2-D points under the given labels.
pub fn silhouette(points: &[[f64; 2]], labels: &[u8]) -> f64 {
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mean_to = |class: u8, skip_self: bool| {
            let (mut s, mut c) = (0.0, 0usize);
            for (j, q) in points.iter().enumerate() {
                if labels[j] == class && !(skip_self && j == i) {
                    s += dist(p, q);
                    c += 1;
                }
            }
            if c == 0 {
                0.0
            } else {
                s / c as f64
            }
        };
        let a = mean_to(labels[i], true);
        let b = mean_to(1 - labels[i], false);
        let denom = a.max(b);
        total += if denom == 0.0 { 0.0 } else { (b - a) / denom };
    }
    total / points.len().max(1) as f64
}
