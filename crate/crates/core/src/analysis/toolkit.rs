//! Deterministic numeric routines behind the analysis steps.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KMEANS_MAX_ITER: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Index of the nearest centroid; ties go to the lower index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centroids.iter().enumerate() {
        let d = sq_dist(p, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from a seeded k-means++ start.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeans, String> {
    if k < 2 {
        return Err(format!("k must be at least 2, got {k}"));
    }
    if points.len() < k {
        return Err(format!("{} complete rows cannot form {k} clusters", points.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            return Err(format!("fewer than {k} distinct points"));
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = d.len() - 1;
        for (i, di) in d.iter().enumerate() {
            if *di > 0.0 && target < *di {
                pick = i;
                break;
            }
            target -= di;
        }
        centroids.push(points[pick].clone());
    }

    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut changed = false;
        for (p, a) in points.iter().zip(assignments.iter_mut()) {
            let (c, _) = nearest(p, &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            // An emptied cluster keeps its previous centre.
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let mut sizes = vec![0; k];
    for &a in &assignments {
        sizes[a] += 1;
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    Ok(KMeans {
        assignments,
        centroids,
        sizes,
        inertia,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loo1nn {
    pub accuracy: f64,
    pub classes: Vec<String>,
    /// Share of the most frequent class, the trivial baseline.
    pub majority_rate: f64,
}

/// Leave-one-out accuracy of the 1-nearest-neighbour rule. Distance ties go
/// to the lower row index.
pub fn leave_one_out_1nn(features: &[Vec<f64>], labels: &[String]) -> Result<Loo1nn, String> {
    if features.len() < 2 {
        return Err(format!("{} complete rows; need at least 2", features.len()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_str()).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err("all rows carry the same label".into());
    }
    let correct = (0..features.len())
        .filter(|&i| {
            let mut best = (usize::MAX, f64::INFINITY);
            for j in (0..features.len()).filter(|&j| j != i) {
                let d = sq_dist(&features[i], &features[j]);
                if d < best.1 {
                    best = (j, d);
                }
            }
            labels[best.0] == labels[i]
        })
        .count();
    let n = features.len() as f64;
    Ok(Loo1nn {
        accuracy: correct as f64 / n,
        classes: counts.keys().map(|s| s.to_string()).collect(),
        majority_rate: *counts.values().max().unwrap_or(&0) as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ols {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Simple least squares `y = intercept + slope * x`, two-pass for accuracy.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<Ols, String> {
    if xs.len() != ys.len() {
        return Err("x and y lengths differ".into());
    }
    if xs.len() < 2 {
        return Err(format!("{} complete rows; need at least 2", xs.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err("predictor has zero variance".into());
    }
    if syy == 0.0 {
        return Err("response has zero variance".into());
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    Ok(Ols {
        slope,
        intercept,
        r_squared: 1.0 - sse / syy,
    })
}
