//! Lloyd's algorithm on scalars with centers initialised evenly between
//! the minimum and maximum value.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans1d {
    pub assignments: Vec<usize>,
    pub centers: Vec<f64>,
    pub iterations: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub cost_history: Vec<f64>,
}

impl KMeans1d {
    pub fn cost(&self) -> f64 {
        *self.cost_history.last().unwrap_or(&0.0)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centers.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub const DEFAULT_MAX_ITERS: usize = 100;

pub fn kmeans_1d(values: &[f64], k: usize, max_iters: usize) -> Result<KMeans1d> {
    if k == 0 {
        return Err(Error::Cluster("k must be at least 1".into()));
    }
    if values.len() < k {
        return Err(Error::Cluster(format!(
            "need at least k = {k} values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Cluster("values must be finite".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut centers: Vec<f64> = if k == 1 {
        vec![min + (max - min) / 2.0]
    } else {
        (0..k)
            .map(|i| min + (max - min) * (i as f64 / (k - 1) as f64))
            .collect()
    };

    let mut assignments = assign(values, &centers);
    let mut cost_history = vec![cost(values, &assignments, &centers)];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        update_centers(values, &assignments, &mut centers);
        let next = assign(values, &centers);
        cost_history.push(cost(values, &next, &centers));
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(KMeans1d {
        assignments,
        centers,
        iterations,
        cost_history,
    })
}

fn assign(values: &[f64], centers: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|&v| {
            let mut best = 0;
            let mut best_d = (v - centers[0]).abs();
            for (j, &c) in centers.iter().enumerate().skip(1) {
                let d = (v - c).abs();
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Empty clusters keep their previous center.
fn update_centers(values: &[f64], assignments: &[usize], centers: &mut [f64]) {
    let mut sums = vec![0.0; centers.len()];
    let mut counts = vec![0usize; centers.len()];
    for (&v, &a) in values.iter().zip(assignments) {
        sums[a] += v;
        counts[a] += 1;
    }
    for ((c, s), n) in centers.iter_mut().zip(sums).zip(counts) {
        if n > 0 {
            *c = s / n as f64;
        }
    }
}

fn cost(values: &[f64], assignments: &[usize], centers: &[f64]) -> f64 {
    values
        .iter()
        .zip(assignments)
        .map(|(&v, &a)| (v - centers[a]).powi(2))
        .sum()
}
