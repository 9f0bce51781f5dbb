//! Starting partitions: k-means on the standardized joint vector, random
//! groupings, or the labels carried by the data.

use rand::Rng;

use super::{FitConfig, InitStrategy};
use crate::error::{CwmError, Result};
use crate::model::{Dataset, Label};

pub const KMEANS_MAX_ITER: usize = 20;
pub const MAX_REDRAWS: usize = 50;

/// Hard partition (0-based group per row) for one start.
pub fn initial_partition<R: Rng + ?Sized>(data: &Dataset, config: &FitConfig, rng: &mut R) -> Result<Vec<usize>> {
    let g = config.groups;
    if data.n() <= g {
        return Err(CwmError::InvalidInput(format!("need more rows than groups ({} <= {g})", data.n())));
    }
    match config.init {
        InitStrategy::GivenLabels => given_partition(data, g),
        InitStrategy::RandomPartition => redraw(g, || Ok(random_partition(data.n(), g, rng))),
        InitStrategy::Kmeans => {
            let z = standardized_joint(data);
            redraw(g, || Ok(kmeans(&z, data.d() + 1, g, rng)))
        }
    }
}

/// The starting partition as 0/1 responsibilities, row-major `N × G`.
pub fn initialize<R: Rng + ?Sized>(data: &Dataset, config: &FitConfig, rng: &mut R) -> Result<Vec<f64>> {
    let part = initial_partition(data, config, rng)?;
    Ok(partition_to_responsibilities(&part, config.groups))
}

pub fn partition_to_responsibilities(part: &[usize], g: usize) -> Vec<f64> {
    let mut tau = vec![0.0; part.len() * g];
    for (i, &k) in part.iter().enumerate() {
        tau[i * g + k] = 1.0;
    }
    tau
}

fn redraw(g: usize, mut draw: impl FnMut() -> Result<Vec<usize>>) -> Result<Vec<usize>> {
    for _ in 0..MAX_REDRAWS {
        let part = draw()?;
        let mut counts = vec![0usize; g];
        part.iter().for_each(|&k| counts[k] += 1);
        if counts.iter().all(|&c| c > 0) {
            return Ok(part);
        }
    }
    Err(CwmError::Degenerate(format!("no partition without empty groups after {MAX_REDRAWS} draws")))
}

fn given_partition(data: &Dataset, g: usize) -> Result<Vec<usize>> {
    let labels = data
        .labels()
        .ok_or_else(|| CwmError::InvalidInput("init=given_labels needs a labeled dataset".into()))?;
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            Label::Group(k) if *k < g => Ok(*k),
            Label::Group(k) => Err(CwmError::InvalidInput(format!("row {i}: label {} exceeds G = {g}", k + 1))),
            Label::Noise => Err(CwmError::InvalidInput(format!("row {i}: noise rows cannot seed a given_labels start"))),
        })
        .collect()
}

fn random_partition<R: Rng + ?Sized>(n: usize, g: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..g)).collect()
}

/// Rows of `(x, y)` with every column centered and scaled to unit variance.
fn standardized_joint(data: &Dataset) -> Vec<f64> {
    let (n, q) = (data.n(), data.d() + 1);
    let mut z: Vec<f64> = (0..n).flat_map(|i| data.z_row(i)).collect();
    for j in 0..q {
        let mean = (0..n).map(|i| z[i * q + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (z[i * q + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            z[i * q + j] = (z[i * q + j] - mean) / sd;
        }
    }
    z
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Lloyd iterations from a k-means++ seeding.
pub fn kmeans<R: Rng + ?Sized>(z: &[f64], q: usize, g: usize, rng: &mut R) -> Vec<usize> {
    let n = z.len() / q;
    let row = |i: usize| &z[i * q..(i + 1) * q];
    let mut centers: Vec<f64> = row(rng.random_range(0..n)).to_vec();
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[..q])).collect();
    for _ in 1..g {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.extend_from_slice(row(pick));
        let c = &centers[centers.len() - q..];
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_dist(row(i), c));
        }
    }
    let mut assign = vec![0usize; n];
    for iter in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..g {
                let dd = sq_dist(row(i), &centers[k * q..(k + 1) * q]);
                if dd < best_d {
                    best_d = dd;
                    best = k;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        let mut sums = vec![0.0; g * q];
        let mut counts = vec![0usize; g];
        for i in 0..n {
            counts[assign[i]] += 1;
            for j in 0..q {
                sums[assign[i] * q + j] += z[i * q + j];
            }
        }
        for k in 0..g {
            if counts[k] > 0 {
                for j in 0..q {
                    centers[k * q + j] = sums[k * q + j] / counts[k] as f64;
                }
            }
        }
    }
    assign
}
