//! Variation and selection operators over bounded real vectors.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::scenario::Bounds;

/// Draws every gene uniformly within its bounds.
pub fn uniform_sample<R: Rng + ?Sized>(bounds: &[Bounds], rng: &mut R) -> Vec<f64> {
    bounds
        .iter()
        .map(|b| if b.range() > 0.0 { rng.gen_range(b.low..=b.high) } else { b.low })
        .collect()
}

/// Per-gene Gaussian mutation: each gene mutates with probability `pm`,
/// by a normal step of `sigma_frac` times its range, then is clamped.
/// Returns the child and the number of genes that mutated.
pub fn gaussian_mutation<R: Rng + ?Sized>(
    parent: &[f64],
    bounds: &[Bounds],
    pm: f64,
    sigma_frac: f64,
    rng: &mut R,
) -> (Vec<f64>, usize) {
    let mut mutated = 0;
    let child = parent
        .iter()
        .zip(bounds)
        .map(|(&v, b)| {
            if rng.gen::<f64>() < pm {
                mutated += 1;
                let step: f64 = rng.sample(StandardNormal);
                b.clamp(v + step * sigma_frac * b.range())
            } else {
                v
            }
        })
        .collect();
    (child, mutated)
}

/// Mutates only the genes in `mask`, each with probability `pm`; at least
/// one masked gene always changes when the mask is non-empty.
pub fn masked_mutation<R: Rng + ?Sized>(
    parent: &[f64],
    bounds: &[Bounds],
    mask: &[usize],
    pm: f64,
    sigma_frac: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut child = parent.to_vec();
    if mask.is_empty() {
        return child;
    }
    let forced = mask[rng.gen_range(0..mask.len())];
    for &i in mask {
        if i == forced || rng.gen::<f64>() < pm {
            let step: f64 = rng.sample(StandardNormal);
            child[i] = bounds[i].clamp(child[i] + step * sigma_frac * bounds[i].range());
        }
    }
    child
}

/// One-point crossover applied with probability `pc`. The flag reports
/// whether the pair was recombined.
pub fn one_point_crossover<R: Rng + ?Sized>(a: &[f64], b: &[f64], pc: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>, bool) {
    let cross = rng.gen::<f64>() < pc;
    if !cross || a.len() < 2 {
        return (a.to_vec(), b.to_vec(), cross);
    }
    let cut = rng.gen_range(1..a.len());
    let mut c1 = a[..cut].to_vec();
    c1.extend_from_slice(&b[cut..]);
    let mut c2 = b[..cut].to_vec();
    c2.extend_from_slice(&a[cut..]);
    (c1, c2, true)
}

/// Binary tournament on minimized `fitness`; ties go to the lower index.
pub fn tournament<R: Rng + ?Sized>(fitness: &[f64], rng: &mut R) -> usize {
    let i = rng.gen_range(0..fitness.len());
    let j = rng.gen_range(0..fitness.len());
    match fitness[i].total_cmp(&fitness[j]) {
        std::cmp::Ordering::Less => i,
        std::cmp::Ordering::Greater => j,
        std::cmp::Ordering::Equal => i.min(j),
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Length of the diagonal of the box spanned by `bounds`.
pub fn diagonal(bounds: &[Bounds]) -> f64 {
    bounds.iter().map(|b| b.range() * b.range()).sum::<f64>().sqrt()
}

/// Index of the smallest value; ties go to the lower index.
pub fn argmin(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}
