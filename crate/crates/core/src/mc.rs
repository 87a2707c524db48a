//! Replication driver and small Monte Carlo summaries shared by the
//! simulation modules.

use rayon::prelude::*;

use crate::rng::{SeedSpec, StreamRng};

/// Run `reps` replicates in parallel. Replicate `i` draws from
/// `seed.replicate_rng(i)`, and results come back in replicate order, so the
/// output does not depend on the thread count.
pub fn replicate<T, F>(seed: &SeedSpec, reps: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut StreamRng) -> T + Sync + Send,
{
    (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.replicate_rng(i as u64);
            f(i, &mut rng)
        })
        .collect()
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Empirical quantile of sorted data with linear interpolation between order
/// statistics (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Standard error of the empirical `p`-quantile from the spread of the order
/// statistics one binomial standard deviation either side of it.
pub fn quantile_se_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n < 2 {
        return 0.0;
    }
    let k = (n as f64 * p * (1.0 - p)).sqrt().ceil().max(1.0) as usize;
    let centre = ((n - 1) as f64 * p).round() as usize;
    let lo = centre.saturating_sub(k);
    let hi = (centre + k).min(n - 1);
    0.5 * (sorted[hi] - sorted[lo])
}

pub(crate) fn sort_floats(values: &mut [f64]) {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert!((quantile_sorted(&v, 0.125) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn replicate_is_order_stable() {
        let seed = SeedSpec::new(1, 2);
        let a = replicate(&seed, 64, |_, rng| rng.random::<u64>());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| replicate(&seed, 64, |_, rng| rng.random::<u64>()));
        assert_eq!(a, b);
        let single = (0..64)
            .map(|i| seed.replicate_rng(i).random::<u64>())
            .collect::<Vec<_>>();
        assert_eq!(a, single);
    }

    #[test]
    fn quantile_se_shrinks_with_n() {
        let seed = SeedSpec::new(3, 0);
        let mut small = replicate(&seed, 400, |_, rng| rng.random::<f64>());
        let mut large = replicate(&seed, 40_000, |_, rng| rng.random::<f64>());
        sort_floats(&mut small);
        sort_floats(&mut large);
        let se_small = quantile_se_sorted(&small, 0.5);
        let se_large = quantile_se_sorted(&large, 0.5);
        // Uniform median: se = 0.5 / sqrt(n).
        assert!((se_small - 0.025).abs() < 0.01, "{se_small}");
        assert!((se_large - 0.0025).abs() < 0.001, "{se_large}");
    }
}
