//! Random draws used by the sampler. Every chain owns a ChaCha stream so
//! results depend only on `(seed, stream)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

pub type ChainRng = ChaCha8Rng;

/// Independent generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform on the open interval (0, 1).
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// `log(G)` with `G ~ Gamma(shape, 1)`. Small shapes use the
/// `G(a) = G(a + 1) * U^(1/a)` identity in log space so that draws far
/// below the smallest positive double are still represented.
pub fn log_gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid gamma shape").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0)
            .expect("valid gamma shape")
            .sample(rng);
        g.ln() + open_uniform(rng).ln() / shape
    }
}

/// Dirichlet draw returned as log-probabilities.
pub fn log_dirichlet_draw<R: Rng + ?Sized>(rng: &mut R, concentration: &[f64]) -> Vec<f64> {
    let mut logs: Vec<f64> = concentration
        .iter()
        .map(|&c| log_gamma_draw(rng, c))
        .collect();
    let lse = log_sum_exp(&logs);
    for l in &mut logs {
        *l -= lse;
    }
    logs
}

/// Inverse-gamma draw with density proportional to `x^(-shape-1) exp(-rate/x)`.
pub fn inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0 / rate)
        .expect("valid inverse-gamma parameters")
        .sample(rng);
    1.0 / g
}

/// Standard normal conditioned on exceeding `lower`.
fn std_normal_above<R: Rng + ?Sized>(rng: &mut R, lower: f64) -> f64 {
    if lower <= 0.0 {
        loop {
            let z = standard_normal(rng);
            if z > lower {
                return z;
            }
        }
    }
    // exponential rejection sampler with the optimal rate for this bound
    let lambda = 0.5 * (lower + (lower * lower + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = lower + e / lambda;
        let accept = (-0.5 * (z - lambda) * (z - lambda)).exp();
        if open_uniform(rng) <= accept && z > lower {
            return z;
        }
    }
}

/// `N(mean, 1)` restricted to `(0, inf)` when `positive`, else `(-inf, 0]`.
pub fn truncated_unit_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, positive: bool) -> f64 {
    loop {
        let z = if positive {
            mean + std_normal_above(rng, -mean)
        } else {
            -(-mean + std_normal_above(rng, mean))
        };
        // guard against rounding onto the wrong side of zero
        if (positive && z > 0.0) || (!positive && z <= 0.0) {
            return z;
        }
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index drawn proportionally to `exp(log_weights[k])` among `candidates`.
/// Falls back to a uniform pick if every weight underflows.
pub fn pick_weighted<R: Rng + ?Sized>(
    rng: &mut R,
    candidates: &[usize],
    log_weights: &[f64],
) -> usize {
    debug_assert!(!candidates.is_empty());
    let max = candidates
        .iter()
        .map(|&k| log_weights[k])
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return candidates[rng.random_range(0..candidates.len())];
    }
    let weights: Vec<f64> = candidates
        .iter()
        .map(|&k| (log_weights[k] - max).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&k, w) in candidates.iter().zip(&weights) {
        if u < *w {
            return k;
        }
        u -= w;
    }
    *candidates.last().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| rng_for(7, 0).random()).collect();
        let mut r1 = rng_for(7, 0);
        let mut r2 = rng_for(7, 1);
        let x: u64 = r1.random();
        let y: u64 = r2.random();
        assert_eq!(a[0], x);
        assert_ne!(x, y);
    }

    #[test]
    fn tiny_shape_gamma_stays_finite() {
        let mut rng = rng_for(3, 0);
        for _ in 0..1000 {
            let l = log_gamma_draw(&mut rng, 1e-3);
            assert!(l.is_finite());
        }
    }

    #[test]
    fn log_dirichlet_normalizes() {
        let mut rng = rng_for(5, 0);
        let l = log_dirichlet_draw(&mut rng, &[0.01, 0.01, 3.0, 1.0]);
        let s: f64 = l.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_gamma_mean() {
        let mut rng = rng_for(11, 0);
        let n = 200_000;
        let mean = (0..n).map(|_| inverse_gamma(&mut rng, 8.0, 4.0)).sum::<f64>() / n as f64;
        // rate / (shape - 1) = 4/7
        assert!((mean - 4.0 / 7.0).abs() < 0.005, "{mean}");
    }

    #[test]
    fn truncated_normal_far_tail() {
        let mut rng = rng_for(13, 0);
        for _ in 0..1000 {
            assert!(truncated_unit_normal(&mut rng, -8.0, true) > 0.0);
            assert!(truncated_unit_normal(&mut rng, 8.0, false) <= 0.0);
        }
    }

    #[test]
    fn weighted_pick_respects_candidates() {
        let mut rng = rng_for(17, 0);
        let lw = [0.0, f64::NEG_INFINITY, 0.0, 5.0];
        for _ in 0..100 {
            let k = pick_weighted(&mut rng, &[0, 1, 2], &lw);
            assert!(k == 0 || k == 2);
        }
        let k = pick_weighted(&mut rng, &[1], &lw);
        assert_eq!(k, 1);
    }
}
