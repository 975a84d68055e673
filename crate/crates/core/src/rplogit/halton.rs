use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Leading sequence elements skipped in every dimension.
pub const HALTON_BURN_IN: usize = 10;

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|p| *p * *p <= c).all(|p| !c.is_multiple_of(*p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64, perm: &[u64]) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += perm[(i % base) as usize] as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// `n` points of a `dim`-dimensional Halton sequence, row-major `n x dim`.
///
/// Dimension `d` uses the `d`-th prime as base and starts at index
/// `HALTON_BURN_IN + 1`. With `scramble = Some(seed)` the nonzero digits of
/// each base are permuted by a seeded shuffle.
pub fn halton_sequence(dim: usize, n: usize, scramble: Option<u64>) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::invalid("Halton dimension must be positive"));
    }
    let bases = first_primes(dim);
    let mut out = vec![0.0; n * dim];
    for (d, &b) in bases.iter().enumerate() {
        let mut perm: Vec<u64> = (0..b).collect();
        if let Some(seed) = scramble {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(d as u64));
            perm[1..].shuffle(&mut rng);
        }
        for r in 0..n {
            out[r * dim + d] = radical_inverse((HALTON_BURN_IN + 1 + r) as u64, b, &perm);
        }
    }
    Ok(out)
}

/// Standard normal draws, row-major `n x dim`, from a scrambled Halton sequence.
pub fn normal_draws(dim: usize, n: usize, seed: u64) -> Result<Vec<f64>> {
    let std_normal = Normal::standard();
    Ok(halton_sequence(dim, n, Some(seed))?
        .into_iter()
        .map(|u| std_normal.inverse_cdf(u))
        .collect())
}
