//! Halton sequences for deterministic sampling.

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in `base`, a point of [0, 1).
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut x = 0.0;
    while index > 0 {
        x += (index % b) as f64 * f;
        index /= b;
        f *= inv;
    }
    x
}

/// The `index`-th point of the Halton sequence in `[0,1)^dim`.
///
/// # Panics
/// If `dim` exceeds the number of tabulated prime bases (16).
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "Halton dimension {dim} too large");
    PRIMES[..dim].iter().map(|&p| radical_inverse(index, p)).collect()
}

/// Deterministic points of the ball `|x| <= radius` in `R^dim`, obtained by
/// rejection from the Halton sequence starting at index `offset + 1`.
pub fn ball_points(count: usize, dim: usize, radius: f64, offset: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut index = offset + 1;
    while out.len() < count {
        let x: Vec<f64> = halton(index, dim)
            .into_iter()
            .map(|h| radius * (2.0 * h - 1.0))
            .collect();
        index += 1;
        if x.iter().map(|c| c * c).sum::<f64>() <= radius * radius {
            out.push(x);
        }
    }
    out
}
