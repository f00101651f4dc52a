//! Seeded low-discrepancy samples in coordinate balls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numjet::Vector;

const PRIMES: [u64; 24] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton sequence with a seeded Cranley-Patterson rotation.
pub struct Halton {
    shift: Vec<f64>,
    index: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton dimension {dim} unsupported");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Halton { shift: (0..dim).map(|_| rng.random::<f64>()).collect(), index: 1 }
    }

    /// Next point of the unit cube.
    pub fn next_cube(&mut self) -> Vector {
        let i = self.index;
        self.index += 1;
        Vector::from_iterator(self.shift.len(), self.shift.iter().enumerate().map(|(d, s)| (radical_inverse(i, PRIMES[d]) + s).fract()))
    }

    /// Next point of the closed unit ball, via the radial cube-to-ball map.
    pub fn next_ball(&mut self) -> Vector {
        let y = self.next_cube().map(|u| 2.0 * u - 1.0);
        let l2 = y.norm();
        if l2 == 0.0 {
            return y;
        }
        &y * (y.amax() / l2)
    }
}

/// Seeded RNG shared by the sampling helpers.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample of `[0, 1)`.
pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}

/// Standard-normal vector.
pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Uniformly random unit vector.
pub fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    loop {
        let g = gaussian(rng, n);
        let l = g.norm();
        if l > 1e-12 {
            return g / l;
        }
    }
}
