//! Reproducible random streams.
//!
//! The generator is xoshiro256++ seeded through SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`). Uniforms take the top 53 bits of
//! each output word; normals use the basic Box–Muller transform with the
//! second variate cached. Transcendentals go through `libm` so streams do
//! not depend on the platform's math library.

use rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::matrix::Matrix;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal variate.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping ln finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let phi = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(phi));
        r * libm::cos(phi)
    }

    pub fn normal_vec(&mut self, len: usize, std: f64) -> Vec<f64> {
        (0..len).map(|_| std * self.normal()).collect()
    }
}

/// Matrix with i.i.d. `N(0, std²)` entries drawn row-major from `rng`.
pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    assert!(std >= 0.0, "negative standard deviation");
    let data = rng.normal_vec(rows * cols, std);
    Matrix::from_vec(rows, cols, data).expect("gaussian samples are finite")
}

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive 64-bit hash of a word sequence, used for deriving seeds.
///
/// `h ← mix64(h ⊕ (w + 0x9e3779b97f4a7c15·(i+1)))` folded over the words,
/// starting from `h = 0x6a09e667f3bcc908`.
pub fn hash64(words: &[u64]) -> u64 {
    words
        .iter()
        .enumerate()
        .fold(0x6a09_e667_f3bc_c908, |h, (i, &w)| {
            mix64(h ^ w.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)))
        })
}
