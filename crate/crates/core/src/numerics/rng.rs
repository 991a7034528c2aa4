use std::convert::Infallible;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Counter-based random stream.
///
/// Output `k` of a stream is a pure function of `(key, k)`, so a child obtained
/// with [`Rng::split`] depends only on the parent's key and the label, never on
/// how many draws the parent has made.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    key: u64,
    counter: u64,
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ 0x5851_F42D_4C95_7F2D),
            counter: 0,
        }
    }

    /// Independent child stream identified by `label`.
    pub fn split(&self, label: &str) -> Rng {
        Rng {
            key: mix64(self.key ^ mix64(fnv1a(label))),
            counter: 0,
        }
    }

    /// Child stream identified by `(label, index)`.
    pub fn split_index(&self, label: &str, index: u64) -> Rng {
        let child = self.split(label);
        Rng {
            key: mix64(child.key ^ mix64(index.wrapping_add(GOLDEN_GAMMA))),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(self);
    }
}

impl rand::TryRng for Rng {
    type Error = Infallible;

    fn try_next_u32(&mut self) -> Result<u32, Infallible> {
        Ok((self.next_u64() >> 32) as u32)
    }

    fn try_next_u64(&mut self) -> Result<u64, Infallible> {
        Ok(self.next_u64())
    }

    fn try_fill_bytes(&mut self, dst: &mut [u8]) -> Result<(), Infallible> {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draw(rng: &mut Rng, n: usize) -> Vec<u64> {
        (0..n).map(|_| rng.next_u64()).collect()
    }

    #[test]
    fn same_seed_same_stream() {
        assert_eq!(draw(&mut Rng::new(7), 100), draw(&mut Rng::new(7), 100));
        assert_ne!(draw(&mut Rng::new(7), 100), draw(&mut Rng::new(8), 100));
    }

    #[test]
    fn split_ignores_parent_progress() {
        let parent = Rng::new(3);
        let mut advanced = parent.clone();
        draw(&mut advanced, 17);
        assert_eq!(
            draw(&mut parent.split("env"), 10),
            draw(&mut advanced.split("env"), 10)
        );
    }

    #[test]
    fn children_differ_by_label_and_index() {
        let root = Rng::new(1);
        let a = draw(&mut root.split("a"), 50);
        let b = draw(&mut root.split("b"), 50);
        let a0 = draw(&mut root.split_index("a", 0), 50);
        let a1 = draw(&mut root.split_index("a", 1), 50);
        assert_ne!(a, b);
        assert_ne!(a0, a1);
        assert_ne!(a, a0);
        // no shared values at all between sibling streams
        assert!(a.iter().all(|x| !b.contains(x)));
    }

    #[test]
    fn sibling_streams_are_uncorrelated() {
        let root = Rng::new(99);
        let mut x = root.split("x");
        let mut y = root.split("y");
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| x.uniform() - 0.5).collect();
        let ys: Vec<f64> = (0..n).map(|_| y.uniform() - 0.5).collect();
        let cov: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        // var of uniform(-.5,.5) is 1/12; correlation within ~4 sigma of zero
        let corr = cov * 12.0;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn uniform_moments() {
        let mut rng = Rng::new(5);
        let n = 100_000;
        let mean = (0..n).map(|_| rng.uniform()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005);
    }
}
