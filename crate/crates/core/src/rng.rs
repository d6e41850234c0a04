//! Counter-based random number generator.
//!
//! The whole pipeline derives its randomness from this generator. Its state is
//! two 64-bit words (key, counter), which makes it trivial to serialize inside
//! checkpoints and to fork into independent per-step / per-stage streams. The
//! output function is the splitmix64 finalizer applied to a Weyl sequence, so
//! draws depend only on (key, counter) and never on call history.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng {
            key: mix(seed.wrapping_add(GOLDEN_GAMMA)),
            counter: 0,
        }
    }

    /// Derive an independent stream. Forking never advances `self`.
    pub fn fork(&self, tag: u64) -> Self {
        CounterRng {
            key: mix(self.key ^ mix(tag.wrapping_add(GOLDEN_GAMMA))),
            counter: 0,
        }
    }

    /// Fork keyed by a string label (FNV-1a hash of the label).
    pub fn fork_named(&self, label: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.fork(h)
    }

    pub fn state(&self) -> (u64, u64) {
        (self.key, self.counter)
    }

    pub fn from_state(key: u64, counter: u64) -> Self {
        CounterRng { key, counter }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; consumes two uniforms per draw.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in [0, n). Panics if n == 0.
    pub fn gen_range(&mut self, n: usize) -> usize {
        assert!(n > 0, "gen_range(0)");
        (self.next_u64() % n as u64) as usize
    }

    pub fn gen_bool(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.gen_range(i + 1);
            items.swap(i, j);
        }
    }

    /// Draw from Binomial(n, p) by direct simulation.
    pub fn binomial(&mut self, n: usize, p: f64) -> usize {
        (0..n).filter(|_| self.gen_bool(p)).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let mut a = CounterRng::new(7);
        let mut b = CounterRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn fork_does_not_advance_parent() {
        let mut a = CounterRng::new(7);
        let before = a.state();
        let _child = a.fork(3);
        assert_eq!(a.state(), before);
        let x = a.next_u64();
        let mut fresh = CounterRng::new(7);
        assert_eq!(x, fresh.next_u64());
    }

    #[test]
    fn forks_are_distinct_streams() {
        let root = CounterRng::new(1);
        let mut a = root.fork(0);
        let mut b = root.fork(1);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn state_round_trip() {
        let mut a = CounterRng::new(42);
        a.next_u64();
        a.next_u64();
        let (k, c) = a.state();
        let mut b = CounterRng::from_state(k, c);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_in_open_unit_interval() {
        let mut rng = CounterRng::new(3);
        for _ in 0..10_000 {
            let x = rng.next_f64();
            assert!(x > 0.0 && x < 1.0);
        }
    }

    #[test]
    fn normal_moments_plausible() {
        let mut rng = CounterRng::new(5);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z = rng.next_normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // 3 sigma bounds for the sample mean and a loose variance band.
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean={mean}");
        assert!((var - 1.0).abs() < 0.02, "var={var}");
    }
}

/// Derive a named sub-seed from a root seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    CounterRng::new(seed).fork_named(label).state().0
}
