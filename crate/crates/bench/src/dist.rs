//! Key choosers for workloads.

use std::sync::Arc;

use rand::Rng;

/// Zipfian over `0..n` by inverting the exact CDF; rank `r` has weight
/// `1/(r+1)^theta`. Ranks are scattered over the item space so that hot
/// items are not neighbours.
#[derive(Clone, Debug)]
pub struct Zipfian {
    cdf: Arc<Vec<f64>>,
    scatter: u64,
}

impl Zipfian {
    pub fn new(n: u64, theta: f64) -> Zipfian {
        assert!(n > 0, "zipfian over an empty domain");
        assert!(theta > 0.0 && theta <= 1.0, "theta must be in (0, 1]");
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0;
        for r in 0..n {
            acc += 1.0 / ((r + 1) as f64).powf(theta);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Zipfian { cdf: Arc::new(cdf), scatter: coprime_near(n, 0x9E37_79B9) }
    }

    pub fn n(&self) -> u64 {
        self.cdf.len() as u64
    }

    /// The rank drawn, 0 being the most popular.
    pub fn sample_rank<R: Rng>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.gen();
        (self.cdf.partition_point(|&c| c < u) as u64).min(self.n() - 1)
    }

    /// The item at `rank`.
    pub fn item(&self, rank: u64) -> u64 {
        ((u128::from(rank) * u128::from(self.scatter)) % u128::from(self.n())) as u64
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        self.item(self.sample_rank(rng))
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn coprime_near(n: u64, start: u64) -> u64 {
    (start..).find(|&p| gcd(p, n) == 1).expect("a coprime exists")
}

#[derive(Clone, Debug)]
pub enum KeyDist {
    Uniform(u64),
    Zipfian(Zipfian),
}

impl KeyDist {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            KeyDist::Uniform(n) => rng.gen_range(0..*n),
            KeyDist::Zipfian(z) => z.sample(rng),
        }
    }
}
