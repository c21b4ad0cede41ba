//! Reproducible random-number streams.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed. The
//! 64-bit ChaCha stream word carries the stream id in its upper half and
//! the role tag in its lower half, so distinct `(stream_id, role)` pairs
//! select disjoint keystreams and identical pairs replay identical draws.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoleTag {
    StateNoise,
    MeasurementNoise,
    Clock,
    /// Independent noise copies driving the mean-field reference process.
    MeanField,
    /// Internal Monte Carlo fallback of the generator quadrature.
    Quadrature,
    ParticleNoise(u32),
}

impl RoleTag {
    fn code(self) -> u32 {
        match self {
            RoleTag::StateNoise => 0,
            RoleTag::MeasurementNoise => 1,
            RoleTag::Clock => 2,
            RoleTag::MeanField => 3,
            RoleTag::Quadrature => 4,
            RoleTag::ParticleNoise(l) => {
                assert!(l < u32::MAX - 16, "particle index out of range");
                16 + l
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u32,
    role: RoleTag,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u32, role: RoleTag) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(((stream_id as u64) << 32) | role.code() as u64);
        Self {
            master_seed,
            stream_id,
            role,
            rng,
        }
    }

    /// A sibling stream sharing seed and stream id but with another role.
    pub fn sibling(&self, role: RoleTag) -> Self {
        Self::new(self.master_seed, self.stream_id, role)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u32 {
        self.stream_id
    }

    pub fn role(&self) -> RoleTag {
        self.role
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Exponential draw with the given rate.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        let e: f64 = Exp1.sample(&mut self.rng);
        e / rate
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
