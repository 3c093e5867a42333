use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Each purpose draws from a disjoint
/// ChaCha stream so that, for example, the two dropout branches never share
/// masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init,
    DropoutA,
    DropoutB,
    Data,
    Repetition,
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Init => 0,
            Purpose::DropoutA => 1,
            Purpose::DropoutB => 2,
            Purpose::Data => 3,
            Purpose::Repetition => 4,
        }
    }
}

/// Counter-based random source keyed by `(seed, purpose, index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub purpose: Purpose,
}

fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl RngStream {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self { seed, purpose }
    }

    /// Uniform draw in `[0, 1)` at position `index` of this stream.
    pub fn value(&self, index: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.purpose.code());
        rng.set_word_pos(u128::from(index) * 2);
        unit_f64(rng.next_u64())
    }

    /// Sequential generator for sub-stream `key`. Distinct `(purpose, key)`
    /// pairs map to distinct ChaCha streams for `key < 2^61`.
    pub fn fork(&self, key: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((key << 3) | self.purpose.code());
        rng
    }
}
