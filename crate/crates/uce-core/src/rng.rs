//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, stream kind, counter)`, so any
//! consumer can be replayed independently of what other streams consumed.
//! This is what keeps the gradient-path dropout draws identical whether or
//! not the no-grad sampling passes run, and it makes per-image dataset
//! generation order-independent.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose label of a stream. Streams with different kinds never collide
/// even for the same seed and counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    /// Parameter initialization.
    Init,
    /// Dropout masks on the gradient-recorded forward pass.
    Dropout,
    /// Dropout masks on the no-grad sampling passes.
    Sample,
    /// Data augmentation draws.
    Augment,
    /// Synthetic dataset generation.
    Datagen,
    /// Mini-batch shuffling.
    Shuffle,
}

impl StreamKind {
    fn salt(self) -> u64 {
        match self {
            StreamKind::Init => 0x11,
            StreamKind::Dropout => 0x22,
            StreamKind::Sample => 0x33,
            StreamKind::Augment => 0x44,
            StreamKind::Datagen => 0x55,
            StreamKind::Shuffle => 0x66,
        }
    }
}

/// A deterministic random stream: identical `(seed, kind, counter)` always
/// yields identical draws, on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    kind: StreamKind,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, kind: StreamKind) -> Self {
        RngStream {
            seed,
            kind,
            counter: 0,
        }
    }

    /// Derive an independent child stream of the same kind, keyed by `index`.
    /// Used for per-image and per-epoch substreams.
    pub fn derive(&self, index: u64) -> Self {
        let child_seed = mix(self
            .seed
            .wrapping_add(GOLDEN.wrapping_mul(index ^ 0xD1F3_5A2B))
            ^ self.kind.salt().wrapping_mul(0x0F0F_0F0F_0F0F_0F0F));
        RngStream {
            seed: child_seed,
            kind: self.kind,
            counter: 0,
        }
    }

    pub fn kind(&self) -> StreamKind {
        self.kind
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let z = self
            .seed
            .wrapping_add(GOLDEN.wrapping_mul(self.counter))
            .wrapping_add(self.kind.salt().wrapping_mul(0x632B_E5AB));
        self.counter += 1;
        mix(z)
    }

    /// Uniform in [0, 1) with 24 bits of mantissa (exact as f32).
    #[inline]
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Standard normal draw (Box-Muller; consumes two uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        // shift u1 into (0, 1] so the log is finite
        let r = (-2.0 * (1.0 - u1).max(f64::MIN_POSITIVE).ln()).sqrt();
        r * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
