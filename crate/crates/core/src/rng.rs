//! Counter-based Gaussian noise.
//!
//! Every normal variate is a pure function of
//! `(master_seed, stream tag, lane, path_index, step_index, coordinate)`.
//! The block cipher is Philox4x32-10; each call yields 128 bits, turned into
//! two 53-bit uniforms and then into two standard normals by the Box–Muller
//! transform (`√(-2 ln u₁)·cos(2πu₂)`, `√(-2 ln u₁)·sin(2πu₂)`), with
//! `u₁ ∈ (0, 1]` so the logarithm is always finite.

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Philox4x32 with 10 rounds.
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let p0 = u64::from(PHILOX_M0) * u64::from(c[0]);
        let p1 = u64::from(PHILOX_M1) * u64::from(c[2]);
        let (hi0, lo0) = ((p0 >> 32) as u32, p0 as u32);
        let (hi1, lo1) = ((p1 >> 32) as u32, p1 as u32);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Separates the noise used by independent ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StreamTag {
    VariableStep,
    Reference,
    Coupled,
    Tangent,
    FiniteDifference,
    Projection,
    GaussianProbe,
    AssumptionProbe,
}

impl StreamTag {
    fn code(self) -> u64 {
        match self {
            StreamTag::VariableStep => 1,
            StreamTag::Reference => 2,
            StreamTag::Coupled => 3,
            StreamTag::Tangent => 4,
            StreamTag::FiniteDifference => 5,
            StreamTag::Projection => 6,
            StreamTag::GaussianProbe => 7,
            StreamTag::AssumptionProbe => 8,
        }
    }
}

const PATH_LIMIT: u64 = 1 << 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    key: [u32; 2],
}

impl NoiseStream {
    pub fn new(master_seed: u64, tag: StreamTag) -> Self {
        Self::with_lane(master_seed, tag, 0)
    }

    /// `lane` distinguishes several independent ensembles under one tag
    /// (e.g. one reference ensemble per checkpoint).
    pub fn with_lane(master_seed: u64, tag: StreamTag, lane: u32) -> Self {
        let k = splitmix64(master_seed ^ splitmix64((tag.code() << 32) | u64::from(lane)));
        Self {
            key: [k as u32, (k >> 32) as u32],
        }
    }

    /// Raw 128-bit block `block` of `(path_index, step_index)`.
    pub fn block(&self, path_index: u64, step_index: u64, block: u16) -> [u32; 4] {
        debug_assert!(path_index < PATH_LIMIT);
        let counter = [
            step_index as u32,
            (step_index >> 32) as u32,
            path_index as u32,
            (((path_index >> 32) as u32) << 16) | u32::from(block),
        ];
        philox4x32(counter, self.key)
    }

    /// Two uniforms in `(0, 1]` and `[0, 1)`.
    pub fn uniforms(&self, path_index: u64, step_index: u64, block: u16) -> (f64, f64) {
        let r = self.block(path_index, step_index, block);
        let a = ((u64::from(r[1]) << 32) | u64::from(r[0])) >> 11;
        let b = ((u64::from(r[3]) << 32) | u64::from(r[2])) >> 11;
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((a + 1) as f64 * SCALE, b as f64 * SCALE)
    }

    /// Fills `out` with independent standard normals for `(path_index, step_index)`.
    pub fn normals(&self, path_index: u64, step_index: u64, out: &mut [f64]) {
        for (block, pair) in out.chunks_mut(2).enumerate() {
            let (u1, u2) = self.uniforms(path_index, step_index, block as u16);
            let radius = libm::sqrt(-2.0 * libm::log(u1));
            let angle = 2.0 * core::f64::consts::PI * u2;
            pair[0] = radius * libm::cos(angle);
            if pair.len() > 1 {
                pair[1] = radius * libm::sin(angle);
            }
        }
    }
}
