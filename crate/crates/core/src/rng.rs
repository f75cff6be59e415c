//! Stateless, counter-based uniform randomness.
//!
//! Every random quantity in the crate is a pure function of
//! `(seed, replica, row, column, stream)`. Nothing is drawn sequentially, so
//! two processes that read the same coordinates see the same value no matter
//! which order they evaluate them in or how many threads are involved. This is
//! what makes the couplings across `epsilon`, across `s` and across initial
//! conditions hold pathwise.

use serde::{Deserialize, Serialize};

/// Independent families of uniforms living on the same lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    /// Threshold-coupled arrow draws.
    Arrow,
    /// Fresh color `Y(v)`; also the shared `U(v)` of the A/B coupling.
    FreshColor,
    /// Enhancement activation bits.
    Lambda,
    /// Random left/right choices of the symmetric extremal walk.
    TieBreak,
    /// Initial conditions that need randomness (i.i.d. colors).
    Init,
}

impl Stream {
    const fn id(self) -> u64 {
        match self {
            Stream::Arrow => 0x1,
            Stream::FreshColor => 0x2,
            Stream::Lambda => 0x3,
            Stream::TieBreak => 0x4,
            Stream::Init => 0x5,
        }
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const ROW_MUL: u64 = 0xd1b5_4a32_d192_ed03;
const COL_MUL: u64 = 0xaef1_7502_108e_f2d9;
const STREAM_MUL: u64 = 0xdb4f_0b91_75ae_2165;
const REPLICA_MUL: u64 = 0x8cb9_2ba7_2f3d_8dd7;

/// SplitMix64 output function.
#[inline]
pub(crate) const fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// The i.i.d. uniform field `U(v)` for one `(seed, replica)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformField {
    pub seed: u64,
    pub replica: u64,
    key: u64,
}

impl UniformField {
    pub fn new(seed: u64, replica: u64) -> Self {
        let key = mix64(mix64(seed ^ GOLDEN) ^ replica.wrapping_add(1).wrapping_mul(REPLICA_MUL));
        Self { seed, replica, key }
    }

    /// Hash prefix for one row of one stream; cheap repeated column access.
    #[inline]
    pub fn row(&self, row: i64, stream: Stream) -> RowUniforms {
        let r = (row as u64).wrapping_mul(ROW_MUL) ^ stream.id().wrapping_mul(STREAM_MUL);
        RowUniforms { key: mix64(self.key ^ mix64(r)) }
    }

    /// Uniform value in `[0, 1)` at `(row, col)` of `stream`.
    #[inline]
    pub fn uniform(&self, row: i64, col: i64, stream: Stream) -> f64 {
        self.row(row, stream).at(col)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RowUniforms {
    key: u64,
}

impl RowUniforms {
    #[inline]
    pub fn bits(&self, col: i64) -> u64 {
        mix64(self.key ^ mix64((col as u64).wrapping_mul(COL_MUL).wrapping_add(GOLDEN)))
    }

    #[inline]
    pub fn at(&self, col: i64) -> f64 {
        to_unit(self.bits(col))
    }
}

/// Derives an independent child seed, e.g. one per starting color.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix64(seed ^ mix64(salt.wrapping_mul(GOLDEN).wrapping_add(0x5851_f42d_4c95_7f2d)))
}
