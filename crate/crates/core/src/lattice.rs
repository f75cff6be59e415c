//! Lattice geometry, the arrow law and arrow fields.
//!
//! Coordinates are absolute `(t, z)` with `t` the color time (rows grow
//! downwards) and `z` the column. A vertex exists iff `z + t` has the window's
//! parity. Arrows at `(t, z)` point to the row above, `t - 1`: `NW` to
//! `z - 1`, `NE` to `z + 1`. Genealogy paths therefore run towards smaller `t`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::{Stream, UniformField};

/// Number of colors: finite `q >= 2` or the partition-valued `q = infinity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Colors {
    Finite(u32),
    Infinite,
}

impl Colors {
    pub fn finite(self) -> Option<u32> {
        match self {
            Colors::Finite(q) => Some(q),
            Colors::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Colors::Infinite)
    }
}

impl fmt::Display for Colors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Colors::Finite(q) => write!(f, "{q}"),
            Colors::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Colors {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinite") {
            return Ok(Colors::Infinite);
        }
        s.parse::<u32>()
            .map(Colors::Finite)
            .map_err(|_| Error::InvalidParams(format!("q must be an integer >= 2 or 'inf', got '{s}'")))
    }
}

impl Serialize for Colors {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Colors::Finite(q) => s.serialize_u32(*q),
            Colors::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Colors {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(q) => Ok(Colors::Finite(q)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `(delta, epsilon, q)`. Validated at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ModelParams {
    pub delta: f64,
    pub epsilon: f64,
    pub q: Colors,
}

#[derive(Deserialize)]
struct RawParams {
    delta: f64,
    epsilon: f64,
    q: Colors,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        ModelParams::new(r.delta, r.epsilon, r.q)
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParams(format!("{name} = {p} is not in [0, 1]")));
    }
    Ok(())
}

impl ModelParams {
    pub fn new(delta: f64, epsilon: f64, q: Colors) -> Result<Self> {
        check_probability("delta", delta)?;
        check_probability("epsilon", epsilon)?;
        if let Colors::Finite(q) = q {
            if q < 2 {
                return Err(Error::InvalidParams(format!("q = {q} must be at least 2")));
            }
        }
        Ok(Self { delta, epsilon, q })
    }

    /// Same `delta` and `q`, different `epsilon`.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.delta, epsilon, self.q)
    }

    pub fn law(&self) -> ArrowLaw {
        ArrowLaw::new(self.delta, self.epsilon)
    }
}

/// Returns `((1-delta)/2, (1-delta)/2, delta(1-epsilon), delta*epsilon)` in
/// the order `(NW, NE, Both, Dot)`.
pub fn arrow_probabilities(params: &ModelParams) -> [f64; 4] {
    params.law().as_array()
}

/// The one-vertex arrow distribution together with its threshold coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrowLaw {
    pub nw: f64,
    pub ne: f64,
    pub both: f64,
    pub dot: f64,
    single_cut: f64,
    both_cut: f64,
    dot_cut: f64,
}

impl ArrowLaw {
    pub fn new(delta: f64, epsilon: f64) -> Self {
        let single = (1.0 - delta) / 2.0;
        Self {
            nw: single,
            ne: single,
            both: delta * (1.0 - epsilon),
            dot: delta * epsilon,
            single_cut: single,
            both_cut: 1.0 - delta,
            dot_cut: 1.0 - delta * epsilon,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.nw, self.ne, self.both, self.dot]
    }

    pub fn prob(&self, a: Arrow) -> f64 {
        match a {
            Arrow::NW => self.nw,
            Arrow::NE => self.ne,
            Arrow::Both => self.both,
            Arrow::Dot => self.dot,
        }
    }

    /// Threshold map `[0,(1-d)/2) -> NW`, `[(1-d)/2, 1-d) -> NE`,
    /// `[1-d, 1-d*e) -> Both`, `[1-d*e, 1] -> Dot`.
    #[inline]
    pub fn arrow(&self, u: f64) -> Arrow {
        if u < self.single_cut {
            Arrow::NW
        } else if u < self.both_cut {
            Arrow::NE
        } else if u < self.dot_cut {
            Arrow::Both
        } else {
            Arrow::Dot
        }
    }
}

/// Maps a uniform through the threshold coupling. Raising `epsilon` with `u`
/// fixed can only turn `Both` into `Dot`.
pub fn arrow_from_uniform(u: f64, params: &ModelParams) -> Result<Arrow> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::UniformOutOfRange(u));
    }
    Ok(params.law().arrow(u))
}

/// Outgoing arrow configuration of a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Arrow {
    NW = 0,
    NE = 1,
    Both = 2,
    /// No arrows: bulk nucleation.
    Dot = 3,
}

impl Arrow {
    pub const ALL: [Arrow; 4] = [Arrow::NW, Arrow::NE, Arrow::Both, Arrow::Dot];

    #[inline]
    pub fn left(self) -> bool {
        matches!(self, Arrow::NW | Arrow::Both)
    }

    #[inline]
    pub fn right(self) -> bool {
        matches!(self, Arrow::NE | Arrow::Both)
    }

    /// Number of outgoing arrows.
    pub fn degree(self) -> u32 {
        self.left() as u32 + self.right() as u32
    }

    /// Subset order on arrow sets (`Dot` is the empty set).
    pub fn is_subset_of(self, other: Arrow) -> bool {
        (!self.left() || other.left()) && (!self.right() || other.right())
    }

    #[inline]
    fn from_bits(b: u64) -> Arrow {
        match b & 3 {
            0 => Arrow::NW,
            1 => Arrow::NE,
            2 => Arrow::Both,
            _ => Arrow::Dot,
        }
    }
}

/// Anything that can report the arrow at an absolute vertex.
pub trait ArrowSource {
    fn arrow(&self, t: i64, z: i64) -> Arrow;
}

/// Arrows computed on demand from a uniform field; covers the whole lattice.
#[derive(Debug, Clone, Copy)]
pub struct LazyArrows {
    pub field: UniformField,
    law: ArrowLaw,
}

impl LazyArrows {
    pub fn new(field: UniformField, params: &ModelParams) -> Self {
        Self { field, law: params.law() }
    }
}

impl ArrowSource for LazyArrows {
    #[inline]
    fn arrow(&self, t: i64, z: i64) -> Arrow {
        self.law.arrow(self.field.uniform(t, z, Stream::Arrow))
    }
}

impl<S: ArrowSource + ?Sized> ArrowSource for &S {
    fn arrow(&self, t: i64, z: i64) -> Arrow {
        (**self).arrow(t, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Boundary {
    Periodic,
    Free,
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "periodic" => Ok(Boundary::Periodic),
            "free" => Ok(Boundary::Free),
            other => Err(Error::InvalidWindow(format!("unknown boundary '{other}'"))),
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Periodic => "periodic",
            Boundary::Free => "free",
        })
    }
}

/// A finite space-time window: columns `0..width`, rows
/// `first_row..first_row + height`. Each row holds `width / 2` vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeWindow {
    pub width: usize,
    pub height: usize,
    pub boundary: Boundary,
    pub parity_offset: u8,
    #[serde(default)]
    pub first_row: i64,
}

impl LatticeWindow {
    pub fn new(width: usize, height: usize, boundary: Boundary) -> Result<Self> {
        Self::with_origin(width, height, boundary, 0, 0)
    }

    pub fn with_origin(
        width: usize,
        height: usize,
        boundary: Boundary,
        parity_offset: u8,
        first_row: i64,
    ) -> Result<Self> {
        if width == 0 || width % 2 != 0 {
            return Err(Error::InvalidWindow(format!("width {width} must be even and positive")));
        }
        if height == 0 {
            return Err(Error::InvalidWindow("height must be positive".into()));
        }
        if parity_offset > 1 {
            return Err(Error::InvalidWindow(format!("parity offset {parity_offset} must be 0 or 1")));
        }
        Ok(Self { width, height, boundary, parity_offset, first_row })
    }

    #[inline]
    pub fn row_len(&self) -> usize {
        self.width / 2
    }

    pub fn rows(&self) -> std::ops::Range<i64> {
        self.first_row..self.first_row + self.height as i64
    }

    pub fn last_row(&self) -> i64 {
        self.first_row + self.height as i64 - 1
    }

    /// Column of vertex 0 in row `t` (0 or 1).
    #[inline]
    pub fn row_offset(&self, t: i64) -> usize {
        (self.parity_offset as i64 + t).rem_euclid(2) as usize
    }

    #[inline]
    pub fn column(&self, t: i64, i: usize) -> i64 {
        (2 * i + self.row_offset(t)) as i64
    }

    /// Index of column `z` in row `t`, or `None` for wrong parity or (free
    /// boundary) out of range. Periodic windows wrap `z`.
    pub fn index(&self, t: i64, z: i64) -> Option<usize> {
        let z = match self.boundary {
            Boundary::Periodic => z.rem_euclid(self.width as i64),
            Boundary::Free => {
                if z < 0 || z >= self.width as i64 {
                    return None;
                }
                z
            }
        };
        let off = self.row_offset(t) as i64;
        if (z - off) % 2 != 0 {
            return None;
        }
        Some(((z - off) / 2) as usize)
    }

    #[inline]
    fn wrap(&self, j: isize) -> Option<usize> {
        let m = self.row_len() as isize;
        match self.boundary {
            Boundary::Periodic => Some(j.rem_euclid(m) as usize),
            Boundary::Free => (0..m).contains(&j).then_some(j as usize),
        }
    }

    /// Index in row `t - 1` of the upper-left neighbor of vertex `i` in row `t`.
    #[inline]
    pub fn up_left(&self, t: i64, i: usize) -> Option<usize> {
        self.wrap(i as isize - 1 + self.row_offset(t) as isize)
    }

    /// Index in row `t - 1` of the upper-right neighbor.
    #[inline]
    pub fn up_right(&self, t: i64, i: usize) -> Option<usize> {
        self.wrap(i as isize + self.row_offset(t) as isize)
    }

    pub fn contains_row(&self, t: i64) -> bool {
        self.rows().contains(&t)
    }
}

/// One row of arrows, packed two bits per vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrowRow {
    words: Vec<u64>,
    len: usize,
}

impl ArrowRow {
    pub fn filled(len: usize, a: Arrow) -> Self {
        let pattern = (0..32).fold(0u64, |w, k| w | ((a as u64) << (2 * k)));
        Self { words: vec![pattern; len.div_ceil(32)], len }
    }

    pub fn from_arrows(arrows: &[Arrow]) -> Self {
        let mut row = Self::filled(arrows.len(), Arrow::NW);
        for (i, &a) in arrows.iter().enumerate() {
            row.set(i, a);
        }
        row
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> Arrow {
        debug_assert!(i < self.len);
        Arrow::from_bits(self.words[i / 32] >> (2 * (i % 32)))
    }

    #[inline]
    pub fn set(&mut self, i: usize, a: Arrow) {
        debug_assert!(i < self.len);
        let w = &mut self.words[i / 32];
        let sh = 2 * (i % 32);
        *w = (*w & !(3u64 << sh)) | ((a as u64) << sh);
    }

    pub fn iter(&self) -> impl Iterator<Item = Arrow> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }
}

/// Arrows over a whole window, row-major by time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrowField {
    pub window: LatticeWindow,
    rows: Vec<ArrowRow>,
}

impl ArrowField {
    pub fn filled(window: LatticeWindow, a: Arrow) -> Self {
        let rows = (0..window.height).map(|_| ArrowRow::filled(window.row_len(), a)).collect();
        Self { window, rows }
    }

    pub fn from_rows(window: LatticeWindow, rows: Vec<ArrowRow>) -> Result<Self> {
        if rows.len() != window.height || rows.iter().any(|r| r.len() != window.row_len()) {
            return Err(Error::Misaligned("row count or row length does not match the window".into()));
        }
        Ok(Self { window, rows })
    }

    pub fn row(&self, t: i64) -> &ArrowRow {
        &self.rows[(t - self.window.first_row) as usize]
    }

    pub fn row_mut(&mut self, t: i64) -> &mut ArrowRow {
        &mut self.rows[(t - self.window.first_row) as usize]
    }

    pub fn get(&self, t: i64, i: usize) -> Arrow {
        self.row(t).get(i)
    }

    pub fn set(&mut self, t: i64, i: usize, a: Arrow) {
        self.row_mut(t).set(i, a)
    }

    pub fn rows(&self) -> &[ArrowRow] {
        &self.rows
    }

    /// Arrow at absolute `(t, z)`; `None` outside the window.
    pub fn at(&self, t: i64, z: i64) -> Option<Arrow> {
        if !self.window.contains_row(t) {
            return None;
        }
        self.window.index(t, z).map(|i| self.get(t, i))
    }
}

impl ArrowSource for ArrowField {
    fn arrow(&self, t: i64, z: i64) -> Arrow {
        self.at(t, z).unwrap_or_else(|| {
            debug_assert!(false, "vertex ({t}, {z}) is not in the window");
            Arrow::Dot
        })
    }
}

/// Samples one arrow row of `window` through the threshold coupling.
pub fn sample_arrow_row(field: &UniformField, law: &ArrowLaw, window: &LatticeWindow, t: i64) -> ArrowRow {
    let ru = field.row(t, Stream::Arrow);
    let mut row = ArrowRow::filled(window.row_len(), Arrow::NW);
    for i in 0..window.row_len() {
        row.set(i, law.arrow(ru.at(window.column(t, i))));
    }
    row
}

/// Every vertex of the window mapped through [`arrow_from_uniform`] on the
/// arrow stream.
pub fn sample_arrow_field(field: &UniformField, params: &ModelParams, window: &LatticeWindow) -> ArrowField {
    let law = params.law();
    let rows = window.rows().map(|t| sample_arrow_row(field, &law, window, t)).collect();
    ArrowField { window: *window, rows }
}
