//! Box events for the block renormalization argument.
//!
//! Box-local coordinates `(x, h)`: `h = 0` is the lowest row of the box and
//! `h` grows along the arrows. The box holds the vertices with
//! `0 <= h < n` and `-3k <= x <= 3k` (sides inclusive) and `x + h` even.
//! A box anchored at `(t_b, z_b)` maps `(x, h)` to the absolute vertex
//! `(t_b - h, z_b + x)`. `I = [-2k, 2k]` sits at `h = 0`; the targets
//! `F1 = [-3k, -k]` and `F2 = [k, 3k]` sit in the row `h = n` just above the
//! box. A path counts if every vertex except the last lies in the box.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Arrow, ArrowSource, LazyArrows, ModelParams};
use crate::rng::{Stream, UniformField};
use crate::stats::{normal_cdf, proportion};

/// Upper bound on the oriented site percolation threshold used by the
/// certificate.
pub const ORIENTED_SITE_PC_BOUND: f64 = 0.819;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub k: usize,
    pub n: usize,
}

impl BoxSpec {
    pub fn new(k: usize, n: usize) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::InvalidParams(format!("box needs k >= 1 and n >= 1, got k = {k}, n = {n}")));
        }
        Ok(Self { k, n })
    }

    fn k(&self) -> i64 {
        self.k as i64
    }

    pub fn half_width(&self) -> i64 {
        3 * self.k()
    }

    pub fn in_box(&self, x: i64, h: usize) -> bool {
        h < self.n && x.abs() <= self.half_width() && (x + h as i64) % 2 == 0
    }

    /// Start offsets in `I`, left to right.
    pub fn start_offsets(&self) -> Vec<i64> {
        (-2 * self.k()..=2 * self.k()).filter(|x| x % 2 == 0).collect()
    }

    pub fn in_f1(&self, x: i64) -> bool {
        (-3 * self.k()..=-self.k()).contains(&x)
    }

    pub fn in_f2(&self, x: i64) -> bool {
        (self.k()..=3 * self.k()).contains(&x)
    }

    fn check_start(&self, v: i64) -> Result<()> {
        if v.abs() > 2 * self.k() || v % 2 != 0 {
            return Err(Error::OutOfRange { what: format!("start interval [-{0}, {0}] (even offsets)", 2 * self.k), value: v });
        }
        Ok(())
    }
}

/// A box placed on the lattice over an arrow source.
#[derive(Debug, Clone, Copy)]
pub struct PlacedBox<'a, S: ?Sized> {
    pub spec: BoxSpec,
    pub source: &'a S,
    pub base_row: i64,
    pub base_col: i64,
}

impl<'a, S: ArrowSource + ?Sized> PlacedBox<'a, S> {
    pub fn new(spec: BoxSpec, source: &'a S, base_row: i64, base_col: i64) -> Self {
        Self { spec, source, base_row, base_col }
    }

    #[inline]
    pub fn arrow(&self, x: i64, h: usize) -> Arrow {
        self.source.arrow(self.base_row - h as i64, self.base_col + x)
    }

    fn column_index(&self, x: i64) -> usize {
        (x + self.spec.half_width()) as usize
    }

    /// For every box vertex, whether some in-box path from it reaches the
    /// target set in row `n`. Indexed `[h][x + 3k]`.
    fn backward_reach(&self, target: impl Fn(i64) -> bool) -> Vec<Vec<bool>> {
        let width = 2 * self.spec.half_width() as usize + 1;
        let n = self.spec.n;
        let mut good = vec![vec![false; width]; n + 1];
        for x in -self.spec.half_width()..=self.spec.half_width() {
            good[n][self.column_index(x)] = target(x) && (x + n as i64) % 2 == 0;
        }
        for h in (0..n).rev() {
            for x in -self.spec.half_width()..=self.spec.half_width() {
                if !self.spec.in_box(x, h) {
                    continue;
                }
                let a = self.arrow(x, h);
                let hit = |dx: i64| {
                    let y = x + dx;
                    y.abs() <= self.spec.half_width() && good[h + 1][self.column_index(y)]
                };
                good[h][self.column_index(x)] = (a.left() && hit(-1)) || (a.right() && hit(1));
            }
        }
        good
    }

    /// `A_v` for every `v` in `I`, in the order of [`BoxSpec::start_offsets`].
    pub fn events(&self) -> Vec<bool> {
        let to_f1 = self.backward_reach(|x| self.spec.in_f1(x));
        let to_f2 = self.backward_reach(|x| self.spec.in_f2(x));
        self.spec
            .start_offsets()
            .into_iter()
            .map(|v| to_f1[0][self.column_index(v)] && to_f2[0][self.column_index(v)])
            .collect()
    }

    /// Vertices of row `n` reached from `v` by in-box paths, by forward
    /// propagation.
    pub fn forward_reach(&self, v: i64) -> Vec<i64> {
        let mut front = vec![v];
        for h in 0..self.spec.n {
            let mut next = Vec::new();
            for &x in &front {
                if !self.spec.in_box(x, h) {
                    continue;
                }
                let a = self.arrow(x, h);
                if a.left() {
                    next.push(x - 1);
                }
                if a.right() {
                    next.push(x + 1);
                }
            }
            next.sort_unstable();
            next.dedup();
            front = next;
        }
        front
    }

    /// `A_v` by forward propagation.
    pub fn event_forward(&self, v: i64) -> Result<bool> {
        self.spec.check_start(v)?;
        let top = self.forward_reach(v);
        Ok(top.iter().any(|&x| self.spec.in_f1(x)) && top.iter().any(|&x| self.spec.in_f2(x)))
    }
}

/// Walk positions `x_0, x_1, ...` in box-local columns; shorter than `n + 1`
/// entries when the walk dies at a `Dot`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtremalPaths {
    pub leftmost: Vec<i64>,
    pub rightmost: Vec<i64>,
    /// Fair coin at every `Both` vertex.
    pub random: Vec<i64>,
}

/// Follows the arrows from `start` for `steps` steps with three rules for a
/// `Both` vertex: go left, go right, or toss the tie-break coin.
pub fn extremal_paths<S: ArrowSource + ?Sized>(
    placed: &PlacedBox<'_, S>,
    tie_break: &UniformField,
    start: i64,
    steps: usize,
) -> ExtremalPaths {
    let walk = |rule: &dyn Fn(i64, usize) -> bool| {
        let mut path = vec![start];
        let mut x = start;
        for h in 0..steps {
            let a = placed.arrow(x, h);
            let go_right = match a {
                Arrow::Dot => break,
                Arrow::NW => false,
                Arrow::NE => true,
                Arrow::Both => rule(x, h),
            };
            x += if go_right { 1 } else { -1 };
            path.push(x);
        }
        path
    };
    let coin = |x: i64, h: usize| {
        tie_break.uniform(placed.base_row - h as i64, placed.base_col + x, Stream::TieBreak) < 0.5
    };
    ExtremalPaths { leftmost: walk(&|_, _| false), rightmost: walk(&|_, _| true), random: walk(&coin) }
}

/// Whether a walk stays in the box and ends in the target set.
pub fn walk_hits(spec: &BoxSpec, path: &[i64], target: impl Fn(i64) -> bool) -> bool {
    path.len() == spec.n + 1
        && path[..spec.n].iter().enumerate().all(|(h, &x)| spec.in_box(x, h))
        && target(path[spec.n])
}

/// The walk event bounding `A_v` from below: the fair-coin walk reaches `F1`
/// and the rightmost walk reaches `F2`, both inside the box.
pub fn walk_event(spec: &BoxSpec, paths: &ExtremalPaths) -> bool {
    walk_hits(spec, &paths.random, |x| spec.in_f1(x)) && walk_hits(spec, &paths.rightmost, |x| spec.in_f2(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxEventEstimate {
    pub v_offset: i64,
    pub p_hat: f64,
    pub stderr: f64,
    pub replicas: u64,
    pub params: ModelParams,
}

fn replica_events(params: &ModelParams, spec: &BoxSpec, seed: u64, replica: u64) -> Vec<bool> {
    let arrows = LazyArrows::new(UniformField::new(seed, replica), params);
    PlacedBox::new(*spec, &arrows, 0, 0).events()
}

/// Per-start success counts over replicas, plus the count of `A_{-2k}` and
/// `A_{2k}` holding together.
fn event_counts(params: &ModelParams, spec: &BoxSpec, replicas: u64, seed: u64) -> (Vec<u64>, u64) {
    let per: Vec<Vec<bool>> =
        (0..replicas).into_par_iter().map(|r| replica_events(params, spec, seed, r)).collect();
    let m = spec.start_offsets().len();
    let mut counts = vec![0u64; m];
    let mut ends = 0;
    for ev in &per {
        for (c, &e) in counts.iter_mut().zip(ev) {
            *c += e as u64;
        }
        ends += (ev[0] && ev[m - 1]) as u64;
    }
    (counts, ends)
}

/// Monte Carlo estimate of `P(A_v)`.
pub fn box_event_mc(
    v_offset: i64,
    spec: &BoxSpec,
    params: &ModelParams,
    replicas: u64,
    seed: u64,
) -> Result<BoxEventEstimate> {
    spec.check_start(v_offset)?;
    if replicas == 0 {
        return Err(Error::InvalidParams("replica count must be positive".into()));
    }
    let idx = spec.start_offsets().iter().position(|&v| v == v_offset).expect("checked start");
    let hits = (0..replicas)
        .into_par_iter()
        .filter(|&r| {
            let arrows = LazyArrows::new(UniformField::new(seed, r), params);
            PlacedBox::new(*spec, &arrows, 0, 0).events()[idx]
        })
        .count() as u64;
    let (p_hat, stderr) = proportion(hits, replicas);
    Ok(BoxEventEstimate { v_offset, p_hat, stderr, replicas, params: *params })
}

/// Normal approximations for the two walks with `k = n delta / 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltBound {
    pub n: usize,
    pub delta: f64,
    pub k: f64,
    /// `sqrt(n) delta / 4`.
    pub a: f64,
    /// `a / sqrt(1 - delta^2)`.
    pub b: f64,
    /// Symmetric walk ends in `[-k, k]`.
    pub p_sym_interval: f64,
    /// Symmetric walk never goes below `-k`.
    pub p_sym_barrier: f64,
    /// Drifted walk ends in `[3k, 5k]`.
    pub p_drift_interval: f64,
    /// Drifted walk never goes above `5k`.
    pub p_drift_barrier: f64,
    /// `1 - sum of the four failure probabilities`.
    pub intersection: f64,
}

pub fn clt_box_bound(n: usize, delta: f64) -> Result<CltBound> {
    let k = n as f64 * delta / 4.0;
    if !(0.0..=1.0).contains(&delta) || k < 1.0 {
        return Err(Error::InvalidParams(format!("need n delta / 4 >= 1, got n = {n}, delta = {delta}")));
    }
    let a = (n as f64).sqrt() * delta / 4.0;
    let var = 1.0 - delta * delta;
    let b = if var > 0.0 { a / var.sqrt() } else { f64::INFINITY };
    let p1 = 2.0 * normal_cdf(a) - 1.0;
    let p2 = 1.0 - 2.0 * normal_cdf(-a);
    let p3 = 2.0 * normal_cdf(b) - 1.0;
    let p4 = 1.0 - 2.0 * (1.0 - normal_cdf(b));
    let intersection = 1.0 - ((1.0 - p1) + (1.0 - p2) + (1.0 - p3) + (1.0 - p4));
    Ok(CltBound {
        n,
        delta,
        k,
        a,
        b,
        p_sym_interval: p1,
        p_sym_barrier: p2,
        p_drift_interval: p3,
        p_drift_barrier: p4,
        intersection,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenormCertificate {
    pub params: ModelParams,
    pub spec: BoxSpec,
    pub estimates: Vec<BoxEventEstimate>,
    pub min_p_hat: f64,
    pub min_v_offset: i64,
    pub min_stderr: f64,
    /// `P(A_{-2k} and A_{2k})`.
    pub p_both_ends: f64,
    pub p_both_ends_stderr: f64,
    pub threshold: f64,
    /// `min_p_hat - 2 min_stderr > threshold`.
    pub pass: bool,
}

/// Estimates `P(A_v)` for every `v` in `I` on shared replicas and compares
/// the minimum with the oriented site threshold bound.
pub fn renorm_certificate(params: &ModelParams, spec: &BoxSpec, replicas: u64, seed: u64) -> Result<RenormCertificate> {
    if replicas == 0 {
        return Err(Error::InvalidParams("replica count must be positive".into()));
    }
    let (counts, ends) = event_counts(params, spec, replicas, seed);
    let estimates: Vec<BoxEventEstimate> = spec
        .start_offsets()
        .into_iter()
        .zip(&counts)
        .map(|(v, &c)| {
            let (p_hat, stderr) = proportion(c, replicas);
            BoxEventEstimate { v_offset: v, p_hat, stderr, replicas, params: *params }
        })
        .collect();
    let worst = estimates
        .iter()
        .min_by(|a, b| a.p_hat.total_cmp(&b.p_hat))
        .copied()
        .expect("nonempty start interval");
    let (p_both_ends, p_both_ends_stderr) = proportion(ends, replicas);
    Ok(RenormCertificate {
        params: *params,
        spec: *spec,
        min_p_hat: worst.p_hat,
        min_v_offset: worst.v_offset,
        min_stderr: worst.stderr,
        p_both_ends,
        p_both_ends_stderr,
        threshold: ORIENTED_SITE_PC_BOUND,
        pass: worst.p_hat - 2.0 * worst.stderr > ORIENTED_SITE_PC_BOUND,
        estimates,
    })
}

/// Tries `epsilon = 2^-j` for `j = 3, 4, ...` up to `2^-max_power` and
/// returns the largest one whose certificate passes.
pub fn positive_epsilon_certificate(
    delta: f64,
    q: crate::lattice::Colors,
    spec: &BoxSpec,
    replicas: u64,
    seed: u64,
    max_power: u32,
) -> Result<Option<RenormCertificate>> {
    for j in 3..=max_power {
        let params = ModelParams::new(delta, (0.5f64).powi(j as i32), q)?;
        let cert = renorm_certificate(&params, spec, replicas, seed)?;
        if cert.pass {
            return Ok(Some(cert));
        }
    }
    Ok(None)
}
