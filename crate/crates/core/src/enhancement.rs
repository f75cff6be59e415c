//! Enhanced arrow percolation: activation bits `lambda`, the enhancement map,
//! exact survival `Theta_n(epsilon, s)` on the cone, pivotal probabilities and
//! the derivative identities they satisfy.
//!
//! Enhancement at an activated vertex turns `Both` into `Dot` when at least
//! one of the two vertices its arrows point to is a `Dot`. It is evaluated
//! against the original arrows everywhere at once.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genealogy::{grow_from, SurvivalEstimate};
use crate::lattice::{Arrow, ArrowField, ArrowLaw, ArrowSource, LatticeWindow, LazyArrows, ModelParams};
use crate::rng::{Stream, UniformField};
use crate::stats::proportion;

/// Largest cone height accepted by the exact enhanced recursion.
pub const MAX_ENHANCED_DEPTH: usize = 16;

/// Activation bits `lambda(v) = [U(v) < s]` on the lambda stream.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaField {
    pub window: LatticeWindow,
    pub s: f64,
    rows: Vec<Vec<bool>>,
}

impl LambdaField {
    pub fn sample(field: &UniformField, s: f64, window: &LatticeWindow) -> Result<Self> {
        check_s(s)?;
        let rows = window
            .rows()
            .map(|t| {
                let ru = field.row(t, Stream::Lambda);
                (0..window.row_len()).map(|i| ru.at(window.column(t, i)) < s).collect()
            })
            .collect();
        Ok(Self { window: *window, s, rows })
    }

    pub fn constant(window: &LatticeWindow, value: bool) -> Self {
        let s = if value { 1.0 } else { 0.0 };
        Self { window: *window, s, rows: vec![vec![value; window.row_len()]; window.height] }
    }

    pub fn get(&self, t: i64, i: usize) -> bool {
        self.rows[(t - self.window.first_row) as usize][i]
    }

    pub fn set(&mut self, t: i64, i: usize, value: bool) {
        self.rows[(t - self.window.first_row) as usize][i] = value;
    }
}

fn check_s(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidParams(format!("s = {s} is not in [0, 1]")));
    }
    Ok(())
}

/// The enhancement map at one vertex given the original arrows of the two
/// vertices it points to (`None` outside the field).
#[inline]
pub fn enhanced_arrow(own: Arrow, active: bool, left: Option<Arrow>, right: Option<Arrow>) -> Arrow {
    if own == Arrow::Both && active && (left == Some(Arrow::Dot) || right == Some(Arrow::Dot)) {
        Arrow::Dot
    } else {
        own
    }
}

/// Applies the enhancement everywhere at once. Vertices of the first row have
/// no targets inside the window and are left unchanged.
pub fn enhance(omega: &ArrowField, lambda: &LambdaField) -> Result<ArrowField> {
    let w = omega.window;
    if lambda.window != w {
        return Err(Error::Misaligned("arrow and activation windows differ".into()));
    }
    let mut out = omega.clone();
    for t in w.rows().skip(1) {
        for i in 0..w.row_len() {
            let own = omega.get(t, i);
            if own != Arrow::Both || !lambda.get(t, i) {
                continue;
            }
            let left = w.up_left(t, i).map(|j| omega.get(t - 1, j));
            let right = w.up_right(t, i).map(|j| omega.get(t - 1, j));
            out.set(t, i, enhanced_arrow(own, true, left, right));
        }
    }
    Ok(out)
}

/// Enhanced arrows computed on demand over the whole lattice.
#[derive(Debug, Clone, Copy)]
pub struct EnhancedArrows {
    pub omega: LazyArrows,
    pub field: UniformField,
    pub s: f64,
}

impl EnhancedArrows {
    pub fn new(field: UniformField, params: &ModelParams, s: f64) -> Self {
        Self { omega: LazyArrows::new(field, params), field, s }
    }

    pub fn lambda(&self, t: i64, z: i64) -> bool {
        self.field.uniform(t, z, Stream::Lambda) < self.s
    }
}

impl ArrowSource for EnhancedArrows {
    fn arrow(&self, t: i64, z: i64) -> Arrow {
        let own = self.omega.arrow(t, z);
        if own != Arrow::Both || !self.lambda(t, z) {
            return own;
        }
        enhanced_arrow(own, true, Some(self.omega.arrow(t - 1, z - 1)), Some(self.omega.arrow(t - 1, z + 1)))
    }
}

/// Law of one cone vertex: arrow probabilities and activation probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexLaw {
    pub nw: f64,
    pub ne: f64,
    pub both: f64,
    pub dot: f64,
    pub active: f64,
}

impl VertexLaw {
    pub fn new(law: &ArrowLaw, s: f64) -> Self {
        Self { nw: law.nw, ne: law.ne, both: law.both, dot: law.dot, active: s }
    }

    pub fn forced(arrow: Arrow, active: f64) -> Self {
        let p = |a: Arrow| if a == arrow { 1.0 } else { 0.0 };
        Self { nw: p(Arrow::NW), ne: p(Arrow::NE), both: p(Arrow::Both), dot: p(Arrow::Dot), active }
    }
}

/// `P(A_n)` where `A_n` asks for an enhanced path from the cone apex to level
/// `n`, with an arbitrary law at each cone vertex `(level, index)`.
///
/// State after level `l`: the set of level-`l` vertices that are reached and
/// not `Dot` (at the top level: reached). The `Dot` status of a vertex is
/// drawn while its parents are swept, since the parents' enhancement needs
/// it; its remaining type is drawn later conditionally on not being `Dot`.
pub fn enhanced_survival(n: usize, law: impl Fn(usize, usize) -> VertexLaw) -> Result<f64> {
    if n > MAX_ENHANCED_DEPTH {
        return Err(Error::StateSpaceTooLarge { n, max: MAX_ENHANCED_DEPTH });
    }
    if n == 0 {
        return Ok(1.0);
    }
    let apex_alive = 1.0 - law(0, 0).dot;
    let mut dist = vec![0.0, apex_alive];
    for l in 0..n {
        let top = l + 1 == n;
        // Key before old site i: finalized children 0..i in bits 0..i, the
        // pending child i as (reached at bit i, dot at bit i + 1), and the
        // unprocessed old sites i..=l from bit i + 2 upwards.
        let size = 1usize << (l + 3);
        let mut cur = vec![0.0; size];
        let child0_dot = law(l + 1, 0).dot;
        for (s, &p) in dist.iter().enumerate() {
            if p != 0.0 {
                cur[s << 2] += p * (1.0 - child0_dot);
                cur[(s << 2) | 2] += p * child0_dot;
            }
        }
        let mut next = vec![0.0; size];
        for i in 0..=l {
            next.iter_mut().for_each(|x| *x = 0.0);
            let v = law(l, i);
            let alive = 1.0 - v.dot;
            let child_dot = law(l + 1, i + 1).dot;
            let cond = |p: f64| if alive > 0.0 { p / alive } else { 0.0 };
            let (p_nw, p_ne, p_both) = (cond(v.nw), cond(v.ne), cond(v.both));
            let clear = !(0b111usize << i);
            for (key, &p) in cur.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let pending_reached = key >> i & 1 == 1;
                let pending_dot = key >> (i + 1) & 1 == 1;
                let old_alive = key >> (i + 2) & 1 == 1;
                let base = key & clear;
                let mut emit = |left: bool, right: bool, next_dot: bool, q: f64| {
                    if q == 0.0 {
                        return;
                    }
                    let reached = pending_reached || left;
                    let fin = reached && (top || !pending_dot);
                    let k = base | (fin as usize) << i | (right as usize) << (i + 1) | (next_dot as usize) << (i + 2);
                    next[k] += p * q;
                };
                for (next_dot, pd) in [(false, 1.0 - child_dot), (true, child_dot)] {
                    if !old_alive {
                        emit(false, false, next_dot, pd);
                        continue;
                    }
                    emit(true, false, next_dot, pd * p_nw);
                    emit(false, true, next_dot, pd * p_ne);
                    if pending_dot || next_dot {
                        emit(true, true, next_dot, pd * p_both * (1.0 - v.active));
                        emit(false, false, next_dot, pd * p_both * v.active);
                    } else {
                        emit(true, true, next_dot, pd * p_both);
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        // Finalize child l + 1 from its pending bits.
        let mut out = vec![0.0; 1 << (l + 2)];
        let last = l + 1;
        for (key, &p) in cur.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let reached = key >> last & 1 == 1;
            let dot = key >> (last + 1) & 1 == 1;
            let fin = reached && (top || !dot);
            out[(key & ((1 << last) - 1)) | (fin as usize) << last] += p;
        }
        out[0] = 0.0;
        dist = out;
    }
    Ok(dist.iter().sum())
}

/// Exact `Theta_n(epsilon, s)`.
pub fn theta_n_enh_exact(params: &ModelParams, s: f64, n: usize) -> Result<f64> {
    check_s(s)?;
    let v = VertexLaw::new(&params.law(), s);
    enhanced_survival(n, |_, _| v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Exact,
    MonteCarlo { replicas: u64, seed: u64 },
}

/// `Theta_n(epsilon, s)` exactly or by Monte Carlo over lazily enhanced
/// fields.
pub fn theta_n_enh(params: &ModelParams, s: f64, n: usize, mode: Mode) -> Result<SurvivalEstimate> {
    check_s(s)?;
    match mode {
        Mode::Exact => {
            let p = theta_n_enh_exact(params, s, n)?;
            Ok(SurvivalEstimate { n, p_hat: p, stderr: 0.0, replicas: 0, seed: None, exact: true })
        }
        Mode::MonteCarlo { replicas, seed } => {
            if replicas == 0 || n == 0 {
                return Err(Error::InvalidParams("depth and replica count must be positive".into()));
            }
            let hits = (0..replicas)
                .into_par_iter()
                .filter(|&r| {
                    let src = EnhancedArrows::new(UniformField::new(seed, r), params, s);
                    grow_from(&src, 0, 0, n).survives_to(n)
                })
                .count() as u64;
            let (p_hat, stderr) = proportion(hits, replicas);
            Ok(SurvivalEstimate { n, p_hat, stderr, replicas, seed: Some(seed), exact: false })
        }
    }
}

/// Exact pivotal probabilities at every cone vertex, `[level][index]` for
/// levels `0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotalCounts {
    pub n: usize,
    pub omega: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub omega_sum: f64,
    pub lambda_sum: f64,
}

/// The event is decreasing in the arrow set of each vertex (`Dot` removes
/// arrows and can only trigger enhancement) and in each activation bit, so
/// each pivotal probability is a difference of two conditioned survival
/// probabilities.
pub fn pivotal_counts(params: &ModelParams, s: f64, n: usize) -> Result<PivotalCounts> {
    check_s(s)?;
    if n > MAX_ENHANCED_DEPTH {
        return Err(Error::StateSpaceTooLarge { n, max: MAX_ENHANCED_DEPTH });
    }
    let base = VertexLaw::new(&params.law(), s);
    let conditioned = |at: (usize, usize), v: VertexLaw| enhanced_survival(n, |l, i| if (l, i) == at { v } else { base });
    let mut omega = Vec::with_capacity(n + 1);
    let mut lambda = Vec::with_capacity(n + 1);
    for l in 0..=n {
        let mut om = Vec::with_capacity(l + 1);
        let mut la = Vec::with_capacity(l + 1);
        for i in 0..=l {
            let both = conditioned((l, i), VertexLaw::forced(Arrow::Both, s))?;
            let dot = conditioned((l, i), VertexLaw::forced(Arrow::Dot, s))?;
            om.push((both - dot).max(0.0));
            let off = conditioned((l, i), VertexLaw { active: 0.0, ..base })?;
            let on = conditioned((l, i), VertexLaw { active: 1.0, ..base })?;
            la.push((off - on).max(0.0));
        }
        omega.push(om);
        lambda.push(la);
    }
    let omega_sum = omega.iter().flatten().sum();
    let lambda_sum = lambda.iter().flatten().sum();
    Ok(PivotalCounts { n, omega, lambda, omega_sum, lambda_sum })
}

/// Finite-difference derivative of `f` on `[0, 1]`: central where possible,
/// second-order one-sided at the ends.
pub fn derivative(f: impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    if x - h >= 0.0 && x + h <= 1.0 {
        Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
    } else if x + 2.0 * h <= 1.0 {
        Ok((-3.0 * f(x)? + 4.0 * f(x + h)? - f(x + 2.0 * h)?) / (2.0 * h))
    } else {
        Ok((3.0 * f(x)? - 4.0 * f(x - h)? + f(x - 2.0 * h)?) / (2.0 * h))
    }
}

/// Comparison of one finite-difference derivative with its pivotal formula.
/// The convergence order is read off at a coarser step, where truncation
/// error dominates rounding; at `h = 1e-4` both are near `1e-12`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub finite_difference: f64,
    pub formula: f64,
    /// Error at the requested step.
    pub error: f64,
    pub convergence_step: f64,
    /// Errors at `convergence_step` and at half of it.
    pub error_coarse: f64,
    pub error_coarse_half: f64,
    /// `error_coarse / error_coarse_half`; about 4 for a second-order scheme.
    pub ratio: f64,
    /// Ratio in `[3, 5]`, or both coarse errors at rounding level (the
    /// difference quotient is exact for low-degree polynomials).
    pub second_order: bool,
}

/// Errors below this are rounding noise for the convergence check.
pub const ROUNDING_FLOOR: f64 = 1e-12;

/// Largest step used for the convergence ratio.
pub const CONVERGENCE_STEP: f64 = 1e-2;

fn derivative_check(f: impl Fn(f64) -> Result<f64> + Copy, x: f64, h: f64, formula: f64) -> Result<DerivativeCheck> {
    let fd = derivative(f, x, h)?;
    let big = h.max(CONVERGENCE_STEP);
    let error_coarse = (derivative(f, x, big)? - formula).abs();
    let error_coarse_half = (derivative(f, x, big / 2.0)? - formula).abs();
    let ratio = if error_coarse_half > 0.0 { error_coarse / error_coarse_half } else { f64::INFINITY };
    let second_order =
        (error_coarse < ROUNDING_FLOOR && error_coarse_half < ROUNDING_FLOOR) || (3.0..=5.0).contains(&ratio);
    Ok(DerivativeCheck {
        finite_difference: fd,
        formula,
        error: (fd - formula).abs(),
        convergence_step: big,
        error_coarse,
        error_coarse_half,
        ratio,
        second_order,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RussoReport {
    pub delta: f64,
    pub epsilon: f64,
    pub s: f64,
    pub n: usize,
    pub h: f64,
    /// `dTheta/depsilon` against `-delta * sum of omega-pivotal probabilities`.
    pub epsilon_check: DerivativeCheck,
    /// `dTheta/ds` against `-sum of lambda-pivotal probabilities`.
    pub s_check: DerivativeCheck,
}

pub fn russo_check(params: &ModelParams, s: f64, n: usize, h: f64) -> Result<RussoReport> {
    if !(h > 0.0 && h < 0.25) {
        return Err(Error::InvalidParams(format!("step h = {h} must lie in (0, 0.25)")));
    }
    let piv = pivotal_counts(params, s, n)?;
    let in_eps = |e: f64| theta_n_enh_exact(&params.with_epsilon(e)?, s, n);
    let in_s = |x: f64| theta_n_enh_exact(params, x, n);
    Ok(RussoReport {
        delta: params.delta,
        epsilon: params.epsilon,
        s,
        n,
        h,
        epsilon_check: derivative_check(in_eps, params.epsilon, h, -params.delta * piv.omega_sum)?,
        s_check: derivative_check(in_s, s, h, -piv.lambda_sum)?,
    })
}

/// The coefficient `(1-s)/(d(1-e)) + 1/(d(1-e) d e) + 2s/(d e)` bounding the
/// omega-pivotal sum by the lambda-pivotal sum.
pub fn gamma(delta: f64, epsilon: f64, s: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) || !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParams(format!(
            "need 0 < delta <= 1 and 0 < epsilon < 1, got delta = {delta}, epsilon = {epsilon}"
        )));
    }
    check_s(s)?;
    let both = delta * (1.0 - epsilon);
    let dot = delta * epsilon;
    Ok((1.0 - s) / both + 1.0 / (both * dot) + 2.0 * s / dot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotalInequality {
    pub delta: f64,
    pub epsilon: f64,
    pub s: f64,
    pub n: usize,
    pub omega_sum: f64,
    pub lambda_sum: f64,
    pub gamma: f64,
    /// `omega_sum <= gamma * lambda_sum`.
    pub pass: bool,
}

pub fn pivotal_inequality_check(params: &ModelParams, s: f64, n: usize) -> Result<PivotalInequality> {
    let g = gamma(params.delta, params.epsilon, s)?;
    let piv = pivotal_counts(params, s, n)?;
    let slack = 1e-12 * (1.0 + piv.omega_sum);
    Ok(PivotalInequality {
        delta: params.delta,
        epsilon: params.epsilon,
        s,
        n,
        omega_sum: piv.omega_sum,
        lambda_sum: piv.lambda_sum,
        gamma: g,
        pass: piv.omega_sum <= g * piv.lambda_sum + slack,
    })
}
