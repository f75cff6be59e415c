//! Coupled color processes started from two initial rows and the ladder of
//! binary processes that dominate their discrepancy.
//!
//! All processes read the same arrows and the same uniform `U(v)` per vertex.
//! The fresh color is `Y(v) = palette[floor(q U(v))]`.
//!
//! * `C = [A != B]`.
//! * `C'` copies along single arrows, is 0 at `Dot`, keeps agreeing parent
//!   values at `Both`, and at a disagreeing `Both` is 0 exactly when `U(v)`
//!   falls in one designated sub-interval (the first one, or the one holding
//!   the color the special rule names).
//! * `C''` is 1 iff the vertex connects to the first row by arrows.
//! * `C*` is the same connectivity in the enhanced arrows. With the standard
//!   coupling the activation bit is `[U(v)` lies in the designated
//!   sub-interval`]`, which has probability `1/q` and makes `C' <= C*` hold
//!   pathwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{color_from_uniform, copied_value, InitialCondition};
use crate::error::{Error, Result};
use crate::genealogy::dyadic_bisect;
use crate::lattice::{sample_arrow_row, Arrow, ArrowLaw, ArrowRow, Boundary, Colors, LatticeWindow, ModelParams};
use crate::rng::{derive_seed, Stream, UniformField};
use crate::stats::proportion;

/// How activation bits of the enhanced process are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaMode {
    /// `s = 1/q`, coupled to `U(v)` through the designated sub-interval.
    Standard,
    /// Independent bits with probability `s` from the lambda stream.
    Independent(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub params: ModelParams,
    pub q: u32,
    pub lambda: LambdaMode,
    /// Color of each of the `q` sub-intervals of `[0, 1)`.
    pub palette: Vec<u32>,
}

impl CouplingConfig {
    pub fn new(params: ModelParams, lambda: LambdaMode) -> Result<Self> {
        let q = params
            .q
            .finite()
            .ok_or_else(|| Error::InvalidParams("the coupling needs a finite number of colors".into()))?;
        if let LambdaMode::Independent(s) = lambda {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidParams(format!("s = {s} is not in [0, 1]")));
            }
        }
        Ok(Self { params, q, lambda, palette: (0..q).collect() })
    }

    pub fn with_palette(mut self, palette: Vec<u32>) -> Result<Self> {
        let mut sorted = palette.clone();
        sorted.sort_unstable();
        if sorted != (0..self.q).collect::<Vec<_>>() {
            return Err(Error::InvalidParams("palette must be a permutation of 0..q".into()));
        }
        self.palette = palette;
        Ok(self)
    }

    fn slot_of(&self, color: u32) -> usize {
        self.palette.iter().position(|&c| c == color).expect("palette covers every color")
    }
}

/// One row of the coupled ladder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoupledState {
    pub row: i64,
    pub a: Vec<u32>,
    pub b: Vec<u32>,
    pub c: Vec<bool>,
    pub c_prime: Vec<bool>,
    /// Connectivity to the first row.
    pub c_second: Vec<bool>,
    pub c_star: Vec<bool>,
    /// Arrows of this row; `None` for the first row, whose vertices count as
    /// not `Dot` for the enhancement of the next row.
    pub arrows: Option<ArrowRow>,
}

impl CoupledState {
    pub fn initial(window: &LatticeWindow, a: Vec<u32>, b: Vec<u32>) -> Result<Self> {
        let n = window.row_len();
        if a.len() != n || b.len() != n {
            return Err(Error::Misaligned("initial rows do not match the window".into()));
        }
        let c: Vec<bool> = a.iter().zip(&b).map(|(x, y)| x != y).collect();
        Ok(Self {
            row: window.first_row,
            c_prime: c.clone(),
            c,
            a,
            b,
            c_second: vec![true; n],
            c_star: vec![true; n],
            arrows: None,
        })
    }

    /// `C <= C'` and `C' <= C*` (the latter only meaningful under the
    /// standard coupling) and `C* <= C''`, counted per vertex.
    pub fn violations(&self) -> Violations {
        let mut v = Violations::default();
        for i in 0..self.c.len() {
            v.c_above_c_prime += (self.c[i] && !self.c_prime[i]) as u64;
            v.c_prime_above_c_star += (self.c_prime[i] && !self.c_star[i]) as u64;
            v.c_star_above_c_second += (self.c_star[i] && !self.c_second[i]) as u64;
            v.c_mismatch += (self.c[i] != (self.a[i] != self.b[i])) as u64;
        }
        v
    }

    pub fn all_zero(&self) -> bool {
        !self.c.iter().chain(&self.c_prime).chain(&self.c_second).chain(&self.c_star).any(|&x| x)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    pub c_above_c_prime: u64,
    pub c_prime_above_c_star: u64,
    pub c_star_above_c_second: u64,
    pub c_mismatch: u64,
}

impl Violations {
    pub fn add(&mut self, o: &Violations) {
        self.c_above_c_prime += o.c_above_c_prime;
        self.c_prime_above_c_star += o.c_prime_above_c_star;
        self.c_star_above_c_second += o.c_star_above_c_second;
        self.c_mismatch += o.c_mismatch;
    }

    pub fn total(&self) -> u64 {
        self.c_above_c_prime + self.c_prime_above_c_star + self.c_star_above_c_second + self.c_mismatch
    }
}

/// Sub-interval of `U(v)` on which `C'(v) = 0` when the parents' `C'` values
/// disagree. Needs both parents.
fn zero_slot(cfg: &CouplingConfig, s: &CoupledState, l: usize, r: usize) -> usize {
    if s.c_prime[l] == s.c_prime[r] {
        return 0;
    }
    let one = if s.c_prime[r] { r } else { l };
    if !s.c[one] {
        return 0;
    }
    let (al, ar, bl, br) = (s.a[l], s.a[r], s.b[l], s.b[r]);
    if al != ar && bl == br {
        cfg.slot_of(s.b[one])
    } else if al == ar && bl != br {
        cfg.slot_of(s.a[one])
    } else {
        0
    }
}

/// Advances every process of the ladder by one row.
pub fn step_coupled(
    state: &CoupledState,
    cfg: &CouplingConfig,
    field: &UniformField,
    window: &LatticeWindow,
) -> Result<CoupledState> {
    let t = state.row + 1;
    if !window.contains_row(t) || state.a.len() != window.row_len() {
        return Err(Error::Misaligned(format!("row {} has no successor in the window", state.row)));
    }
    let law = cfg.params.law();
    let arrows = sample_arrow_row(field, &law, window, t);
    let fresh = field.row(t, Stream::FreshColor);
    let lambda_row = field.row(t, Stream::Lambda);
    let n = window.row_len();
    let mut next = CoupledState {
        row: t,
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
        c_prime: Vec::with_capacity(n),
        c_second: Vec::with_capacity(n),
        c_star: Vec::with_capacity(n),
        arrows: None,
    };
    let parent_dot = |j: Option<usize>| match (&state.arrows, j) {
        (Some(row), Some(j)) => row.get(j) == Arrow::Dot,
        _ => false,
    };
    for i in 0..n {
        let (l, r) = (window.up_left(t, i), window.up_right(t, i));
        let z = window.column(t, i);
        let x = arrows.get(i);
        let u = fresh.at(z);
        let slot = color_from_uniform(u, cfg.q) as usize;
        let y = cfg.palette[slot];
        let a = copied_value(x, l.map(|j| state.a[j]), r.map(|j| state.a[j])).unwrap_or(y);
        let b = copied_value(x, l.map(|j| state.b[j]), r.map(|j| state.b[j])).unwrap_or(y);
        let bit = |row: &[bool], j: Option<usize>| j.is_some_and(|j| row[j]);
        let (pl, pr) = (bit(&state.c_prime, l), bit(&state.c_prime, r));
        let zero = match (l, r) {
            (Some(l), Some(r)) => zero_slot(cfg, state, l, r),
            _ => 0,
        };
        let c_prime = match x {
            Arrow::Dot => false,
            Arrow::NW => pl,
            Arrow::NE => pr,
            Arrow::Both if pl == pr => pl,
            Arrow::Both => slot != zero,
        };
        let active = match cfg.lambda {
            LambdaMode::Standard => slot == zero,
            LambdaMode::Independent(s) => lambda_row.at(z) < s,
        };
        let enhanced = if x == Arrow::Both && active && (parent_dot(l) || parent_dot(r)) { Arrow::Dot } else { x };
        let connect = |row: &[bool], arrow: Arrow| (arrow.left() && bit(row, l)) || (arrow.right() && bit(row, r));
        next.a.push(a);
        next.b.push(b);
        next.c.push(a != b);
        next.c_prime.push(c_prime);
        next.c_second.push(connect(&state.c_second, x));
        next.c_star.push(connect(&state.c_star, enhanced));
    }
    next.arrows = Some(arrows);
    Ok(next)
}

/// `P(C'(v) = 1 | C'(v_l), C'(v_r))`.
pub fn cprime_transition(params: &ModelParams, left: bool, right: bool) -> Result<f64> {
    let law = params.law();
    let keep = match params.q {
        Colors::Finite(q) => (q - 1) as f64 / q as f64,
        Colors::Infinite => 1.0,
    };
    Ok(match (left, right) {
        (false, false) => 0.0,
        (false, true) => law.ne + law.both * keep,
        (true, false) => law.nw + law.both * keep,
        (true, true) => 1.0 - law.dot,
    })
}

/// Lower bound on `P(C*(v) = 1 | C*(v_l), C*(v_r))`.
pub fn cstar_lower_transition(params: &ModelParams, s: f64, left: bool, right: bool) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidParams(format!("s = {s} is not in [0, 1]")));
    }
    let law = params.law();
    Ok(match (left, right) {
        (false, false) => 0.0,
        (false, true) => law.ne + law.both * (1.0 - s),
        (true, false) => law.nw + law.both * (1.0 - s),
        (true, true) => 1.0 - law.dot,
    })
}

/// `(q - 2) / (2q - 2)`; `1/2` for infinitely many colors.
pub fn mean_field_bound(q: Colors) -> Result<f64> {
    match q {
        Colors::Finite(q) if q >= 2 => Ok((q as f64 - 2.0) / (2.0 * q as f64 - 2.0)),
        Colors::Finite(q) => Err(Error::InvalidParams(format!("q = {q} must be at least 2"))),
        Colors::Infinite => Ok(0.5),
    }
}

fn init_rows(
    cfg: &CouplingConfig,
    window: &LatticeWindow,
    inits: &(InitialCondition, InitialCondition),
    seed: u64,
    replica: u64,
) -> Result<CoupledState> {
    let fa = UniformField::new(derive_seed(seed, 0xA), replica);
    let fb = UniformField::new(derive_seed(seed, 0xB), replica);
    let a = inits.0.color_row(cfg.q, window, &fa)?.colors;
    let b = inits.1.color_row(cfg.q, window, &fb)?.colors;
    CoupledState::initial(window, a, b)
}

/// Every row of one coupled run.
pub fn run_coupled(
    cfg: &CouplingConfig,
    window: &LatticeWindow,
    inits: &(InitialCondition, InitialCondition),
    seed: u64,
    replica: u64,
) -> Result<Vec<CoupledState>> {
    let field = UniformField::new(seed, replica);
    let mut rows = vec![init_rows(cfg, window, inits, seed, replica)?];
    for _ in 1..window.height {
        let next = step_coupled(rows.last().unwrap(), cfg, &field, window)?;
        rows.push(next);
    }
    Ok(rows)
}

/// Replica-averaged densities and extinction statistics of the ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyStats {
    pub params: ModelParams,
    pub lambda: LambdaMode,
    pub width: usize,
    pub horizon: usize,
    pub replicas: u64,
    pub seed: u64,
    /// Mean density per row `0..=horizon`.
    pub density_c: Vec<f64>,
    pub density_c_prime: Vec<f64>,
    pub density_c_star: Vec<f64>,
    /// First all-zero row per replica, if any.
    pub extinction_c: Vec<Option<usize>>,
    pub extinction_c_prime: Vec<Option<usize>>,
    pub extinction_c_star: Vec<Option<usize>>,
    pub violations: Violations,
}

impl DiscrepancyStats {
    fn fraction(times: &[Option<usize>]) -> f64 {
        times.iter().filter(|t| t.is_some()).count() as f64 / times.len().max(1) as f64
    }

    pub fn extinct_fraction_c(&self) -> f64 {
        Self::fraction(&self.extinction_c)
    }

    pub fn extinct_fraction_c_prime(&self) -> f64 {
        Self::fraction(&self.extinction_c_prime)
    }

    pub fn extinct_fraction_c_star(&self) -> f64 {
        Self::fraction(&self.extinction_c_star)
    }
}

struct ReplicaTrace {
    density: [Vec<f64>; 3],
    extinction: [Option<usize>; 3],
    violations: Violations,
}

fn trace_replica(
    cfg: &CouplingConfig,
    window: &LatticeWindow,
    inits: &(InitialCondition, InitialCondition),
    seed: u64,
    replica: u64,
) -> Result<ReplicaTrace> {
    let field = UniformField::new(seed, replica);
    let mut state = init_rows(cfg, window, inits, seed, replica)?;
    let rows = window.height;
    let n = window.row_len() as f64;
    let mut trace = ReplicaTrace {
        density: [vec![0.0; rows], vec![0.0; rows], vec![0.0; rows]],
        extinction: [None; 3],
        violations: Violations::default(),
    };
    for h in 0..rows {
        if h > 0 {
            state = step_coupled(&state, cfg, &field, window)?;
        }
        trace.violations.add(&state.violations());
        for (k, row) in [&state.c, &state.c_prime, &state.c_star].into_iter().enumerate() {
            let ones = row.iter().filter(|&&x| x).count();
            trace.density[k][h] = ones as f64 / n;
            if ones == 0 && trace.extinction[k].is_none() {
                trace.extinction[k] = Some(h);
            }
        }
        if state.all_zero() {
            break;
        }
    }
    Ok(trace)
}

/// Runs the coupled ladder on a periodic window of the given width for
/// `horizon` steps.
pub fn extinction_experiment(
    cfg: &CouplingConfig,
    width: usize,
    horizon: usize,
    replicas: u64,
    seed: u64,
    inits: &(InitialCondition, InitialCondition),
) -> Result<DiscrepancyStats> {
    if replicas == 0 {
        return Err(Error::InvalidParams("replica count must be positive".into()));
    }
    let window = LatticeWindow::new(width, horizon + 1, Boundary::Periodic)?;
    let traces: Vec<ReplicaTrace> = (0..replicas)
        .into_par_iter()
        .map(|r| trace_replica(cfg, &window, inits, seed, r))
        .collect::<Result<_>>()?;
    let rows = horizon + 1;
    let mut density = [vec![0.0; rows], vec![0.0; rows], vec![0.0; rows]];
    let mut violations = Violations::default();
    for tr in &traces {
        for k in 0..3 {
            for h in 0..rows {
                density[k][h] += tr.density[k][h];
            }
        }
        violations.add(&tr.violations);
    }
    for d in density.iter_mut() {
        d.iter_mut().for_each(|x| *x /= replicas as f64);
    }
    let [density_c, density_c_prime, density_c_star] = density;
    Ok(DiscrepancyStats {
        params: cfg.params,
        lambda: cfg.lambda,
        width,
        horizon,
        replicas,
        seed,
        density_c,
        density_c_prime,
        density_c_star,
        extinction_c: traces.iter().map(|t| t.extinction[0]).collect(),
        extinction_c_prime: traces.iter().map(|t| t.extinction[1]).collect(),
        extinction_c_star: traces.iter().map(|t| t.extinction[2]).collect(),
        violations,
    })
}

/// Counts of `(observations, ones)` of `C'(v)` for each parent pattern
/// `(left, right)` indexed `2 * left + right`, over every vertex below the
/// first row.
pub fn cprime_transition_counts(
    cfg: &CouplingConfig,
    width: usize,
    rows: usize,
    replicas: u64,
    seed: u64,
    inits: &(InitialCondition, InitialCondition),
) -> Result<[(u64, u64); 4]> {
    let window = LatticeWindow::new(width, rows, Boundary::Periodic)?;
    let per: Vec<[(u64, u64); 4]> = (0..replicas)
        .into_par_iter()
        .map(|rep| -> Result<[(u64, u64); 4]> {
            let traj = run_coupled(cfg, &window, inits, seed, rep)?;
            let mut counts = [(0u64, 0u64); 4];
            for pair in traj.windows(2) {
                let (prev, cur) = (&pair[0], &pair[1]);
                for i in 0..window.row_len() {
                    let l = window.up_left(cur.row, i).unwrap();
                    let r = window.up_right(cur.row, i).unwrap();
                    let k = 2 * prev.c_prime[l] as usize + prev.c_prime[r] as usize;
                    counts[k].0 += 1;
                    counts[k].1 += cur.c_prime[i] as u64;
                }
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let mut total = [(0u64, 0u64); 4];
    for c in &per {
        for k in 0..4 {
            total[k].0 += c[k].0;
            total[k].1 += c[k].1;
        }
    }
    Ok(total)
}

/// One run of the stand-alone `C'` kernel from the all-ones row; returns the
/// first all-zero row, if reached by `horizon`.
pub fn cprime_extinction_time(law: &ArrowLaw, q: u32, width: usize, horizon: usize, seed: u64, replica: u64) -> Result<Option<usize>> {
    let window = LatticeWindow::new(width, horizon + 1, Boundary::Periodic)?;
    let field = UniformField::new(seed, replica);
    let n = window.row_len();
    let cut = 1.0 / q as f64;
    let mut row = vec![true; n];
    let mut next = vec![false; n];
    for t in 1..=horizon as i64 {
        let arrows = sample_arrow_row(&field, law, &window, t);
        let fresh = field.row(t, Stream::FreshColor);
        let mut any = false;
        for i in 0..n {
            let pl = row[window.up_left(t, i).unwrap()];
            let pr = row[window.up_right(t, i).unwrap()];
            next[i] = match arrows.get(i) {
                Arrow::Dot => false,
                Arrow::NW => pl,
                Arrow::NE => pr,
                Arrow::Both if pl == pr => pl,
                Arrow::Both => fresh.at(window.column(t, i)) >= cut,
            };
            any |= next[i];
        }
        std::mem::swap(&mut row, &mut next);
        if !any {
            return Ok(Some(t as usize));
        }
    }
    Ok(None)
}

/// Bracket for the smallest `epsilon` at which the `C'` kernel dies out by
/// the horizon with frequency at least `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityEstimate {
    pub delta: f64,
    pub q: u32,
    pub width: usize,
    pub horizon: usize,
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub extinction_target: f64,
    pub replicas: u64,
    pub seed: u64,
}

/// Bisection in `epsilon` with the uniform field shared across evaluations;
/// the kernel is monotone in its inputs, so extinction is monotone in
/// `epsilon` on every replica.
pub fn estimate_epsilon_c_prime(
    delta: f64,
    q: u32,
    width: usize,
    horizon: usize,
    replicas: u64,
    extinction_target: f64,
    seed: u64,
) -> Result<ErgodicityEstimate> {
    if replicas == 0 || q < 2 {
        return Err(Error::InvalidParams("need replicas >= 1 and q >= 2".into()));
    }
    let z = 1.96;
    let extinct = |eps: f64| -> Result<(f64, f64)> {
        let law = ModelParams::new(delta, eps, Colors::Finite(q))?.law();
        let hits = (0..replicas)
            .into_par_iter()
            .map(|r| cprime_extinction_time(&law, q, width, horizon, seed, r).map(|t| t.is_some() as u64))
            .collect::<Result<Vec<u64>>>()?
            .into_iter()
            .sum();
        Ok(proportion(hits, replicas))
    };
    let (eps_lo, eps_hi) = dyadic_bisect(crate::genealogy::BISECTION_BITS, |e| Ok(extinct(e)?.0 < extinction_target))?;
    let ci_lo = dyadic_bisect(crate::genealogy::BISECTION_BITS, |e| {
        let (p, se) = extinct(e)?;
        Ok(p + z * se < extinction_target)
    })
    .map_or(0.0, |b| b.0);
    let ci_hi = dyadic_bisect(crate::genealogy::BISECTION_BITS, |e| {
        let (p, se) = extinct(e)?;
        Ok(p - z * se < extinction_target)
    })
    .map_or(1.0, |b| b.1);
    Ok(ErgodicityEstimate {
        delta,
        q,
        width,
        horizon,
        eps_lo,
        eps_hi,
        ci_lo: ci_lo.min(eps_lo),
        ci_hi: ci_hi.max(eps_hi),
        extinction_target,
        replicas,
        seed,
    })
}
