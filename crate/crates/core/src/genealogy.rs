//! Arrow percolation from a single site: cluster growth, survival
//! probabilities, the exact frontier recursion and critical-point brackets.
//!
//! Level `l` of a cluster grown from `(t0, z0)` lives on row `t0 - l` at
//! columns `z0 - l, z0 - l + 2, ..., z0 + l`; index `k` is column
//! `z0 - l + 2k`. `NW` from index `k` reaches index `k` of the next level and
//! `NE` reaches index `k + 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ArrowField, ArrowLaw, ArrowSource, Colors, LazyArrows, ModelParams};
use crate::rng::UniformField;
use crate::stats::{proportion, Estimate};

/// Largest depth accepted by [`exact_theta_n`].
pub const MAX_EXACT_DEPTH: usize = 18;

/// Reached vertices per level, as bitsets over level indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachedSet {
    pub origin_row: i64,
    pub origin_col: i64,
    pub max_depth: usize,
    /// `levels[l]` for `l` up to the first empty level (inclusive) or
    /// `max_depth`.
    levels: Vec<Vec<u64>>,
}

fn bit(words: &[u64], k: usize) -> bool {
    words.get(k / 64).is_some_and(|w| w >> (k % 64) & 1 == 1)
}

fn set_bit(words: &mut [u64], k: usize) {
    words[k / 64] |= 1 << (k % 64);
}

fn ones(words: &[u64]) -> impl Iterator<Item = usize> + '_ {
    words.iter().enumerate().flat_map(|(w, &word)| {
        let mut rest = word;
        std::iter::from_fn(move || {
            (rest != 0).then(|| {
                let b = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                w * 64 + b
            })
        })
    })
}

impl ReachedSet {
    /// Number of levels stored (the last may be empty).
    pub fn stored_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn is_alive(&self, level: usize) -> bool {
        self.levels.get(level).is_some_and(|l| l.iter().any(|&w| w != 0))
    }

    pub fn survives_to(&self, n: usize) -> bool {
        self.is_alive(n)
    }

    /// Deepest non-empty level.
    pub fn height(&self) -> usize {
        (0..self.levels.len()).rev().find(|&l| self.is_alive(l)).unwrap_or(0)
    }

    pub fn contains_index(&self, level: usize, k: usize) -> bool {
        self.levels.get(level).is_some_and(|l| bit(l, k))
    }

    /// Reached level indices at `level`.
    pub fn indices(&self, level: usize) -> Vec<usize> {
        self.levels.get(level).map_or_else(Vec::new, |l| ones(l).collect())
    }

    /// Absolute columns of the reached vertices at `level`.
    pub fn columns(&self, level: usize) -> Vec<i64> {
        self.indices(level).into_iter().map(|k| self.origin_col - level as i64 + 2 * k as i64).collect()
    }

    pub fn size(&self, level: usize) -> usize {
        self.levels.get(level).map_or(0, |l| l.iter().map(|w| w.count_ones() as usize).sum())
    }

    /// Levelwise inclusion.
    pub fn is_subset_of(&self, other: &ReachedSet) -> bool {
        self.levels.iter().enumerate().all(|(l, words)| {
            words.iter().enumerate().all(|(w, &x)| {
                let y = other.levels.get(l).and_then(|o| o.get(w)).copied().unwrap_or(0);
                x & !y == 0
            })
        })
    }
}

/// Grows the cluster of `(t0, z0)` through any arrow source, stopping after
/// `max_depth` levels or at extinction.
pub fn grow_from<S: ArrowSource + ?Sized>(source: &S, t0: i64, z0: i64, max_depth: usize) -> ReachedSet {
    let mut levels: Vec<Vec<u64>> = vec![vec![1]];
    for l in 0..max_depth {
        let cur = &levels[l];
        let mut next = vec![0u64; (l + 2).div_ceil(64)];
        let t = t0 - l as i64;
        let mut alive = false;
        for k in ones(cur) {
            let a = source.arrow(t, z0 - l as i64 + 2 * k as i64);
            if a.left() {
                set_bit(&mut next, k);
                alive = true;
            }
            if a.right() {
                set_bit(&mut next, k + 1);
                alive = true;
            }
        }
        levels.push(next);
        if !alive {
            break;
        }
    }
    ReachedSet { origin_row: t0, origin_col: z0, max_depth, levels }
}

/// Grows the cluster of `origin = (row, column)` inside a stored window. The
/// whole cone of depth `max_depth` must fit in the window.
pub fn grow_cluster(field: &ArrowField, origin: (i64, i64), max_depth: usize) -> Result<ReachedSet> {
    let (t0, z0) = origin;
    let w = &field.window;
    let d = max_depth as i64;
    let fits = w.contains_row(t0)
        && w.contains_row(t0 - d)
        && z0 - d >= 0
        && z0 + d < w.width as i64
        && w.index(t0, z0).is_some();
    if !fits {
        return Err(Error::BoundaryContact { origin: z0, depth: max_depth, width: w.width });
    }
    Ok(grow_from(field, t0, z0, max_depth))
}

/// Survival probability to depth `n`, Monte Carlo or exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub n: usize,
    pub p_hat: f64,
    pub stderr: f64,
    pub replicas: u64,
    pub seed: Option<u64>,
    pub exact: bool,
}

impl SurvivalEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.p_hat, stderr: self.stderr, replicas: self.replicas, seed: self.seed, exact: self.exact }
    }
}

/// Whether the cluster of the origin in replica `replica` reaches depth `n`.
pub fn survives(params: &ModelParams, n: usize, seed: u64, replica: u64) -> bool {
    let arrows = LazyArrows::new(UniformField::new(seed, replica), params);
    grow_from(&arrows, 0, 0, n).survives_to(n)
}

fn survival_count(params: &ModelParams, n: usize, replicas: u64, seed: u64) -> u64 {
    (0..replicas).into_par_iter().filter(|&r| survives(params, n, seed, r)).count() as u64
}

/// Fraction of replicas whose origin cluster reaches level `n`.
pub fn theta_n_mc(params: &ModelParams, n: usize, replicas: u64, seed: u64) -> Result<SurvivalEstimate> {
    if n == 0 || replicas == 0 {
        return Err(Error::InvalidParams("depth and replica count must be positive".into()));
    }
    let hits = survival_count(params, n, replicas, seed);
    let (p_hat, stderr) = proportion(hits, replicas);
    Ok(SurvivalEstimate { n, p_hat, stderr, replicas, seed: Some(seed), exact: false })
}

/// Exact survival probabilities `Theta_1..=Theta_n` by propagating the law
/// of the reached frontier level by level.
pub fn exact_theta_sequence(law: &ArrowLaw, n: usize) -> Result<Vec<f64>> {
    if n > MAX_EXACT_DEPTH {
        return Err(Error::StateSpaceTooLarge { n, max: MAX_EXACT_DEPTH });
    }
    let [p_nw, p_ne, p_both, p_dot] = law.as_array();
    // dist[s] = P(frontier at level l is the subset s of its l + 1 sites)
    let mut dist = vec![0.0, 1.0];
    let mut out = Vec::with_capacity(n);
    for l in 0..n {
        // Sweep the l + 1 old sites. Before site i the key holds the
        // unprocessed old bits above position i and the new bits 0..=i below.
        let mut cur = vec![0.0; 1 << (l + 2)];
        for (s, &p) in dist.iter().enumerate() {
            cur[s << 1] = p;
        }
        let mut next = vec![0.0; cur.len()];
        for i in 0..=l {
            next.iter_mut().for_each(|x| *x = 0.0);
            let old = 1usize << (i + 1);
            let here = 1usize << i;
            for (key, &p) in cur.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                if key & old == 0 {
                    next[key] += p;
                    continue;
                }
                let base = key & !old;
                next[base | here] += p * p_nw;
                next[base | old] += p * p_ne;
                next[base | here | old] += p * p_both;
                next[base] += p * p_dot;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0] = 0.0;
        out.push(cur.iter().sum());
        dist = cur;
    }
    Ok(out)
}

/// Exact `Theta_n` for `n <= MAX_EXACT_DEPTH`.
pub fn exact_theta_n(params: &ModelParams, n: usize) -> Result<SurvivalEstimate> {
    if n == 0 {
        return Ok(SurvivalEstimate { n, p_hat: 1.0, stderr: 0.0, replicas: 0, seed: None, exact: true });
    }
    let seq = exact_theta_sequence(&params.law(), n)?;
    Ok(SurvivalEstimate { n, p_hat: seq[n - 1], stderr: 0.0, replicas: 0, seed: None, exact: true })
}

/// Mean offspring count `1 + delta (1 - 2 epsilon)` of the dominating
/// branching process.
pub fn branching_mean(params: &ModelParams) -> f64 {
    (1.0 - params.delta) + 2.0 * params.delta * (1.0 - params.epsilon)
}

/// Bracket for the critical noise level at fixed `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalEstimate {
    pub delta: f64,
    pub depth: usize,
    pub eps_lo: f64,
    pub eps_hi: f64,
    /// Bracket widened by the binomial error of the survival estimates.
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub survival_threshold: f64,
    pub replicas: u64,
    pub seed: u64,
    pub confidence: String,
}

/// Dyadic bisection steps used by the critical-point searches.
pub const BISECTION_BITS: u32 = 10;

/// Finds adjacent dyadic grid points `lo < hi` with `above(lo)` true and
/// `above(hi)` false, assuming `above` is nonincreasing on `[0, 1]`.
pub fn dyadic_bisect(bits: u32, mut above: impl FnMut(f64) -> Result<bool>) -> Result<(f64, f64)> {
    let scale = (1u64 << bits) as f64;
    let (mut lo, mut hi) = (0u64, 1u64 << bits);
    if !above(0.0)? {
        return Err(Error::BracketFailure("criterion already fails at epsilon = 0".into()));
    }
    if above(1.0)? {
        return Err(Error::BracketFailure("criterion still holds at epsilon = 1".into()));
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if above(mid as f64 / scale)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo as f64 / scale, hi as f64 / scale))
}

/// Bisects the finite-depth survival probability against
/// `survival_threshold`. All evaluations share one uniform field, so the
/// estimated survival curve is nonincreasing in `epsilon`.
pub fn estimate_epsilon_c(
    delta: f64,
    depth: usize,
    replicas: u64,
    survival_threshold: f64,
    seed: u64,
) -> Result<CriticalEstimate> {
    if replicas == 0 || depth == 0 {
        return Err(Error::InvalidParams("depth and replica count must be positive".into()));
    }
    let z = 1.96;
    let survival = |eps: f64| -> Result<(f64, f64)> {
        let params = ModelParams::new(delta, eps, Colors::Infinite)?;
        Ok(proportion(survival_count(&params, depth, replicas, seed), replicas))
    };
    let (eps_lo, eps_hi) = dyadic_bisect(BISECTION_BITS, |e| Ok(survival(e)?.0 > survival_threshold))?;
    let ci_lo = dyadic_bisect(BISECTION_BITS, |e| {
        let (p, se) = survival(e)?;
        Ok(p - z * se > survival_threshold)
    })
    .map_or(0.0, |b| b.0);
    let ci_hi = dyadic_bisect(BISECTION_BITS, |e| {
        let (p, se) = survival(e)?;
        Ok(p + z * se > survival_threshold)
    })
    .map_or(1.0, |b| b.1);
    Ok(CriticalEstimate {
        delta,
        depth,
        eps_lo,
        eps_hi,
        ci_lo: ci_lo.min(eps_lo),
        ci_hi: ci_hi.max(eps_hi),
        survival_threshold,
        replicas,
        seed,
        confidence: format!(
            "survival to depth {depth} crosses {survival_threshold} inside [eps_lo, eps_hi]; \
             [ci_lo, ci_hi] uses +/- {z} binomial standard errors; grid 2^-{BISECTION_BITS}"
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{sample_arrow_field, Arrow, Boundary, LatticeWindow};
    use proptest::prelude::*;

    fn params(d: f64, e: f64) -> ModelParams {
        ModelParams::new(d, e, Colors::Finite(2)).unwrap()
    }

    struct Constant(Arrow);

    impl ArrowSource for Constant {
        fn arrow(&self, _: i64, _: i64) -> Arrow {
            self.0
        }
    }

    #[test]
    fn dot_origin_dies_at_level_one() {
        let r = grow_from(&Constant(Arrow::Dot), 0, 0, 10);
        assert!(r.is_alive(0));
        assert!(!r.is_alive(1));
        assert_eq!(r.height(), 0);
    }

    #[test]
    fn all_both_fills_the_cone() {
        let r = grow_from(&Constant(Arrow::Both), 5, 3, 20);
        for l in 0..=20 {
            assert_eq!(r.size(l), l + 1);
            let cols = r.columns(l);
            assert_eq!(cols.first(), Some(&(3 - l as i64)));
            assert_eq!(cols.last(), Some(&(3 + l as i64)));
        }
    }

    #[test]
    fn single_arrows_follow_a_walk() {
        let r = grow_from(&Constant(Arrow::NE), 0, 0, 7);
        for l in 0..=7 {
            assert_eq!(r.columns(l), vec![l as i64]);
        }
    }

    #[test]
    fn grow_cluster_rejects_boundary_contact() {
        let w = LatticeWindow::new(20, 30, Boundary::Free).unwrap();
        let f = sample_arrow_field(&UniformField::new(1, 0), &params(0.5, 0.2), &w);
        assert!(grow_cluster(&f, (29, 9), 9).is_ok());
        assert!(matches!(grow_cluster(&f, (29, 9), 11), Err(Error::BoundaryContact { .. })));
        assert!(grow_cluster(&f, (5, 9), 9).is_err());
    }

    #[test]
    fn stored_and_lazy_fields_agree() {
        let w = LatticeWindow::new(120, 60, Boundary::Free).unwrap();
        for rep in 0..20 {
            let u = UniformField::new(8, rep);
            let p = params(0.5, 0.2);
            let stored = sample_arrow_field(&u, &p, &w);
            let a = grow_cluster(&stored, (59, 61), 50).unwrap();
            let b = grow_from(&LazyArrows::new(u, &p), 59, 61, 50);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn supercritical_cluster_survives_depth_50() {
        let est = theta_n_mc(&params(0.5, 0.2), 50, 2000, 3).unwrap();
        assert!(est.p_hat > 4.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn branching_mean_values() {
        assert_eq!(branching_mean(&params(0.3, 0.5)), 1.0);
        assert_eq!(branching_mean(&params(0.5, 0.75)), 0.75);
        assert_eq!(branching_mean(&params(0.0, 0.9)), 1.0);
    }

    #[test]
    fn exact_small_cases() {
        for (d, e) in [(0.5, 0.5), (0.3, 0.9), (1.0, 0.2)] {
            let t = exact_theta_n(&params(d, e), 1).unwrap();
            assert!(t.exact && t.stderr == 0.0);
            assert_eq!(t.p_hat, 1.0 - d * e);
        }
        for n in 1..=MAX_EXACT_DEPTH {
            assert_eq!(exact_theta_n(&params(1.0, 1.0), n).unwrap().p_hat, 0.0);
            assert!((exact_theta_n(&params(0.0, 0.4), n).unwrap().p_hat - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            exact_theta_n(&params(0.5, 0.5), MAX_EXACT_DEPTH + 1),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn exact_single_walk_limit() {
        // epsilon = 1: only single arrows survive, each step survives with 1 - delta
        let seq = exact_theta_sequence(&ArrowLaw::new(0.3, 1.0), 12).unwrap();
        for (k, v) in seq.iter().enumerate() {
            assert!((v - 0.7f64.powi(k as i32 + 1)).abs() < 1e-12);
        }
    }

    /// Sums over every arrow assignment of the cone below level `n`.
    fn brute_force_theta(law: &ArrowLaw, n: usize) -> f64 {
        let sites: usize = (1..=n).sum();
        let mut total = 0.0;
        for code in 0..4u64.pow(sites as u32) {
            let mut c = code;
            let mut prob = 1.0;
            let mut arrows = Vec::new();
            for _ in 0..sites {
                let a = Arrow::ALL[(c % 4) as usize];
                c /= 4;
                prob *= law.prob(a);
                arrows.push(a);
            }
            if prob == 0.0 {
                continue;
            }
            let mut reached = vec![true];
            let mut offset = 0;
            for l in 0..n {
                let mut next = vec![false; l + 2];
                for k in 0..=l {
                    if reached[k] {
                        let a = arrows[offset + k];
                        next[k] |= a.left();
                        next[k + 1] |= a.right();
                    }
                }
                offset += l + 1;
                reached = next;
            }
            if reached.iter().any(|&b| b) {
                total += prob;
            }
        }
        total
    }

    #[test]
    fn recursion_matches_brute_force() {
        for (d, e) in [(0.5, 0.5), (0.2, 0.7), (0.9, 0.1), (1.0, 0.3)] {
            let law = ArrowLaw::new(d, e);
            let seq = exact_theta_sequence(&law, 4).unwrap();
            for n in 1..=4 {
                let b = brute_force_theta(&law, n);
                assert!((seq[n - 1] - b).abs() < 1e-11, "d={d} e={e} n={n}: {} vs {b}", seq[n - 1]);
            }
        }
    }

    #[test]
    fn two_level_value_at_half_half() {
        // law (1/4, 1/4, 1/4, 1/4): enumerated by hand over the three cone sites
        let law = ArrowLaw::new(0.5, 0.5);
        let b = brute_force_theta(&law, 2);
        let dp = exact_theta_sequence(&law, 2).unwrap()[1];
        // origin single arrow (1/2) then that child not Dot (3/4), or origin
        // Both (1/4) then not both children Dot (15/16)
        let hand = 0.5 * 0.75 + 0.25 * (15.0 / 16.0);
        assert!((b - hand).abs() < 1e-15 && (dp - hand).abs() < 1e-15);
    }

    #[test]
    fn subcritical_ratio_bounded_by_branching_mean() {
        for (d, e) in [(0.5, 0.75), (0.8, 0.6), (1.0, 0.9)] {
            let p = params(d, e);
            let m = branching_mean(&p);
            let seq = exact_theta_sequence(&p.law(), 14).unwrap();
            for n in 8..=14 {
                assert!(seq[n - 1] / seq[n - 2] <= m + 0.05, "d={d} e={e} n={n}");
            }
        }
    }

    #[test]
    fn bisection_brackets_a_step() {
        let (lo, hi) = dyadic_bisect(10, |e| Ok(e < 0.3)).unwrap();
        assert!(lo < 0.3 && hi >= 0.3 && hi - lo == 1.0 / 1024.0);
        assert!(dyadic_bisect(10, |_| Ok(true)).is_err());
        assert!(dyadic_bisect(10, |_| Ok(false)).is_err());
    }

    #[test]
    fn epsilon_c_rejects_missing_bracket() {
        // delta = 0 never nucleates, so survival never drops
        assert!(matches!(estimate_epsilon_c(0.0, 50, 50, 0.01, 1), Err(Error::BracketFailure(_))));
    }

    #[test]
    fn epsilon_c_below_branching_bound() {
        let est = estimate_epsilon_c(0.6, 500, 300, 0.01, 17).unwrap();
        assert!(est.eps_lo < est.eps_hi);
        assert!(est.eps_hi < 0.55, "{est:?}");
        assert!(est.ci_lo <= est.eps_lo && est.ci_hi >= est.eps_hi);
    }

    /// Oriented site percolation written from scratch: each site is open with
    /// probability `p` and an open site passes to both children.
    fn oriented_site_survival(p: f64, depth: usize, reps: u64, seed: u64) -> f64 {
        use crate::rng::Stream;
        let mut hits = 0;
        for r in 0..reps {
            let u = UniformField::new(seed, r);
            let mut front: Vec<i64> = vec![0];
            for l in 0..depth as i64 {
                let mut next: Vec<i64> = front
                    .iter()
                    .filter(|&&z| u.uniform(-l, z, Stream::Arrow) < p)
                    .flat_map(|&z| [z - 1, z + 1])
                    .collect();
                next.sort_unstable();
                next.dedup();
                front = next;
                if front.is_empty() {
                    break;
                }
            }
            hits += !front.is_empty() as u64;
        }
        hits as f64 / reps as f64
    }

    #[test]
    fn full_delta_matches_oriented_site_percolation() {
        let depth = 200;
        let est = estimate_epsilon_c(1.0, depth, 400, 0.05, 5).unwrap();
        // known site threshold of the directed square lattice is 0.7055
        assert!(est.eps_lo > 0.2 && est.eps_hi < 0.35, "{est:?}");
        let reps = 4000;
        let at_lo = oriented_site_survival(1.0 - est.ci_lo, depth, reps, 99);
        let at_hi = oriented_site_survival(1.0 - est.ci_hi, depth, reps, 99);
        let se = (0.05f64 * 0.95 / reps as f64).sqrt();
        assert!(at_lo > 0.05 - 4.0 * se, "{at_lo}");
        assert!(at_hi < 0.05 + 4.0 * se, "{at_hi}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn raising_noise_shrinks_clusters(seed in any::<u64>(), d in 0.0f64..=1.0, e1 in 0.0f64..=1.0, e2 in 0.0f64..=1.0) {
            let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            let u = UniformField::new(seed, 0);
            let a = grow_from(&LazyArrows::new(u, &params(d, hi)), 0, 0, 40);
            let b = grow_from(&LazyArrows::new(u, &params(d, lo)), 0, 0, 40);
            prop_assert!(a.is_subset_of(&b));
        }

        #[test]
        fn exact_theta_nonincreasing(d in 0.0f64..=1.0, e in 0.0f64..=1.0) {
            let seq = exact_theta_sequence(&ArrowLaw::new(d, e), 12).unwrap();
            prop_assert!(seq[0] <= 1.0 + 1e-15);
            for w in seq.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-14);
                prop_assert!(w[1] >= -1e-15);
            }
        }
    }
}
