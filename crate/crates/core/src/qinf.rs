//! Restricted arrows `W`, the cluster `G` of vertices they connect to the
//! initial row, the color-permutation test, and the coupling of the
//! infinite-color process across initial partitions.
//!
//! Rows are counted from the initial row of the window. The region of
//! vertices whose ancestry stays in the right half-line from column 0 is the
//! cone `z >= t` at depth `t`; `v_t = (t, t)` is its leftmost vertex.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{canonical_labels, run_forward, InitialCondition, Trajectory};
use crate::error::{Error, Result};
use crate::lattice::{sample_arrow_field, Arrow, ArrowField, ArrowRow, Boundary, Colors, LatticeWindow, ModelParams};
use crate::rng::{derive_seed, UniformField};
use crate::stats::{bonferroni_z, mean_stderr, proportion};

/// Familywise level of the permutation test.
pub const DEFAULT_FAMILYWISE_ALPHA: f64 = 1e-3;

/// `v` belongs to the region at depth `t` iff its column is at least `t`.
pub fn in_region(t: usize, z: i64) -> bool {
    z >= t as i64
}

/// `W` equals `X` on single arrows and `Dot`; `Both` survives only when both
/// parents carry the same value. A single arrow to a parent outside a free
/// window becomes `Dot`, matching the fresh draw the dynamics make there.
/// The initial row is `Dot`.
pub fn derive_w_arrows(x: &ArrowField, z: &Trajectory) -> Result<ArrowField> {
    let w = x.window;
    if z.len() != w.height {
        return Err(Error::Misaligned(format!("trajectory has {} rows, window has {}", z.len(), w.height)));
    }
    let n = w.row_len();
    let mut rows = vec![ArrowRow::filled(n, Arrow::Dot)];
    let mut prev = z.values(0);
    if prev.len() != n {
        return Err(Error::Misaligned("trajectory row length does not match the window".into()));
    }
    for (k, t) in w.rows().enumerate().skip(1) {
        let cur = z.values(k);
        if cur.len() != n {
            return Err(Error::Misaligned("trajectory row length does not match the window".into()));
        }
        let mut row = ArrowRow::filled(n, Arrow::Dot);
        for i in 0..n {
            let (l, r) = (w.up_left(t, i), w.up_right(t, i));
            let a = match (x.get(t, i), l, r) {
                (Arrow::NW, Some(_), _) => Arrow::NW,
                (Arrow::NE, _, Some(_)) => Arrow::NE,
                (Arrow::Both, Some(l), Some(r)) if prev[l] == prev[r] => Arrow::Both,
                _ => Arrow::Dot,
            };
            row.set(i, a);
        }
        rows.push(row);
        prev = cur;
    }
    ArrowField::from_rows(w, rows)
}

/// Membership in `G`, row by row: the initial row is in `G`, and a later
/// vertex is in `G` iff one of its arrows leads to a member.
pub fn g_cluster(w: &ArrowField) -> Vec<Vec<bool>> {
    let win = w.window;
    let mut out = vec![vec![true; win.row_len()]];
    for t in win.rows().skip(1) {
        let prev = out.last().unwrap();
        let row = (0..win.row_len())
            .map(|i| {
                let a = w.get(t, i);
                (a.left() && win.up_left(t, i).is_some_and(|j| prev[j]))
                    || (a.right() && win.up_right(t, i).is_some_and(|j| prev[j]))
            })
            .collect();
        out.push(row);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GClusterStats {
    pub params: ModelParams,
    pub init: InitialCondition,
    pub depth: usize,
    pub width: usize,
    pub replicas: u64,
    pub seed: u64,
    /// `1 - delta * epsilon`.
    pub bound: f64,
    /// Per row, `P(v in G)` pooled over region vertices whose ancestry cone
    /// fits in the window. For translation-invariant initial rows this is
    /// the row supremum.
    pub sup: Vec<f64>,
    pub sup_stderr: Vec<f64>,
    /// `P(v_t in G)` for the leftmost region vertex.
    pub leftmost: Vec<f64>,
    pub leftmost_stderr: Vec<f64>,
    /// `sup[t] / sup[t-1]` for `t >= 1` (index 0 unused), `None` when the
    /// previous row is empty.
    pub ratio: Vec<Option<f64>>,
    pub ratio_stderr: Vec<Option<f64>>,
    /// Partial sums of `leftmost` and of `sup[0] * bound^i`.
    pub partial_sums: Vec<f64>,
    pub geometric_sums: Vec<f64>,
}

impl GClusterStats {
    /// Rows `1..` where the ratio exceeds the bound by more than `z`
    /// standard errors.
    pub fn ratio_excesses(&self, z: f64) -> Vec<usize> {
        (1..self.ratio.len())
            .filter(|&t| match (self.ratio[t], self.ratio_stderr[t]) {
                (Some(r), Some(se)) => r > self.bound + z * se,
                _ => false,
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,sup,sup_stderr,leftmost,leftmost_stderr,ratio,ratio_stderr,bound,partial_sum,geometric_sum\n");
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.12e}"));
        for t in 0..self.sup.len() {
            s.push_str(&format!(
                "{t},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{:.12e},{:.12e},{:.12e}\n",
                self.sup[t],
                self.sup_stderr[t],
                self.leftmost[t],
                self.leftmost_stderr[t],
                opt(self.ratio[t]),
                opt(self.ratio_stderr[t]),
                self.bound,
                self.partial_sums[t],
                self.geometric_sums[t],
            ));
        }
        s
    }
}

/// Extra columns beyond the two cone slopes, so deep rows still pool many
/// vertices.
const POOL_MARGIN: usize = 128;

pub fn g_decay_profile(
    params: &ModelParams,
    depth: usize,
    replicas: u64,
    seed: u64,
    init: &InitialCondition,
) -> Result<GClusterStats> {
    if replicas == 0 {
        return Err(Error::InvalidParams("replica count must be positive".into()));
    }
    let width = 2 * depth + POOL_MARGIN;
    let window = LatticeWindow::new(width, depth + 1, Boundary::Free)?;
    let per: Vec<(Vec<f64>, Vec<bool>)> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, Vec<bool>)> {
            let traj = run_forward(init, params, &window, seed, r)?;
            let x = sample_arrow_field(&UniformField::new(seed, r), params, &window);
            let g = g_cluster(&derive_w_arrows(&x, &traj)?);
            let mut pooled = Vec::with_capacity(depth + 1);
            let mut left = Vec::with_capacity(depth + 1);
            for (t, row) in g.iter().enumerate() {
                let (mut hit, mut total) = (0usize, 0usize);
                for (i, &member) in row.iter().enumerate() {
                    let z = window.column(t as i64, i);
                    if in_region(t, z) && z + (t as i64) < width as i64 {
                        hit += member as usize;
                        total += 1;
                    }
                }
                pooled.push(hit as f64 / total as f64);
                left.push(row[window.index(t as i64, t as i64).expect("leftmost vertex in window")]);
            }
            Ok((pooled, left))
        })
        .collect::<Result<_>>()?;
    let floor = 1.0 / replicas as f64;
    let mut stats = GClusterStats {
        params: *params,
        init: init.clone(),
        depth,
        width,
        replicas,
        seed,
        bound: 1.0 - params.delta * params.epsilon,
        sup: vec![],
        sup_stderr: vec![],
        leftmost: vec![],
        leftmost_stderr: vec![],
        ratio: vec![None],
        ratio_stderr: vec![None],
        partial_sums: vec![],
        geometric_sums: vec![],
    };
    for t in 0..=depth {
        let xs: Vec<f64> = per.iter().map(|p| p.0[t]).collect();
        let (m, se) = mean_stderr(&xs);
        stats.sup.push(m);
        stats.sup_stderr.push(if replicas < 2 { 1.0 } else { se.max(floor) });
        let hits = per.iter().filter(|p| p.1[t]).count() as u64;
        let (p, pse) = proportion(hits, replicas);
        stats.leftmost.push(p);
        stats.leftmost_stderr.push(pse);
    }
    for t in 1..=depth {
        let (p0, p1) = (stats.sup[t - 1], stats.sup[t]);
        let (s0, s1) = (stats.sup_stderr[t - 1], stats.sup_stderr[t]);
        if p0 > 0.0 {
            let r = p1 / p0;
            let rel = if p1 > 0.0 { ((s1 / p1).powi(2) + (s0 / p0).powi(2)).sqrt() * r } else { s1 / p0 };
            stats.ratio.push(Some(r));
            stats.ratio_stderr.push(Some(rel));
        } else {
            stats.ratio.push(None);
            stats.ratio_stderr.push(None);
        }
    }
    let (mut acc, mut geo, mut pow) = (0.0, 0.0, 1.0);
    for t in 0..=depth {
        acc += stats.leftmost[t];
        geo += stats.sup[0] * pow;
        pow *= stats.bound;
        stats.partial_sums.push(acc);
        stats.geometric_sums.push(geo);
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub params: ModelParams,
    pub width: usize,
    pub boundary: Boundary,
    pub horizon: usize,
    pub replicas: u64,
    pub seed: u64,
    pub colors: Vec<u32>,
    pub alpha: f64,
    pub tests: usize,
    pub z_threshold: f64,
    pub max_z: f64,
    /// `k:pattern:color_a:color_b` of the largest statistic.
    pub worst: String,
    /// Set when `3 (1 - delta epsilon)^horizon` exceeds `1/sqrt(replicas)`:
    /// the initial row may still be visible at the test's resolution.
    pub short_horizon: bool,
    pub pass: bool,
}

fn pattern_counts(
    params: &ModelParams,
    q: u32,
    window: &LatticeWindow,
    replicas: u64,
    seed: u64,
    color: u32,
) -> Result<Vec<Vec<u64>>> {
    let init = InitialCondition::Constant(color as u64);
    let q = q as usize;
    let rows: Vec<Vec<u64>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<u64>> {
            let traj = run_forward(&init, params, window, seed, r)?;
            Ok(traj.values(traj.len() - 1))
        })
        .collect::<Result<_>>()?;
    let mid = window.row_len() / 2 - 1;
    let mut counts = vec![vec![0u64; q], vec![0u64; q * q], vec![0u64; q * q * q]];
    for row in &rows {
        let mut code = 0usize;
        for k in 0..3 {
            code = code * q + row[mid + k] as usize;
            counts[k][code] += 1;
        }
    }
    Ok(counts)
}

/// Runs from each constant start on independent randomness and compares
/// the laws of 1, 2 and 3 consecutive final-row colors pairwise with
/// Bonferroni-corrected two-sample tests.
pub fn permutation_invariance_test(
    params: &ModelParams,
    window: &LatticeWindow,
    horizon: usize,
    replicas: u64,
    seed: u64,
    colors: &[u32],
) -> Result<PermutationReport> {
    let q = params
        .q
        .finite()
        .filter(|&q| q >= 2)
        .ok_or_else(|| Error::InvalidParams("the permutation test needs finite q >= 2".into()))?;
    if colors.len() < 2 || colors.iter().any(|&c| c >= q) || replicas == 0 {
        return Err(Error::InvalidParams("need at least two colors below q and positive replicas".into()));
    }
    let run_window = LatticeWindow::new(window.width, horizon + 1, window.boundary)?;
    if run_window.row_len() < 3 {
        return Err(Error::InvalidWindow("window too narrow for 3-vertex patterns".into()));
    }
    let counts: Vec<Vec<Vec<u64>>> = colors
        .iter()
        .map(|&c| pattern_counts(params, q, &run_window, replicas, derive_seed(seed, c as u64 + 1), c))
        .collect::<Result<_>>()?;
    let pairs = colors.len() * (colors.len() - 1) / 2;
    let q = q as usize;
    let tests = pairs * (q + q * q + q * q * q);
    let z_threshold = bonferroni_z(DEFAULT_FAMILYWISE_ALPHA, tests);
    let (mut max_z, mut worst) = (0.0f64, String::new());
    for a in 0..colors.len() {
        for b in a + 1..colors.len() {
            for k in 0..3 {
                for pat in 0..counts[a][k].len() {
                    let (p1, s1) = proportion(counts[a][k][pat], replicas);
                    let (p2, s2) = proportion(counts[b][k][pat], replicas);
                    let z = (p1 - p2).abs() / (s1 * s1 + s2 * s2).sqrt();
                    if z > max_z {
                        max_z = z;
                        worst = format!("{}:{pat}:{}:{}", k + 1, colors[a], colors[b]);
                    }
                }
            }
        }
    }
    let residual = 3.0 * (1.0 - params.delta * params.epsilon).powi(horizon as i32);
    Ok(PermutationReport {
        params: *params,
        width: window.width,
        boundary: window.boundary,
        horizon,
        replicas,
        seed,
        colors: colors.to_vec(),
        alpha: DEFAULT_FAMILYWISE_ALPHA,
        tests,
        z_threshold,
        max_z,
        worst,
        short_horizon: residual > 1.0 / (replicas as f64).sqrt(),
        pass: max_z <= z_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QinfCouplingReport {
    pub params: ModelParams,
    pub width: usize,
    pub boundary: Boundary,
    pub horizon: usize,
    pub replicas: u64,
    pub seed: u64,
    pub inits: Vec<InitialCondition>,
    /// Final-row columns compared, inclusive.
    pub interval: (i64, i64),
    /// Vertices where `W` is `Dot` from the constant start but not from
    /// another start.
    pub implication_violations: u64,
    /// Per alternative start, replicas whose partition on the interval
    /// differs from the constant start.
    pub init_mismatches: Vec<u64>,
    /// Replicas where restarting one row earlier changes the interval.
    pub time_shift_mismatches: u64,
    /// Replicas with any mismatch at all.
    pub mismatched_replicas: u64,
    /// Replicas whose interval meets `G` of the constant start.
    pub cluster_hits: u64,
    /// Mismatches on replicas where the interval avoids `G`; always zero
    /// when the coupling argument holds.
    pub unexplained_mismatches: u64,
    pub pass: bool,
}

/// Largest tolerated fraction of mismatched replicas.
pub const MAX_MISMATCH_FRACTION: f64 = 1e-3;

fn interval_partition(row: &[u64], idx: &[usize]) -> Vec<u32> {
    canonical_labels(&idx.iter().map(|&i| row[i]).collect::<Vec<_>>())
}

/// Shared-randomness comparison of the infinite-color process from the
/// constant start against each start in `inits`, plus a run started one
/// row earlier. The interval is `[-radius, radius]` around the window
/// center.
pub fn qinf_coupling_check(
    params: &ModelParams,
    window: &LatticeWindow,
    horizon: usize,
    replicas: u64,
    seed: u64,
    inits: &[InitialCondition],
    radius: i64,
) -> Result<QinfCouplingReport> {
    if params.q != Colors::Infinite {
        return Err(Error::InvalidParams("the partition coupling needs q = inf".into()));
    }
    if replicas == 0 {
        return Err(Error::InvalidParams("replica count must be positive".into()));
    }
    let win = LatticeWindow::with_origin(window.width, horizon + 1, window.boundary, 0, 0)?;
    let shifted = LatticeWindow::with_origin(window.width, horizon + 2, window.boundary, 0, -1)?;
    let center = (window.width / 2) as i64;
    let interval = (center - radius, center + radius);
    let last = horizon as i64;
    let idx: Vec<usize> = (0..win.row_len())
        .filter(|&i| (interval.0..=interval.1).contains(&win.column(last, i)))
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidWindow("the interval holds no vertex".into()));
    }
    let constant = InitialCondition::Constant(0);

    struct Outcome {
        violations: u64,
        init_mismatch: Vec<bool>,
        shift_mismatch: bool,
        hit: bool,
    }

    let outcomes: Vec<Outcome> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Outcome> {
            let x = sample_arrow_field(&UniformField::new(seed, r), params, &win);
            let base = run_forward(&constant, params, &win, seed, r)?;
            let w_base = derive_w_arrows(&x, &base)?;
            let g = g_cluster(&w_base);
            let hit = idx.iter().any(|&i| g[horizon][i]);
            let target = interval_partition(&base.values(horizon), &idx);
            let mut out = Outcome { violations: 0, init_mismatch: vec![], shift_mismatch: false, hit };
            for init in inits {
                let traj = run_forward(init, params, &win, seed, r)?;
                let w = derive_w_arrows(&x, &traj)?;
                for t in win.rows().skip(1) {
                    for i in 0..win.row_len() {
                        out.violations += (w_base.get(t, i) == Arrow::Dot && w.get(t, i) != Arrow::Dot) as u64;
                    }
                }
                out.init_mismatch.push(interval_partition(&traj.values(horizon), &idx) != target);
            }
            let early = run_forward(&constant, params, &shifted, seed, r)?;
            out.shift_mismatch = interval_partition(&early.values(horizon + 1), &idx) != target;
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut report = QinfCouplingReport {
        params: *params,
        width: window.width,
        boundary: window.boundary,
        horizon,
        replicas,
        seed,
        inits: inits.to_vec(),
        interval,
        implication_violations: 0,
        init_mismatches: vec![0; inits.len()],
        time_shift_mismatches: 0,
        mismatched_replicas: 0,
        cluster_hits: 0,
        unexplained_mismatches: 0,
        pass: false,
    };
    for o in &outcomes {
        report.implication_violations += o.violations;
        for (k, &m) in o.init_mismatch.iter().enumerate() {
            report.init_mismatches[k] += m as u64;
        }
        report.time_shift_mismatches += o.shift_mismatch as u64;
        let any_init = o.init_mismatch.iter().any(|&m| m);
        report.mismatched_replicas += (any_init || o.shift_mismatch) as u64;
        report.cluster_hits += o.hit as u64;
        report.unexplained_mismatches += (any_init && !o.hit) as u64;
    }
    report.pass = report.implication_violations == 0
        && report.unexplained_mismatches == 0
        && report.mismatched_replicas as f64 <= (MAX_MISMATCH_FRACTION * replicas as f64).max(1.0);
    Ok(report)
}
