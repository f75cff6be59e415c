//! Forward color dynamics: finite-`q` colors and `q = infinity` partitions.
//!
//! Row `t` is computed from row `t - 1` using the arrows stored at row `t`.
//! On a free window an arrow that leaves the window behaves like a missing
//! parent and the vertex takes its fresh color.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{sample_arrow_row, Arrow, ArrowRow, Colors, LatticeWindow, ModelParams};
use crate::rng::{Stream, UniformField};

/// Finite-`q` colors of one row, indexed like the window row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorRow {
    pub row: i64,
    pub colors: Vec<u32>,
}

/// Equivalence-class labels of one row (`q = infinity`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub row: i64,
    pub labels: Vec<u64>,
}

impl PartitionRow {
    /// Relabels classes by order of first appearance, so two rows with the
    /// same partition compare equal.
    pub fn canonical(&self) -> Vec<u32> {
        canonical_labels(&self.labels)
    }

    pub fn class_count(&self) -> usize {
        self.canonical().iter().copied().max().map_or(0, |m| m as usize + 1)
    }
}

pub fn canonical_labels(labels: &[u64]) -> Vec<u32> {
    let mut seen: std::collections::HashMap<u64, u32> = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = seen.len() as u32;
            *seen.entry(l).or_insert(next)
        })
        .collect()
}

/// Labels at or above this value are fresh; initial labels stay below it.
pub const FRESH_LABEL_BASE: u64 = 1 << 63;

/// The fresh color `Y(v)`: uniform on `0..q`, or a label no other vertex and
/// no initial condition can carry.
#[derive(Debug, Clone, Copy)]
pub struct FreshColorField {
    pub field: UniformField,
    pub q: Colors,
}

impl FreshColorField {
    pub fn new(field: UniformField, q: Colors) -> Self {
        Self { field, q }
    }

    /// The shared uniform behind `Y(v)`.
    #[inline]
    pub fn uniform(&self, t: i64, z: i64) -> f64 {
        self.field.uniform(t, z, Stream::FreshColor)
    }

    /// `floor(U(v) * q)`. Panics for infinite `q`.
    #[inline]
    pub fn color(&self, t: i64, z: i64) -> u32 {
        let q = self.q.finite().expect("finite q required for colors");
        color_from_uniform(self.uniform(t, z), q)
    }

    /// Fresh class label of vertex `(t, z)`. Labels increase strictly in
    /// row-major order and are distinct across vertices.
    pub fn label(&self, t: i64, z: i64) -> Result<u64> {
        fresh_label(t, z)
    }
}

#[inline]
pub fn color_from_uniform(u: f64, q: u32) -> u32 {
    ((u * q as f64) as u32).min(q - 1)
}

pub fn fresh_label(t: i64, z: i64) -> Result<u64> {
    let shifted = t.checked_add(1 << 30).filter(|s| (0..1 << 31).contains(s));
    match shifted {
        Some(s) if (0..1i64 << 32).contains(&z) => Ok(FRESH_LABEL_BASE | (s as u64) << 32 | z as u64),
        _ => Err(Error::LabelOverflow { row: t, col: z }),
    }
}

/// How row 0 of a run is filled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialCondition {
    Constant(u64),
    /// Finite `q`: i.i.d. uniform colors. Infinite `q`: all classes distinct.
    IidUniform,
    Explicit(Vec<u64>),
    /// Alternating blocks of `size` vertices cycling through `0..q` (or
    /// distinct labels for infinite `q`).
    Blocks { size: usize },
}

impl InitialCondition {
    fn values(&self, q: Colors, window: &LatticeWindow, field: &UniformField) -> Result<Vec<u64>> {
        let t = window.first_row;
        let n = window.row_len();
        let vals: Vec<u64> = match self {
            InitialCondition::Constant(c) => vec![*c; n],
            InitialCondition::IidUniform => match q {
                Colors::Finite(q) => {
                    let ru = field.row(t, Stream::Init);
                    (0..n).map(|i| color_from_uniform(ru.at(window.column(t, i)), q) as u64).collect()
                }
                Colors::Infinite => (0..n as u64).collect(),
            },
            InitialCondition::Explicit(v) => {
                if v.len() != n {
                    return Err(Error::Misaligned(format!("initial row has {} entries, window row has {n}", v.len())));
                }
                v.clone()
            }
            InitialCondition::Blocks { size } => {
                if *size == 0 {
                    return Err(Error::InvalidParams("block size must be positive".into()));
                }
                let modulus = q.finite().map_or(u64::MAX, u64::from);
                (0..n).map(|i| (i / size) as u64 % modulus).collect()
            }
        };
        match q {
            Colors::Finite(q) => {
                if let Some(&bad) = vals.iter().find(|&&c| c >= q as u64) {
                    return Err(Error::InvalidParams(format!("initial color {bad} is not below q = {q}")));
                }
            }
            Colors::Infinite => {
                if let Some(&bad) = vals.iter().find(|&&c| c >= FRESH_LABEL_BASE) {
                    return Err(Error::InvalidParams(format!("initial label {bad} collides with the fresh range")));
                }
            }
        }
        Ok(vals)
    }

    pub fn color_row(&self, q: u32, window: &LatticeWindow, field: &UniformField) -> Result<ColorRow> {
        let colors = self.values(Colors::Finite(q), window, field)?.into_iter().map(|c| c as u32).collect();
        Ok(ColorRow { row: window.first_row, colors })
    }

    pub fn partition_row(&self, window: &LatticeWindow, field: &UniformField) -> Result<PartitionRow> {
        Ok(PartitionRow { row: window.first_row, labels: self.values(Colors::Infinite, window, field)? })
    }
}

fn check_aligned(prev_row: i64, prev_len: usize, arrows: &ArrowRow, window: &LatticeWindow) -> Result<()> {
    let n = window.row_len();
    if prev_len != n || arrows.len() != n {
        return Err(Error::Misaligned(format!(
            "row lengths {prev_len} and {} do not match window row length {n}",
            arrows.len()
        )));
    }
    if !window.contains_row(prev_row) || !window.contains_row(prev_row + 1) {
        return Err(Error::Misaligned(format!("row {prev_row} has no successor in the window")));
    }
    Ok(())
}

/// The value a vertex copies from its parents, or `None` when the update
/// rule calls for the fresh color `Y(v)`.
#[inline]
pub fn copied_value<L: Copy + Eq>(arrow: Arrow, left: Option<L>, right: Option<L>) -> Option<L> {
    match (arrow, left, right) {
        (Arrow::NW, Some(l), _) => Some(l),
        (Arrow::NE, _, Some(r)) => Some(r),
        (Arrow::Both, Some(l), Some(r)) if l == r => Some(l),
        _ => None,
    }
}

fn step_generic<L: Copy + Eq>(
    prev: &[L],
    arrows: &ArrowRow,
    window: &LatticeWindow,
    t: i64,
    mut fresh: impl FnMut(i64) -> Result<L>,
) -> Result<Vec<L>> {
    let mut out = Vec::with_capacity(window.row_len());
    for i in 0..window.row_len() {
        let left = window.up_left(t, i).map(|j| prev[j]);
        let right = window.up_right(t, i).map(|j| prev[j]);
        out.push(match copied_value(arrows.get(i), left, right) {
            Some(v) => v,
            None => fresh(window.column(t, i))?,
        });
    }
    Ok(out)
}

/// One step of the finite-`q` dynamics with an arbitrary fresh-color source.
pub fn step_colors_with(
    prev: &ColorRow,
    arrows: &ArrowRow,
    window: &LatticeWindow,
    fresh: impl Fn(i64, i64) -> u32,
) -> Result<ColorRow> {
    check_aligned(prev.row, prev.colors.len(), arrows, window)?;
    let t = prev.row + 1;
    let colors = step_generic(&prev.colors, arrows, window, t, |z| Ok(fresh(t, z)))?;
    Ok(ColorRow { row: t, colors })
}

/// One step of the finite-`q` dynamics; `arrows` belongs to row `prev.row + 1`.
pub fn step_colors(
    prev: &ColorRow,
    arrows: &ArrowRow,
    fresh: &FreshColorField,
    params: &ModelParams,
    window: &LatticeWindow,
) -> Result<ColorRow> {
    let q = params
        .q
        .finite()
        .ok_or_else(|| Error::InvalidParams("color dynamics need finite q; use partitions".into()))?;
    if let Some(&bad) = prev.colors.iter().find(|&&c| c >= q) {
        return Err(Error::InvalidParams(format!("color {bad} is not below q = {q}")));
    }
    let fresh = FreshColorField { q: Colors::Finite(q), ..*fresh };
    step_colors_with(prev, arrows, window, |t, z| fresh.color(t, z))
}

/// One step of the partition dynamics.
pub fn step_partition(
    prev: &PartitionRow,
    arrows: &ArrowRow,
    fresh: &FreshColorField,
    window: &LatticeWindow,
) -> Result<PartitionRow> {
    check_aligned(prev.row, prev.labels.len(), arrows, window)?;
    let t = prev.row + 1;
    let labels = step_generic(&prev.labels, arrows, window, t, |z| fresh.label(t, z))?;
    Ok(PartitionRow { row: t, labels })
}

/// Space-time array of a forward run, rows in time order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trajectory {
    Colors(Vec<ColorRow>),
    Partitions(Vec<PartitionRow>),
}

impl Trajectory {
    pub fn len(&self) -> usize {
        match self {
            Trajectory::Colors(r) => r.len(),
            Trajectory::Partitions(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row `k` (counted from the first row) as plain integers.
    pub fn values(&self, k: usize) -> Vec<u64> {
        match self {
            Trajectory::Colors(r) => r[k].colors.iter().map(|&c| c as u64).collect(),
            Trajectory::Partitions(r) => r[k].labels.clone(),
        }
    }
}

/// Runs the dynamics over the whole window: the first row is `init`, every
/// later row follows from the arrows at that row.
pub fn run_forward(
    init: &InitialCondition,
    params: &ModelParams,
    window: &LatticeWindow,
    seed: u64,
    replica: u64,
) -> Result<Trajectory> {
    let field = UniformField::new(seed, replica);
    let fresh = FreshColorField::new(field, params.q);
    let law = params.law();
    match params.q {
        Colors::Finite(q) => {
            let mut rows = vec![init.color_row(q, window, &field)?];
            for t in window.rows().skip(1) {
                let arrows = sample_arrow_row(&field, &law, window, t);
                let next = step_colors(rows.last().unwrap(), &arrows, &fresh, params, window)?;
                rows.push(next);
            }
            Ok(Trajectory::Colors(rows))
        }
        Colors::Infinite => {
            let mut rows = vec![init.partition_row(window, &field)?];
            for t in window.rows().skip(1) {
                let arrows = sample_arrow_row(&field, &law, window, t);
                let next = step_partition(rows.last().unwrap(), &arrows, &fresh, window)?;
                rows.push(next);
            }
            Ok(Trajectory::Partitions(rows))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Boundary;
    use proptest::prelude::*;

    fn params(d: f64, e: f64, q: Colors) -> ModelParams {
        ModelParams::new(d, e, q).unwrap()
    }

    fn win(w: usize, h: usize) -> LatticeWindow {
        LatticeWindow::new(w, h, Boundary::Periodic).unwrap()
    }

    #[test]
    fn constant_row_is_preserved_without_dots() {
        let w = win(16, 2);
        let prev = ColorRow { row: 0, colors: vec![2; 8] };
        let arrows = ArrowRow::from_arrows(&[Arrow::NW, Arrow::NE, Arrow::Both, Arrow::Both, Arrow::NW, Arrow::NE, Arrow::NE, Arrow::Both]);
        let fresh = FreshColorField::new(UniformField::new(1, 0), Colors::Finite(3));
        let next = step_colors(&prev, &arrows, &fresh, &params(0.5, 0.5, Colors::Finite(3)), &w).unwrap();
        assert_eq!(next.colors, vec![2; 8]);
        assert_eq!(next.row, 1);
    }

    #[test]
    fn both_with_disagreement_takes_fresh_color() {
        // row 1 vertex i has parents i and i+1 of row 0
        let w = win(8, 2);
        let prev = ColorRow { row: 0, colors: vec![0, 1, 0, 1] };
        let arrows = ArrowRow::from_arrows(&[Arrow::Both, Arrow::NW, Arrow::NE, Arrow::Dot]);
        let next = step_colors_with(&prev, &arrows, &w, |_, z| 10 + z as u32).unwrap();
        assert_eq!(next.colors, vec![11, 1, 1, 17]);
    }

    #[test]
    fn rejects_misaligned_rows() {
        let w = win(8, 2);
        let fresh = FreshColorField::new(UniformField::new(1, 0), Colors::Finite(2));
        let p = params(0.5, 0.5, Colors::Finite(2));
        let short = ColorRow { row: 0, colors: vec![0; 3] };
        let arrows = ArrowRow::filled(4, Arrow::NW);
        assert!(matches!(step_colors(&short, &arrows, &fresh, &p, &w), Err(Error::Misaligned(_))));
        let last = ColorRow { row: 1, colors: vec![0; 4] };
        assert!(matches!(step_colors(&last, &arrows, &fresh, &p, &w), Err(Error::Misaligned(_))));
        let bad = ColorRow { row: 0, colors: vec![0, 0, 5, 0] };
        assert!(step_colors(&bad, &arrows, &fresh, &p, &w).is_err());
    }

    #[test]
    fn all_dots_give_distinct_fresh_labels() {
        let w = win(16, 2);
        let prev = PartitionRow { row: 0, labels: vec![0; 8] };
        let fresh = FreshColorField::new(UniformField::new(3, 0), Colors::Infinite);
        let next = step_partition(&prev, &ArrowRow::filled(8, Arrow::Dot), &fresh, &w).unwrap();
        let mut sorted = next.labels.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
        assert!(next.labels.windows(2).all(|p| p[0] < p[1]));
        assert!(next.labels.iter().all(|&l| l >= FRESH_LABEL_BASE));
    }

    #[test]
    fn no_nucleation_only_coarsens() {
        let w = win(16, 2);
        let prev = PartitionRow { row: 0, labels: (0..8).collect() };
        let fresh = FreshColorField::new(UniformField::new(3, 0), Colors::Infinite);
        let arrows = ArrowRow::from_arrows(&[Arrow::NW, Arrow::NE, Arrow::NE, Arrow::NW, Arrow::NE, Arrow::NW, Arrow::NW, Arrow::NE]);
        let next = step_partition(&prev, &arrows, &fresh, &w).unwrap();
        assert!(next.labels.iter().all(|l| prev.labels.contains(l)));
    }

    #[test]
    fn fresh_labels_are_row_major_monotone() {
        assert!(fresh_label(0, 5).unwrap() < fresh_label(0, 6).unwrap());
        assert!(fresh_label(0, 1 << 20).unwrap() < fresh_label(1, 0).unwrap());
        assert!(fresh_label(-7, 3).unwrap() < fresh_label(-6, 0).unwrap());
        assert!(fresh_label(1 << 30, 0).is_err());
        assert!(fresh_label(-(1 << 30), 0).is_ok());
        assert!(fresh_label(0, -1).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let w = win(32, 20);
        for q in [Colors::Finite(3), Colors::Infinite] {
            let p = params(0.5, 0.5, q);
            let a = run_forward(&InitialCondition::IidUniform, &p, &w, 9, 2).unwrap();
            let b = run_forward(&InitialCondition::IidUniform, &p, &w, 9, 2).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 20);
        }
    }

    #[test]
    fn voter_limit_traces_single_walks() {
        // delta = 0: every color is an initial color, carried along one walk
        let w = win(32, 30);
        let init: Vec<u64> = (0..16).map(|i| i % 5).collect();
        let p = params(0.0, 0.7, Colors::Finite(5));
        let tr = run_forward(&InitialCondition::Explicit(init.clone()), &p, &w, 4, 0).unwrap();
        let field = UniformField::new(4, 0);
        let law = p.law();
        for i in 0..16 {
            let t_end = w.last_row();
            let (mut t, mut j) = (t_end, i);
            while t > 0 {
                let a = law.arrow(field.uniform(t, w.column(t, j), Stream::Arrow));
                j = match a {
                    Arrow::NW => w.up_left(t, j).unwrap(),
                    Arrow::NE => w.up_right(t, j).unwrap(),
                    _ => unreachable!(),
                };
                t -= 1;
            }
            assert_eq!(tr.values(29)[i], init[j]);
        }
    }

    #[test]
    fn full_noise_rows_are_fresh() {
        let w = win(64, 5);
        let p = params(1.0, 1.0, Colors::Finite(4));
        let tr = run_forward(&InitialCondition::Constant(0), &p, &w, 11, 0).unwrap();
        let fresh = FreshColorField::new(UniformField::new(11, 0), Colors::Finite(4));
        for t in 1..5 {
            let expect: Vec<u64> = (0..32).map(|i| fresh.color(t, w.column(t, i)) as u64).collect();
            assert_eq!(tr.values(t as usize), expect);
        }
    }

    #[test]
    fn initial_conditions() {
        let w = win(12, 1);
        let f = UniformField::new(0, 0);
        assert_eq!(InitialCondition::Blocks { size: 2 }.color_row(2, &w, &f).unwrap().colors, vec![0, 0, 1, 1, 0, 0]);
        assert!(InitialCondition::Constant(3).color_row(3, &w, &f).is_err());
        assert!(InitialCondition::Explicit(vec![0; 5]).color_row(3, &w, &f).is_err());
        let p = InitialCondition::IidUniform.partition_row(&w, &f).unwrap();
        assert_eq!(p.class_count(), 6);
        assert_eq!(canonical_labels(&[7, 7, 3, 9, 3]), vec![0, 0, 1, 2, 1]);
    }

    #[test]
    fn q2_reduction_by_enumeration() {
        // With two colors a uniform fresh color at a disagreeing Both vertex is
        // a uniform choice between the two parents. Enumerate every Y.
        use std::collections::HashMap;
        let w = win(8, 2);
        let prevs = [vec![0, 1, 1, 0], vec![0, 1, 0, 1], vec![1, 1, 0, 0]];
        let arrow_rows = [
            [Arrow::Both, Arrow::Both, Arrow::Both, Arrow::Both],
            [Arrow::Both, Arrow::NW, Arrow::Dot, Arrow::Both],
            [Arrow::NE, Arrow::Both, Arrow::Both, Arrow::NW],
        ];
        for prev in &prevs {
            for ar in &arrow_rows {
                let prev = ColorRow { row: 0, colors: prev.clone() };
                let arrows = ArrowRow::from_arrows(ar);
                let mut via_fresh: HashMap<Vec<u32>, f64> = HashMap::new();
                for y in 0..16u32 {
                    let r = step_colors_with(&prev, &arrows, &w, |_, z| (y >> (z / 2)) & 1).unwrap();
                    *via_fresh.entry(r.colors).or_default() += 1.0 / 16.0;
                }
                let mut via_choice: HashMap<Vec<u32>, f64> = HashMap::new();
                for pick in 0..16u32 {
                    for y in 0..16u32 {
                        let colors: Vec<u32> = (0..4)
                            .map(|i| {
                                let l = prev.colors[w.up_left(1, i).unwrap()];
                                let r = prev.colors[w.up_right(1, i).unwrap()];
                                match ar[i] {
                                    Arrow::NW => l,
                                    Arrow::NE => r,
                                    Arrow::Both if l == r => l,
                                    Arrow::Both => if (pick >> i) & 1 == 0 { l } else { r },
                                    Arrow::Dot => (y >> i) & 1,
                                }
                            })
                            .collect();
                        *via_choice.entry(colors).or_default() += 1.0 / 256.0;
                    }
                }
                assert_eq!(via_fresh.len(), via_choice.len());
                for (k, v) in &via_fresh {
                    assert!((v - via_choice[k]).abs() < 1e-12, "{k:?}");
                }
            }
        }
    }

    #[test]
    fn discrepancy_dies_out_at_large_noise() {
        let w = win(256, 101);
        let p = params(0.5, 0.5, Colors::Finite(3));
        let reps = 1000u64;
        let total: usize = (0..reps)
            .map(|r| {
                let a = run_forward(&InitialCondition::Constant(0), &p, &w, 77, r).unwrap();
                let b = run_forward(&InitialCondition::Constant(1), &p, &w, 77, r).unwrap();
                a.values(100).iter().zip(b.values(100)).filter(|(x, y)| **x != *y).count()
            })
            .sum();
        let density = total as f64 / (reps as f64 * 128.0);
        assert!(density < 0.05, "density {density}");
    }

    fn arrow_strategy() -> impl Strategy<Value = Arrow> {
        prop_oneof![Just(Arrow::NW), Just(Arrow::NE), Just(Arrow::Both), Just(Arrow::Dot)]
    }

    proptest! {
        #[test]
        fn color_permutation_commutes(
            prev in proptest::collection::vec(0u32..4, 6),
            arrows in proptest::collection::vec(arrow_strategy(), 6),
            ys in proptest::collection::vec(0u32..4, 6),
            perm_seed in 0usize..24,
        ) {
            let w = win(12, 2);
            let mut perm = vec![0u32, 1, 2, 3];
            let mut k = perm_seed;
            for i in (1..4).rev() {
                perm.swap(i, k % (i + 1));
                k /= i + 1;
            }
            let arrows = ArrowRow::from_arrows(&arrows);
            let row = ColorRow { row: 0, colors: prev.clone() };
            let permuted = ColorRow { row: 0, colors: prev.iter().map(|&c| perm[c as usize]).collect() };
            let a = step_colors_with(&row, &arrows, &w, |_, z| ys[(z / 2) as usize]).unwrap();
            let b = step_colors_with(&permuted, &arrows, &w, |_, z| perm[ys[(z / 2) as usize] as usize]).unwrap();
            let mapped: Vec<u32> = a.colors.iter().map(|&c| perm[c as usize]).collect();
            prop_assert_eq!(mapped, b.colors);
        }

        #[test]
        fn copied_vertices_pull_back_the_partition(
            prev in proptest::collection::vec(0u64..3, 8),
            arrows in proptest::collection::vec(arrow_strategy(), 8),
            free in any::<bool>(),
        ) {
            let bnd = if free { Boundary::Free } else { Boundary::Periodic };
            let w = LatticeWindow::new(16, 2, bnd).unwrap();
            let fresh = FreshColorField::new(UniformField::new(0, 0), Colors::Infinite);
            let prev = PartitionRow { row: 0, labels: prev };
            let next = step_partition(&prev, &ArrowRow::from_arrows(&arrows), &fresh, &w).unwrap();
            let parent = |i: usize| -> Option<usize> {
                let l = w.up_left(1, i);
                let r = w.up_right(1, i);
                match arrows[i] {
                    Arrow::NW => l,
                    Arrow::NE => r,
                    Arrow::Both => match (l, r) {
                        (Some(l), Some(r)) if prev.labels[l] == prev.labels[r] => Some(l),
                        _ => None,
                    },
                    Arrow::Dot => None,
                }
            };
            for i in 0..8 {
                for j in 0..8 {
                    match (parent(i), parent(j)) {
                        (Some(a), Some(b)) => prop_assert_eq!(
                            next.labels[i] == next.labels[j],
                            prev.labels[a] == prev.labels[b]
                        ),
                        (None, _) | (_, None) if i != j => prop_assert_ne!(next.labels[i], next.labels[j]),
                        _ => {}
                    }
                }
            }
        }
    }
}
