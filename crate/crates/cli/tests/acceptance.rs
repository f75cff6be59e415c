//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr
//! (written past the harness capture) and then asserts.
//!
//! Criterion 10 runs a reduced-replica configuration unless `VOTERLAB_FULL`
//! is set.

use std::io::Write;
use std::process::Command;

use voterlab_core::coupling::{cprime_transition, cprime_transition_counts, estimate_epsilon_c_prime, extinction_experiment, CouplingConfig, LambdaMode};
use voterlab_core::dynamics::InitialCondition;
use voterlab_core::enhancement::{gamma, pivotal_inequality_check, russo_check, EnhancedArrows};
use voterlab_core::genealogy::{estimate_epsilon_c, exact_theta_n, exact_theta_sequence, grow_from, theta_n_mc};
use voterlab_core::lattice::LazyArrows;
use voterlab_core::qinf::{g_decay_profile, qinf_coupling_check};
use voterlab_core::renorm::{clt_box_bound, positive_epsilon_certificate, renorm_certificate, BoxSpec};
use voterlab_core::{Boundary, Colors, LatticeWindow, ModelParams, UniformField};

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "acceptance {criterion:>2}: {verdict} {detail}").unwrap();
}

fn params(d: f64, e: f64, q: Colors) -> ModelParams {
    ModelParams::new(d, e, q).unwrap()
}

const GRID: [f64; 3] = [0.25, 0.5, 0.75];

#[test]
fn c01_oracle_equivalence() {
    let mut worst = 0.0f64;
    let mut first_row = 0.0f64;
    for d in GRID {
        for e in GRID {
            let p = params(d, e, Colors::Infinite);
            first_row = first_row.max((exact_theta_n(&p, 1).unwrap().p_hat - (1.0 - d * e)).abs());
            let exact = exact_theta_sequence(&p.law(), 12).unwrap();
            for n in 1..=12 {
                let mc = theta_n_mc(&p, n, 100_000, 1000 + n as u64).unwrap();
                worst = worst.max((mc.p_hat - exact[n - 1]).abs() / mc.stderr);
            }
        }
    }
    let pass = worst <= 4.0 && first_row <= 4.0 * f64::EPSILON;
    report(1, pass, &format!("max |mc - exact| = {worst:.2} se over 108 cells; |theta_1 - (1 - de)| = {first_row:.1e}"));
    assert!(pass);
}

#[test]
fn c02_russo_formulas() {
    let mut worst = 0.0f64;
    let mut all_second_order = true;
    for n in 1..=3 {
        for e in GRID {
            for s in GRID {
                let r = russo_check(&params(0.5, e, Colors::Infinite), s, n, 1e-4).unwrap();
                for c in [&r.epsilon_check, &r.s_check] {
                    worst = worst.max(c.error);
                    all_second_order &= c.second_order;
                }
            }
        }
    }
    let pass = worst <= 1e-6 && all_second_order;
    report(2, pass, &format!("max error {worst:.2e} at h = 1e-4; second order under halving: {all_second_order}"));
    assert!(pass);
}

#[test]
fn c03_pivotal_inequality() {
    let mut held = 0;
    let mut total = 0;
    for n in 1..=3 {
        for e in GRID {
            for s in GRID {
                total += 1;
                held += pivotal_inequality_check(&params(0.5, e, Colors::Infinite), s, n).unwrap().pass as usize;
            }
        }
    }
    let g = gamma(0.5, 0.5, 0.5).unwrap();
    let pass = held == total && (g - 22.0).abs() < 1e-12;
    report(3, pass, &format!("inequality held {held}/{total}; gamma(0.5, 0.5, 0.5) = {g}"));
    assert!(pass);
}

#[test]
fn c04_monotonicity_and_diminishment() {
    let depth = 40;
    let mut noise_violations = 0;
    let mut enhancement_violations = 0;
    for r in 0..1000u64 {
        let field = UniformField::new(44, r);
        let (d, e1, e2) = (0.8, 0.1, 0.3);
        let lo = grow_from(&LazyArrows::new(field, &params(d, e1, Colors::Infinite)), 0, 0, depth);
        let hi = grow_from(&LazyArrows::new(field, &params(d, e2, Colors::Infinite)), 0, 0, depth);
        noise_violations += !hi.is_subset_of(&lo) as u32;
        let p = params(d, e1, Colors::Infinite);
        let enh = grow_from(&EnhancedArrows::new(field, &p, 0.5), 0, 0, depth);
        enhancement_violations += !enh.is_subset_of(&lo) as u32;
    }
    let mut ladder = 0u64;
    for q in [2, 3, 5] {
        let cfg = CouplingConfig::new(params(0.7, 0.2, Colors::Finite(q)), LambdaMode::Standard).unwrap();
        let inits = (InitialCondition::IidUniform, InitialCondition::IidUniform);
        let stats = extinction_experiment(&cfg, 64, 200, 1000, 4 + q as u64, &inits).unwrap();
        ladder += stats.violations.total();
    }
    let pass = noise_violations == 0 && enhancement_violations == 0 && ladder == 0;
    report(
        4,
        pass,
        &format!("violations: noise {noise_violations}, enhancement {enhancement_violations}, ladder {ladder} (3 x 1000 trajectories)"),
    );
    assert!(pass);
}

#[test]
fn c05_branching_bound() {
    let p = params(0.5, 0.75, Colors::Infinite);
    let mc = theta_n_mc(&p, 500, 10_000, 5).unwrap();
    let seq = exact_theta_sequence(&p.law(), 14).unwrap();
    let max_ratio = (8..=14).map(|n| seq[n - 1] / seq[n - 2]).fold(0.0f64, f64::max);
    let pass = mc.p_hat <= 0.01 && max_ratio <= 0.80;
    report(5, pass, &format!("theta_500 = {:.4} (se {:.1e}); max exact ratio n = 8..14: {max_ratio:.4}", mc.p_hat, mc.stderr));
    assert!(pass);
}

#[test]
fn c06_renormalization_certificate() {
    let spec = BoxSpec::new(20, 100).unwrap();
    let bound = clt_box_bound(100, 0.8).unwrap();
    let cert = renorm_certificate(&params(0.8, 0.0, Colors::Infinite), &spec, 10_000, 6).unwrap();
    let positive = positive_epsilon_certificate(0.8, Colors::Infinite, &spec, 10_000, 66, 12).unwrap();
    let eps = positive.as_ref().map(|c| c.params.epsilon);
    let pass = cert.min_p_hat >= 0.82 && cert.pass && (bound.intersection - 0.906).abs() < 0.005 && eps.is_some_and(|e| e > 0.0);
    report(
        6,
        pass,
        &format!(
            "min P(A_v) = {:.4} (se {:.1e}) at v = {}; normal bound {:.4}; positive epsilon certificate at {eps:?}",
            cert.min_p_hat, cert.min_stderr, cert.min_v_offset, bound.intersection
        ),
    );
    assert!(pass);
}

#[test]
fn c07_transition_frequencies() {
    let mut worst = 0.0f64;
    for q in [2, 3, 5] {
        for (d, e) in [(0.6, 0.4), (0.9, 0.2)] {
            let p = params(d, e, Colors::Finite(q));
            let cfg = CouplingConfig::new(p, LambdaMode::Standard).unwrap();
            let inits = (InitialCondition::IidUniform, InitialCondition::IidUniform);
            let counts = cprime_transition_counts(&cfg, 128, 40, 500, 7 + q as u64, &inits).unwrap();
            for (k, &(n, ones)) in counts.iter().enumerate() {
                let expect = cprime_transition(&p, k >= 2, k % 2 == 1).unwrap();
                let se = (expect * (1.0 - expect) / n as f64).sqrt().max(1.0 / n as f64);
                worst = worst.max((ones as f64 / n as f64 - expect).abs() / se);
            }
        }
    }
    let pass = worst <= 4.0;
    report(7, pass, &format!("max deviation {worst:.2} se over 24 (q, params, pattern) cells"));
    assert!(pass);
}

#[test]
fn c08_cluster_decay() {
    let mut excess_rows = 0;
    let mut partial_excess = 0;
    let mut worst = f64::NEG_INFINITY;
    for d in GRID {
        for e in GRID {
            let s = g_decay_profile(&params(d, e, Colors::Finite(3)), 30, 10_000, 8, &InitialCondition::Constant(0)).unwrap();
            excess_rows += s.ratio_excesses(4.0).len();
            for t in 1..=30 {
                if let (Some(r), Some(se)) = (s.ratio[t], s.ratio_stderr[t]) {
                    worst = worst.max((r - s.bound) / se);
                }
                let slack = 4.0 * s.leftmost_stderr[..=t].iter().map(|x| x * x).sum::<f64>().sqrt();
                partial_excess += (s.partial_sums[t] > s.geometric_sums[t] + slack) as usize;
            }
        }
    }
    let pass = excess_rows == 0 && partial_excess == 0;
    report(8, pass, &format!("rows over bound + 4 se: {excess_rows}; largest (ratio - bound)/se = {worst:.2}; partial sums over: {partial_excess}"));
    assert!(pass);
}

#[test]
fn c09_infinite_color_coupling() {
    let w = LatticeWindow::new(448, 1, Boundary::Free).unwrap();
    let inits = [InitialCondition::IidUniform, InitialCondition::Blocks { size: 5 }];
    let r = qinf_coupling_check(&params(0.5, 0.5, Colors::Infinite), &w, 200, 1000, 9, &inits, 10).unwrap();
    let pass = r.implication_violations == 0 && r.mismatched_replicas <= 1;
    report(
        9,
        pass,
        &format!(
            "implication violations {}; replicas with mismatch {} / 1000 (time shift {}); interval meets G in {}",
            r.implication_violations, r.mismatched_replicas, r.time_shift_mismatches, r.cluster_hits
        ),
    );
    assert!(pass);
}

#[test]
fn c10_threshold_ordering() {
    let full = std::env::var_os("VOTERLAB_FULL").is_some();
    let (depth, reps, width, horizon, reps_c) = if full { (500, 10_000, 256, 2000, 1000) } else { (100, 400, 64, 400, 200) };
    let c = estimate_epsilon_c(0.9, depth, reps, 0.01, 10).unwrap();
    let cp = estimate_epsilon_c_prime(0.9, 3, width, horizon, reps_c, 0.99, 10).unwrap();
    let (mid_c, mid_cp) = ((c.eps_lo + c.eps_hi) / 2.0, (cp.eps_lo + cp.eps_hi) / 2.0);
    let separated = cp.ci_hi < c.ci_lo;
    let pass = mid_cp <= mid_c;
    let verdict = if separated {
        "intervals separate: ergodicity threshold strictly below the percolation threshold"
    } else {
        "intervals overlap: inconclusive"
    };
    report(
        10,
        pass,
        &format!(
            "{} eps_c = {mid_c:.4} [{:.4}, {:.4}], eps_c' = {mid_cp:.4} [{:.4}, {:.4}]; {verdict}",
            if full { "full" } else { "smoke" },
            c.ci_lo,
            c.ci_hi,
            cp.ci_lo,
            cp.ci_hi
        ),
    );
    assert!(pass);
}

#[test]
fn c11_determinism() {
    let runs: [&[&str]; 2] = [
        &["theta", "--delta", "0.5", "--epsilon", "0.5", "--depth", "14", "--exact"],
        &["enhance", "--delta", "0.5", "--depth", "3", "--exact", "--eps-grid", "0.25,0.5,0.75", "--s-grid", "0.25,0.5,0.75"],
    ];
    let mut identical = true;
    for args in runs {
        let outputs: Vec<Vec<u8>> = ["1", "1", "3"]
            .iter()
            .map(|t| {
                let mut a = args.to_vec();
                a.extend(["--threads", t]);
                let out = Command::new(env!("CARGO_BIN_EXE_voterlab")).args(&a).output().unwrap();
                assert!(out.status.success());
                out.stdout
            })
            .collect();
        identical &= outputs.windows(2).all(|w| w[0] == w[1]);
    }
    report(11, identical, "exact theta and enhance outputs byte-identical over 3 runs with 1 and 3 threads");
    assert!(identical);
}
