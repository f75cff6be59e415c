//! One function per subcommand. Each returns the record, its CSV table and
//! any images, all built in memory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use voterlab_core::coupling::{
    cprime_transition, cstar_lower_transition, estimate_epsilon_c_prime, extinction_experiment, mean_field_bound,
    run_coupled, CouplingConfig, LambdaMode,
};
use voterlab_core::dynamics::{canonical_labels, run_forward};
use voterlab_core::enhancement::{gamma, pivotal_inequality_check, russo_check, theta_n_enh, Mode, MAX_ENHANCED_DEPTH};
use voterlab_core::genealogy::{estimate_epsilon_c, exact_theta_sequence, theta_n_mc};
use voterlab_core::qinf::{g_decay_profile, permutation_invariance_test, qinf_coupling_check};
use voterlab_core::renorm::{clt_box_bound, positive_epsilon_certificate, renorm_certificate, BoxSpec};
use voterlab_core::{Boundary, Colors, LatticeWindow, ModelParams};

use crate::config::{Command, ExperimentConfig, QinfMode};
use crate::error::CliError;
use crate::render::{default_palette, render_binary, render_colors, render_labels};
use crate::{ResultRecord, RunOutput, SCHEMA};

/// Column header of each subcommand's CSV table.
pub fn csv_header(cfg: &ExperimentConfig) -> &'static str {
    match (cfg.command, cfg.qinf_mode) {
        (Command::Simulate, _) => "row,col,value",
        (Command::Theta, _) => "n,value,stderr,replicas,seed,exact",
        (Command::Critical, _) => "delta,depth,eps_lo,eps_hi,ci_lo,ci_hi,threshold,replicas,seed",
        (Command::Box, _) => "v_offset,p_hat,stderr,replicas,seed",
        (Command::Enhance, _) => {
            "delta,epsilon,s,n,theta,theta_stderr,exact,russo_eps_error,russo_s_error,omega_sum,lambda_sum,gamma,inequality_pass"
        }
        (Command::Couple, _) => "row,density_c,density_c_prime,density_c_star,replicas,seed",
        (Command::Qinf, QinfMode::Decay) => {
            "row,sup,sup_stderr,leftmost,leftmost_stderr,ratio,ratio_stderr,bound,partial_sum,geometric_sum"
        }
        (Command::Qinf, _) => "quantity,value",
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let params = ModelParams::new(cfg.delta, cfg.epsilon, cfg.q)?;
    let (results, body, exact, images) = match cfg.command {
        Command::Simulate => simulate(cfg, &params)?,
        Command::Theta => theta(cfg, &params)?,
        Command::Critical => critical(cfg)?,
        Command::Box => box_cmd(cfg, &params)?,
        Command::Enhance => enhance(cfg)?,
        Command::Couple => couple(cfg, &params)?,
        Command::Qinf => qinf(cfg, &params)?,
    };
    let mut csv = String::from(csv_header(cfg));
    csv.push('\n');
    csv.push_str(&body);
    Ok(RunOutput {
        record: ResultRecord {
            schema: SCHEMA.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            seed: cfg.seed,
            replicas: if exact { 0 } else { cfg.replicas },
            exact,
            results,
        },
        csv,
        images,
    })
}

type Parts = (Value, String, bool, Vec<(PathBuf, Vec<u8>)>);

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

/// `quantity,value` rows from the scalar fields of a JSON object.
fn scalar_rows(v: &Value) -> String {
    let mut s = String::new();
    if let Value::Object(map) = v {
        for (k, x) in map {
            match x {
                Value::Number(_) | Value::Bool(_) => writeln!(s, "{k},{x}").unwrap(),
                Value::String(t) => writeln!(s, "{k},{t}").unwrap(),
                _ => {}
            }
        }
    }
    s
}

fn suffixed(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    let ext = path.extension().map_or_else(|| "pgm".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}_{tag}.{ext}"))
}

fn simulate(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Parts, CliError> {
    let window = LatticeWindow::new(cfg.width, cfg.height, cfg.boundary)?;
    let traj = run_forward(&cfg.init, params, &window, cfg.seed, 0)?;
    let rows: Vec<Vec<u64>> = (0..traj.len()).map(|k| traj.values(k)).collect();
    let shown: Vec<Vec<u64>> = match cfg.q {
        Colors::Finite(_) => rows.clone(),
        Colors::Infinite => rows.iter().map(|r| canonical_labels(r).into_iter().map(u64::from).collect()).collect(),
    };
    let mut csv = String::new();
    for (k, row) in shown.iter().enumerate() {
        let t = window.first_row + k as i64;
        for (i, v) in row.iter().enumerate() {
            writeln!(csv, "{t},{},{v}", window.column(t, i)).unwrap();
        }
    }
    let distinct: Vec<usize> = shown
        .iter()
        .map(|r| r.iter().collect::<std::collections::BTreeSet<_>>().len())
        .collect();
    let mut images = vec![];
    if let Some(path) = &cfg.image {
        let img = match cfg.q {
            Colors::Finite(q) => render_colors(&rows, &window, &default_palette(q)?)?,
            Colors::Infinite => render_labels(&rows, &window)?,
        };
        images.push((path.clone(), img));
    }
    let results = json!({
        "rows": rows.len(),
        "distinct_per_row": distinct,
        "final_row": shown.last(),
    });
    Ok((results, csv, false, images))
}

fn theta(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Parts, CliError> {
    if cfg.depth == 0 {
        return Err(CliError::Usage("theta needs depth >= 1".into()));
    }
    let mut csv = String::new();
    if cfg.exact {
        let seq = exact_theta_sequence(&params.law(), cfg.depth)?;
        for (k, v) in seq.iter().enumerate() {
            writeln!(csv, "{},{v},0,0,,true", k + 1).unwrap();
        }
        let results = json!({ "n": cfg.depth, "value": seq[cfg.depth - 1], "stderr": 0.0, "sequence": seq });
        Ok((results, csv, true, vec![]))
    } else {
        let est = theta_n_mc(params, cfg.depth, cfg.replicas, cfg.seed)?;
        writeln!(csv, "{},{},{},{},{},false", est.n, est.p_hat, est.stderr, est.replicas, cfg.seed).unwrap();
        let results = json!({ "n": est.n, "value": est.p_hat, "stderr": est.stderr });
        Ok((results, csv, false, vec![]))
    }
}

fn critical(cfg: &ExperimentConfig) -> Result<Parts, CliError> {
    let est = estimate_epsilon_c(cfg.delta, cfg.depth, cfg.replicas, cfg.threshold, cfg.seed)?;
    let csv = format!(
        "{},{},{},{},{},{},{},{},{}\n",
        est.delta, est.depth, est.eps_lo, est.eps_hi, est.ci_lo, est.ci_hi, est.survival_threshold, est.replicas, est.seed
    );
    Ok((serde_json::to_value(&est)?, csv, false, vec![]))
}

fn box_cmd(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Parts, CliError> {
    let n = cfg.depth;
    let k = if cfg.k == 0 { (n as f64 * cfg.delta / 4.0).floor() as usize } else { cfg.k };
    let spec = BoxSpec::new(k, n)?;
    let bound = clt_box_bound(n, cfg.delta)?;
    let cert = renorm_certificate(params, &spec, cfg.replicas, cfg.seed)?;
    let positive = if cfg.positive_search {
        Some(positive_epsilon_certificate(cfg.delta, cfg.q, &spec, cfg.replicas, cfg.seed, 10)?)
    } else {
        None
    };
    let mut csv = String::new();
    for e in &cert.estimates {
        writeln!(csv, "{},{},{},{},{}", e.v_offset, e.p_hat, e.stderr, e.replicas, cfg.seed).unwrap();
    }
    let results = json!({ "clt_bound": bound, "certificate": cert, "positive_epsilon": positive });
    Ok((results, csv, false, vec![]))
}

fn enhance(cfg: &ExperimentConfig) -> Result<Parts, CliError> {
    let eps = if cfg.eps_grid.is_empty() { vec![cfg.epsilon] } else { cfg.eps_grid.clone() };
    let ss = if cfg.s_grid.is_empty() { vec![cfg.s] } else { cfg.s_grid.clone() };
    let n = cfg.depth;
    let mut csv = String::new();
    let mut points = vec![];
    for &e in &eps {
        for &s in &ss {
            let params = ModelParams::new(cfg.delta, e, cfg.q)?;
            let mode = if cfg.exact { Mode::Exact } else { Mode::MonteCarlo { replicas: cfg.replicas, seed: cfg.seed } };
            let th = theta_n_enh(&params, s, n, mode)?;
            let (russo, ineq) = if n <= MAX_ENHANCED_DEPTH {
                (Some(russo_check(&params, s, n, cfg.h)?), Some(pivotal_inequality_check(&params, s, n)?))
            } else {
                (None, None)
            };
            let g = gamma(cfg.delta, e, s).ok();
            writeln!(
                csv,
                "{},{e},{s},{n},{},{},{},{},{},{},{},{},{}",
                cfg.delta,
                th.p_hat,
                th.stderr,
                th.exact,
                opt(russo.as_ref().map(|r| r.epsilon_check.error)),
                opt(russo.as_ref().map(|r| r.s_check.error)),
                opt(ineq.as_ref().map(|i| i.omega_sum)),
                opt(ineq.as_ref().map(|i| i.lambda_sum)),
                opt(g),
                ineq.as_ref().map_or(String::new(), |i| i.pass.to_string()),
            )
            .unwrap();
            points.push(json!({
                "epsilon": e, "s": s, "theta": th, "russo": russo, "pivotal_inequality": ineq, "gamma": g,
            }));
        }
    }
    Ok((json!({ "n": n, "points": points }), csv, cfg.exact, vec![]))
}

fn couple(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Parts, CliError> {
    let lambda = if cfg.standard_coupling { LambdaMode::Standard } else { LambdaMode::Independent(cfg.s) };
    let ccfg = CouplingConfig::new(*params, lambda)?;
    let horizon = cfg.height - 1;
    let inits = (cfg.init.clone(), cfg.init_b.clone());
    let stats = extinction_experiment(&ccfg, cfg.width, horizon, cfg.replicas, cfg.seed, &inits)?;
    let s_eff = match lambda {
        LambdaMode::Standard => 1.0 / ccfg.q as f64,
        LambdaMode::Independent(s) => s,
    };
    let mut cprime = vec![];
    let mut cstar = vec![];
    for (l, r) in [(false, false), (false, true), (true, false), (true, true)] {
        cprime.push(cprime_transition(params, l, r)?);
        cstar.push(cstar_lower_transition(params, s_eff, l, r)?);
    }
    let bisect = if cfg.bisect {
        Some(estimate_epsilon_c_prime(cfg.delta, ccfg.q, cfg.width, horizon, cfg.replicas, cfg.threshold, cfg.seed)?)
    } else {
        None
    };
    let mut csv = String::new();
    for h in 0..=horizon {
        writeln!(
            csv,
            "{h},{},{},{},{},{}",
            stats.density_c[h], stats.density_c_prime[h], stats.density_c_star[h], cfg.replicas, cfg.seed
        )
        .unwrap();
    }
    let mut images = vec![];
    if let Some(path) = &cfg.image {
        let window = LatticeWindow::new(cfg.width, cfg.height, Boundary::Periodic)?;
        let traj = run_coupled(&ccfg, &window, &inits, cfg.seed, 0)?;
        let c: Vec<Vec<bool>> = traj.iter().map(|s| s.c.clone()).collect();
        let cp: Vec<Vec<bool>> = traj.iter().map(|s| s.c_prime.clone()).collect();
        let cs: Vec<Vec<bool>> = traj.iter().map(|s| s.c_star.clone()).collect();
        images.push((suffixed(path, "c"), render_binary(&c, &window)?));
        images.push((suffixed(path, "cprime"), render_binary(&cp, &window)?));
        images.push((suffixed(path, "cstar"), render_binary(&cs, &window)?));
    }
    let results = json!({
        "horizon": horizon,
        "extinct_fraction_c": stats.extinct_fraction_c(),
        "extinct_fraction_c_prime": stats.extinct_fraction_c_prime(),
        "extinct_fraction_c_star": stats.extinct_fraction_c_star(),
        "final_density_c": stats.density_c[horizon],
        "final_density_c_prime": stats.density_c_prime[horizon],
        "final_density_c_star": stats.density_c_star[horizon],
        "violations": stats.violations,
        "cprime_table": cprime,
        "cstar_lower_table": cstar,
        "s": s_eff,
        "mean_field_bound": mean_field_bound(cfg.q)?,
        "epsilon_c_prime": bisect,
    });
    Ok((results, csv, false, images))
}

fn qinf(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Parts, CliError> {
    match cfg.qinf_mode {
        QinfMode::Decay => {
            let stats = g_decay_profile(params, cfg.depth, cfg.replicas, cfg.seed, &cfg.init)?;
            let csv = stats.to_csv().split_once('\n').map(|(_, rest)| rest.to_string()).unwrap_or_default();
            Ok((serde_json::to_value(&stats)?, csv, false, vec![]))
        }
        QinfMode::Perm => {
            let q = cfg.q.finite().ok_or_else(|| CliError::Usage("perm needs a finite q".into()))?;
            let window = LatticeWindow::new(cfg.width, 1, cfg.boundary)?;
            let colors: Vec<u32> = (0..q).collect();
            let report = permutation_invariance_test(params, &window, cfg.height - 1, cfg.replicas, cfg.seed, &colors)?;
            let v = serde_json::to_value(&report)?;
            Ok((v.clone(), scalar_rows(&v), false, vec![]))
        }
        QinfMode::Couple => {
            let window = LatticeWindow::new(cfg.width, 1, cfg.boundary)?;
            let inits = [cfg.init.clone(), cfg.init_b.clone()];
            let report = qinf_coupling_check(params, &window, cfg.height - 1, cfg.replicas, cfg.seed, &inits, cfg.radius)?;
            let v = serde_json::to_value(&report)?;
            Ok((v.clone(), scalar_rows(&v), false, vec![]))
        }
    }
}
