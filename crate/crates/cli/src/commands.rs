//! The `run`, `sweep`, `compare-dynamics` and `verify` subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fcme_core::dynamics::{couple_dynamics, pgda_sgda_gap, run as run_dynamics};
use fcme_core::metrics::MetricRecord;
use fcme_core::verify::{run_suite, CheckResult, Fault};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::metrics::{evaluate, source_for};
use crate::output::{allocate_dir, write_metrics, write_table, RunManifest, METRICS};

/// Runs one experiment into a fresh directory under `root`; returns it.
pub fn cmd_run(cfg: &ExperimentConfig, root: &Path) -> CliResult<PathBuf> {
    let stem = format!("{}-s{}", cfg.name, cfg.seed);
    run_into(cfg, root, &stem).map(|(dir, _)| dir)
}

/// As [`cmd_run`], naming the directory `stem`; also returns the records
/// (even when the run fails, the error is reported after the manifest).
fn run_into(cfg: &ExperimentConfig, root: &Path, stem: &str) -> CliResult<(PathBuf, Vec<MetricRecord>)> {
    let resolved = cfg.resolved()?;
    let (dir, run_id) = allocate_dir(root, stem)?;
    let mut manifest = RunManifest::start(&run_id, "run", resolved.clone());
    manifest.write(&dir)?;
    let outcome = execute_run(&resolved, &dir, &run_id);
    manifest.finish(&outcome.as_ref().map(|_| ()).map_err(clone_err));
    manifest.write(&dir)?;
    outcome.map(|records| (dir, records))
}

fn clone_err(e: &CliError) -> CliError {
    match e {
        CliError::Config(m) => CliError::Config(m.clone()),
        CliError::Diverged { iteration, reason } => CliError::Diverged { iteration: *iteration, reason: reason.clone() },
        other => CliError::Failed(other.to_string()),
    }
}

fn execute_run(cfg: &ExperimentConfig, dir: &Path, run_id: &str) -> CliResult<Vec<MetricRecord>> {
    let (p, gt) = cfg.build_problem()?;
    let dyn_cfg = cfg.dyn_config()?;
    let traj = run_dynamics(p.as_ref(), &dyn_cfg, cfg.dynamics.algorithm.into())?;
    let source = source_for(p.as_ref(), cfg.metrics.eval_batch, cfg.seed);
    let records = evaluate(p.as_ref(), gt.as_ref(), &traj, &cfg.metrics.names, &source)?;
    write_metrics(&dir.join(METRICS), run_id, &records)?;
    let last = traj.last();
    std::fs::write(dir.join("final_primal.json"), last.primal.to_json()?)?;
    std::fs::write(dir.join("final_dual.json"), last.dual.to_json()?)?;
    if cfg.metrics.snapshots {
        let snaps = dir.join("snapshots");
        std::fs::create_dir_all(&snaps)?;
        for cp in &traj.checkpoints {
            std::fs::write(snaps.join(format!("{:09}_primal.json", cp.iteration)), cp.primal.to_json()?)?;
            std::fs::write(snaps.join(format!("{:09}_dual.json", cp.iteration)), cp.dual.to_json()?)?;
        }
    }
    Ok(records)
}

/// Outcome of one sweep child.
#[derive(Debug)]
pub struct ChildOutcome {
    pub value: String,
    pub dir: Option<PathBuf>,
    pub result: CliResult<Vec<MetricRecord>>,
}

/// One child run per value of `param`, seeds `seed + index` (or all `seed`
/// with `common_seed`), then a `summary.csv` with final / min / max of every
/// metric per value.
pub fn cmd_sweep(
    cfg_path: &Path,
    param: &str,
    values: &[String],
    seed: Option<u64>,
    common_seed: bool,
    root: &Path,
) -> CliResult<PathBuf> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let mut children = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let mut c = ExperimentConfig::load_with(cfg_path, param, v)?;
        if let Some(s) = seed {
            c.seed = s;
        }
        if !common_seed {
            c.seed = c.seed.wrapping_add(i as u64);
        }
        children.push(c.resolved()?);
    }
    let base = &children[0];
    let (dir, sweep_id) = allocate_dir(root, &format!("{}-sweep-{}", base.name, param.replace('.', "_")))?;
    let outcomes: Vec<ChildOutcome> = children
        .par_iter()
        .zip(values.par_iter())
        .enumerate()
        .map(|(i, (c, v))| {
            let stem = format!("{i:02}-{}", v.replace(['/', ' '], "_"));
            match run_into(c, &dir, &stem) {
                Ok((d, records)) => ChildOutcome { value: v.clone(), dir: Some(d), result: Ok(records) },
                Err(e) => ChildOutcome { value: v.clone(), dir: None, result: Err(e) },
            }
        })
        .collect();
    write_summary(&dir.join("summary.csv"), param, &children, &outcomes)?;
    let failed: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().err().map(|e| format!("{}={}: {e}", param, o.value)))
        .collect();
    if failed.is_empty() {
        Ok(dir)
    } else {
        Err(CliError::Failed(format!("sweep {sweep_id}: {} of {} children failed: {}", failed.len(), values.len(), failed.join("; "))))
    }
}

fn write_summary(path: &Path, param: &str, children: &[ExperimentConfig], outcomes: &[ChildOutcome]) -> CliResult<()> {
    let mut metric_names: Vec<String> = Vec::new();
    for o in outcomes {
        for r in o.result.iter().flatten() {
            if !metric_names.contains(&r.name) {
                metric_names.push(r.name.clone());
            }
        }
    }
    let mut header = vec!["index".to_string(), "param".into(), "value".into(), "seed".into(), "eps".into(), "run_dir".into(), "status".into()];
    for m in &metric_names {
        header.extend([format!("final_{m}"), format!("min_{m}"), format!("max_{m}")]);
    }
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .zip(children)
        .enumerate()
        .map(|(i, (o, c))| {
            let mut row = vec![
                i.to_string(),
                param.to_string(),
                o.value.clone(),
                c.seed.to_string(),
                c.dynamics.eps.map(|e| e.to_string()).unwrap_or_default(),
                o.dir.as_ref().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                if o.result.is_ok() { "ok".into() } else { "failed".into() },
            ];
            let mut by_metric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for r in o.result.iter().flatten() {
                by_metric.entry(r.name.as_str()).or_default().push(r.value);
            }
            for m in &metric_names {
                match by_metric.get(m.as_str()) {
                    Some(v) => {
                        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        row.extend([v[v.len() - 1].to_string(), min.to_string(), max.to_string()]);
                    }
                    None => row.extend([String::new(), String::new(), String::new()]),
                }
            }
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(path, &header, &rows)
}

/// Coupled SGDA / PGDA / CTPGDA / ideal-particle runs against a wide
/// reference: one `width_<N>.csv` per width plus `loglog.csv`.
pub fn cmd_compare(cfg: &ExperimentConfig, root: &Path) -> CliResult<PathBuf> {
    let Some(section) = cfg.compare.clone() else {
        return Err(CliError::Config("compare-dynamics needs a [compare] section with widths and n_ref".into()));
    };
    let resolved = cfg.resolved()?;
    let (dir, run_id) = allocate_dir(root, &format!("{}-compare-s{}", cfg.name, cfg.seed))?;
    let mut manifest = RunManifest::start(&run_id, "compare-dynamics", resolved.clone());
    manifest.command = "compare-dynamics".into();
    manifest.write(&dir)?;
    let outcome = (|| -> CliResult<()> {
        let (p, _) = resolved.build_problem()?;
        let cc = resolved.coupling_config(&section)?;
        let report = couple_dynamics(p.as_ref(), &cc)?;
        let mut loglog = Vec::new();
        for w in &report.widths {
            let rows: Vec<Vec<String>> = report
                .times
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    vec![
                        t.to_string(),
                        w.ip_ctpgda[k].to_string(),
                        w.ctpgda_pgda[k].to_string(),
                        w.pgda_sgda[k].to_string(),
                        w.weak_error[k].to_string(),
                    ]
                })
                .collect();
            write_table(
                &dir.join(format!("width_{}.csv", w.width)),
                &["t", "ip_ctpgda", "ctpgda_pgda", "pgda_sgda", "weak_error"],
                &rows,
            )?;
            let e = w.sup_weak_error();
            loglog.push(vec!["width".into(), w.width.to_string(), e.to_string(), (w.width as f64).ln().to_string(), e.ln().to_string()]);
        }
        if !section.eps_values.is_empty() {
            let mut base = cc.base.clone();
            if let Some(n) = section.eps_width {
                base.n_primal = n;
                base.n_dual = n;
            }
            for (eps, gap) in pgda_sgda_gap(p.as_ref(), &base, section.horizon, &section.eps_values, section.n_checkpoints, section.eps_replicates.unwrap_or(section.replicates))? {
                loglog.push(vec!["eps".into(), eps.to_string(), gap.to_string(), eps.ln().to_string(), gap.ln().to_string()]);
            }
        }
        write_table(&dir.join("loglog.csv"), &["table", "x", "y", "log_x", "log_y"], &loglog)
    })();
    manifest.finish(&outcome.as_ref().map(|_| ()).map_err(clone_err));
    manifest.write(&dir)?;
    outcome.map(|_| dir)
}

/// Runs the invariant suite and prints a pass/fail table; fails on the first
/// failing check.
pub fn cmd_verify(seed: u64, fault: Option<Fault>, out: &mut dyn std::io::Write) -> CliResult<Vec<CheckResult>> {
    let results = run_suite(seed, fault)?;
    for r in &results {
        writeln!(out, "{:<4} {:<48} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail)?;
    }
    match results.iter().find(|r| !r.passed) {
        Some(r) => Err(CliError::Failed(format!("verify failed: {}: {}", r.name, r.detail))),
        None => Ok(results),
    }
}
