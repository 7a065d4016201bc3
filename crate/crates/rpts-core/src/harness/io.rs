//! CSV and run-directory artifacts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! an emitted file reproduces the in-memory values bit for bit. All files
//! are UTF-8 with LF line endings, and every writer is deterministic: the
//! same data produces byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::config::{config_to_toml, load_config, Algorithm, ExperimentConfig};
use super::runner::{survival_report, AggregateResult, ExperimentResult, RunArtifacts};
use crate::survival::SurvivalReport;

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Writes a CSV file, creating parent directories as needed.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(path_str(parent), e))?;
        }
    }
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path_str(path), e))
}

/// Reads a CSV file into its header and rows. Rows must all have the
/// header's width.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| Error::Parse {
        path: path_str(path),
        line: 1,
        reason: "empty file".into(),
    })?;
    let header: Vec<String> = header_line.split(',').map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_owned).collect();
        if row.len() != header.len() {
            return Err(Error::Parse {
                path: path_str(path),
                line: idx + 1,
                reason: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path_str(path),
        line,
        reason: format!("invalid float `{field}`"),
    })
}

/// Loads particles from a CSV file: one particle per row, comma-separated
/// coordinates. A non-numeric first line is treated as a header and
/// skipped; any leading index column must be omitted.
pub fn load_particles_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut particles: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let numeric: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match numeric {
            Ok(coords) => {
                if let Some(first) = particles.first() {
                    if coords.len() != first.len() {
                        return Err(Error::Parse {
                            path: path_str(path),
                            line: idx + 1,
                            reason: format!(
                                "particle has {} coordinates, previous rows have {}",
                                coords.len(),
                                first.len()
                            ),
                        });
                    }
                }
                particles.push(coords);
            }
            Err(_) if idx == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    path: path_str(path),
                    line: idx + 1,
                    reason: "row contains non-numeric fields".into(),
                });
            }
        }
    }
    if particles.is_empty() {
        return Err(Error::Parse {
            path: path_str(path),
            line: 1,
            reason: "no particle rows".into(),
        });
    }
    Ok(particles)
}

fn coord_header(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("c{i}")).collect()
}

/// Writes particles with their index and optional per-particle extras.
fn write_particles_csv(
    path: &Path,
    particles: &[Vec<f64>],
    extra: Option<(&str, &[f64])>,
) -> Result<()> {
    let dim = particles.first().map_or(0, Vec::len);
    let coords = coord_header(dim);
    let mut header: Vec<&str> = vec!["particle"];
    header.extend(coords.iter().map(String::as_str));
    if let Some((name, _)) = extra {
        header.push(name);
    }
    let rows: Vec<Vec<String>> = particles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row = vec![i.to_string()];
            row.extend(p.iter().map(|&x| fmt_f64(x)));
            if let Some((_, values)) = extra {
                row.push(fmt_f64(values[i]));
            }
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Aggregate regret curves, schema
/// `t,mean_avg_regret,stderr_avg_regret,mean_cum_regret,stderr_cum_regret`.
pub fn write_regret_csv(path: &Path, agg: &AggregateResult) -> Result<()> {
    let header = [
        "t",
        "mean_avg_regret",
        "stderr_avg_regret",
        "mean_cum_regret",
        "stderr_cum_regret",
    ];
    let rows: Vec<Vec<String>> = (0..agg.mean_avg_regret.len())
        .map(|t| {
            vec![
                (t + 1).to_string(),
                fmt_f64(agg.mean_avg_regret[t]),
                fmt_f64(agg.stderr_avg_regret[t]),
                fmt_f64(agg.mean_cum_regret[t]),
                fmt_f64(agg.stderr_cum_regret[t]),
            ]
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Parses a regret CSV back into `(t, mean_avg, stderr_avg, mean_cum,
/// stderr_cum)` rows.
pub fn read_regret_csv(path: &Path) -> Result<Vec<(u64, [f64; 4])>> {
    let (header, rows) = read_csv(path)?;
    let expected = [
        "t",
        "mean_avg_regret",
        "stderr_avg_regret",
        "mean_cum_regret",
        "stderr_cum_regret",
    ];
    if header != expected {
        return Err(Error::Parse {
            path: path_str(path),
            line: 1,
            reason: format!("unexpected header {header:?}"),
        });
    }
    rows.iter()
        .enumerate()
        .map(|(idx, row)| {
            let line = idx + 2;
            let t = row[0].trim().parse::<u64>().map_err(|_| Error::Parse {
                path: path_str(path),
                line,
                reason: format!("invalid step `{}`", row[0]),
            })?;
            let mut values = [0.0; 4];
            for (v, field) in values.iter_mut().zip(&row[1..]) {
                *v = parse_f64(path, line, field)?;
            }
            Ok((t, values))
        })
        .collect()
}

fn run_dir_name(run_index: u64) -> String {
    format!("run_{run_index:04}")
}

fn write_run_artifacts(dir: &Path, cfg: &ExperimentConfig, run: &RunArtifacts) -> Result<()> {
    if cfg.record.particle_snapshots {
        if let (Some(initial), Some(finals), Some(lw), Some(pi)) = (
            &run.initial_particles,
            &run.final_particles,
            &run.final_log_weights,
            &run.avg_weights,
        ) {
            write_particles_csv(&dir.join("particles_initial.csv"), initial, None)?;
            write_particles_csv(
                &dir.join("particles_final.csv"),
                finals,
                Some(("log_weight", lw)),
            )?;
            let rows: Vec<Vec<String>> = pi
                .iter()
                .enumerate()
                .map(|(i, &w)| vec![i.to_string(), fmt_f64(w)])
                .collect();
            write_csv(&dir.join("avg_weights.csv"), &["particle", "avg_weight"], &rows)?;
        }
        if let Some(snaps) = &run.block_snapshots {
            let mut rows = Vec::new();
            for snap in snaps {
                for (i, p) in snap.particles.iter().enumerate() {
                    rows.push(vec![
                        snap.domain.to_string(),
                        snap.block.to_string(),
                        i.to_string(),
                        fmt_f64(p[0]),
                        fmt_f64(p[1]),
                        fmt_f64(snap.weights[i]),
                    ]);
                }
            }
            write_csv(
                &dir.join("blocks_final.csv"),
                &["domain", "block", "particle", "rate", "base", "weight"],
                &rows,
            )?;
        }
    }
    if let Some(log) = &run.weight_log {
        if cfg.record.log_weights {
            let n = log.log_weights.first().map_or(0, Vec::len);
            let names: Vec<String> = (0..n).map(|i| format!("lw_{i}")).collect();
            let mut header: Vec<&str> = vec!["t"];
            header.extend(names.iter().map(String::as_str));
            let rows: Vec<Vec<String>> = log
                .times
                .iter()
                .zip(&log.log_weights)
                .map(|(t, lw)| {
                    let mut row = vec![t.to_string()];
                    row.extend(lw.iter().map(|&x| fmt_f64(x)));
                    row
                })
                .collect();
            write_csv(&dir.join("log_weights.csv"), &header, &rows)?;
        }
        if cfg.record.arm_frequency {
            let rows: Vec<Vec<String>> = log
                .times
                .iter()
                .zip(&log.arm0_freq)
                .map(|(t, f)| vec![t.to_string(), fmt_f64(*f)])
                .collect();
            write_csv(&dir.join("arm_frequency.csv"), &["t", "arm0_freq"], &rows)?;
        }
    }
    Ok(())
}

/// Writes the whole run directory: the resolved config, the aggregate
/// regret curves, a per-run summary, and per-run artifact files for every
/// flag in `cfg.record`.
pub fn write_experiment(dir: &Path, cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(path_str(dir), e))?;
    // The directory itself is the output location; embedding it would make
    // otherwise-identical run directories differ.
    let mut resolved = cfg.clone();
    resolved.output_dir = None;
    fs::write(dir.join("config.toml"), config_to_toml(&resolved)?)
        .map_err(|e| Error::io(path_str(&dir.join("config.toml")), e))?;
    write_regret_csv(&dir.join("regret.csv"), &result.aggregate)?;

    let rows: Vec<Vec<String>> = result
        .runs
        .iter()
        .map(|run| {
            let last = run.regret.horizon().saturating_sub(1);
            vec![
                run.run_index.to_string(),
                run.seed.to_string(),
                fmt_f64(run.regret.cumulative[last]),
                fmt_f64(run.regret.running_average[last]),
                run.regen_times.len().to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("summary.csv"),
        &["run", "seed", "final_cum_regret", "final_avg_regret", "regen_count"],
        &rows,
    )?;

    if cfg.record.any() {
        for run in &result.runs {
            write_run_artifacts(&dir.join("runs").join(run_dir_name(run.run_index)), cfg, run)?;
        }
    }
    Ok(())
}

/// The recorded pieces of one run that survival analysis needs.
#[derive(Debug, Clone)]
pub struct RecordedRun {
    pub run_index: u64,
    pub particles: Vec<Vec<f64>>,
    pub avg_weights: Vec<f64>,
}

fn read_avg_weights(path: &Path) -> Result<Vec<f64>> {
    let (header, rows) = read_csv(path)?;
    if header != ["particle", "avg_weight"] {
        return Err(Error::Parse {
            path: path_str(path),
            line: 1,
            reason: format!("unexpected header {header:?}"),
        });
    }
    rows.iter()
        .enumerate()
        .map(|(idx, row)| parse_f64(path, idx + 2, &row[1]))
        .collect()
}

fn read_indexed_particles(path: &Path) -> Result<Vec<Vec<f64>>> {
    let (header, rows) = read_csv(path)?;
    if header.first().map(String::as_str) != Some("particle") {
        return Err(Error::Parse {
            path: path_str(path),
            line: 1,
            reason: "expected a `particle` index column".into(),
        });
    }
    rows.iter()
        .enumerate()
        .map(|(idx, row)| {
            row[1..]
                .iter()
                .map(|f| parse_f64(path, idx + 2, f))
                .collect()
        })
        .collect()
}

/// Reads a run directory produced by [`write_experiment`], returning the
/// config and the recorded runs in index order. Errors precisely when the
/// needed artifacts were not recorded.
pub fn read_recorded_runs(dir: &Path) -> Result<(ExperimentConfig, Vec<RecordedRun>)> {
    let cfg = load_config(&dir.join("config.toml"))?;
    let runs_dir = dir.join("runs");
    if !cfg.record.particle_snapshots || !runs_dir.is_dir() {
        return Err(Error::Config(format!(
            "{}: no particle snapshots recorded; re-run with record.particle_snapshots = true",
            dir.display()
        )));
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(&runs_dir)
        .map_err(|e| Error::io(path_str(&runs_dir), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut runs = Vec::new();
    for entry in entries {
        let name = entry.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let Some(index) = name.strip_prefix("run_").and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        let particles = read_indexed_particles(&entry.join("particles_initial.csv"))?;
        let avg_weights = read_avg_weights(&entry.join("avg_weights.csv"))?;
        if avg_weights.len() != particles.len() {
            return Err(Error::Parse {
                path: path_str(&entry),
                line: 1,
                reason: format!(
                    "{} particles but {} average weights",
                    particles.len(),
                    avg_weights.len()
                ),
            });
        }
        runs.push(RecordedRun {
            run_index: index,
            particles,
            avg_weights,
        });
    }
    if runs.is_empty() {
        return Err(Error::Config(format!(
            "{}: no recorded runs found",
            dir.display()
        )));
    }
    Ok((cfg, runs))
}

/// Survival reports for every recorded run of a directory. Only pts runs
/// qualify: regeneration changes the particle set mid-run, which makes the
/// running-average weights incomparable across one drift matrix.
pub fn survival_reports_for_run_dir(dir: &Path, tol: f64) -> Result<Vec<(u64, SurvivalReport)>> {
    let (cfg, runs) = read_recorded_runs(dir)?;
    if cfg.algorithm != Algorithm::Pts {
        return Err(Error::Config(format!(
            "survival analysis assumes a fixed particle set; this run directory was produced by {}",
            cfg.algorithm
        )));
    }
    runs.into_iter()
        .map(|run| {
            survival_report(&cfg.env, run.particles, &run.avg_weights, tol)
                .map(|report| (run.run_index, report))
        })
        .collect()
}

/// Writes the per-run survival verdicts produced by
/// [`survival_reports_for_run_dir`].
pub fn write_survival_csv(path: &Path, reports: &[(u64, SurvivalReport)]) -> Result<()> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(run, report)| {
            vec![
                run.to_string(),
                if report.holds() { "holds" } else { "violated" }.to_string(),
                report.support.len().to_string(),
                fmt_f64(report.tol),
            ]
        })
        .collect();
    write_csv(path, &["run", "verdict", "survivors", "tol"], &rows)
}

/// Writes envelope-report rows: `breakpoint,particle_a,particle_b,
/// in_contraction_set`, with an empty `particle_b` on boundary rows.
pub fn write_envelope_csv(path: &Path, rows: &[super::runner::EnvelopeRow]) -> Result<()> {
    let out: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            vec![
                fmt_f64(row.breakpoint),
                row.particle_a.to_string(),
                row.particle_b.map_or_else(String::new, |p| p.to_string()),
                row.in_contraction_set.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        &["breakpoint", "particle_a", "particle_b", "in_contraction_set"],
        &out,
    )
}
