//! Batch front door: dispatches validated configs to the solvers, writes
//! CSV/JSON artifacts with content hashes, and aggregates suite runs.
//!
//! Numbers are written with the shortest round-trip decimal representation,
//! so identical runs produce byte-identical files; a run's exit status is
//! nonzero iff a certificate missed its declared tolerance.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Plan};
use crate::engine::solve_g_heat;
use crate::error::{Error, Result};
use crate::reflection::{solve_bounded, solve_unbounded, verify_solution, MRSolution};
use crate::skorokhod::{solve_bsp, solve_sp};
use crate::solver::solve_gbsde;
use crate::tree::Scenario;

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "GBSDE_OUT_DIR";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
    pub tol_scale: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out_dir: None,
            threads: 1,
            tol_scale: 1.0,
        }
    }
}

/// Default certificate tolerances, scaled by `--tol-scale`.
pub const MARGIN_TOL: f64 = 2e-3;
pub const FLATNESS_TOL: f64 = 1e-3;
pub const K_RESIDUAL_TOL: f64 = 5e-3;
pub const K_MONOTONE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct CertLine {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CertLine {
    fn new(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub mode: String,
    pub wall_ms: u128,
    pub pass: bool,
    pub certificates: Vec<CertLine>,
    pub files: Vec<FileDigest>,
    pub notes: Vec<String>,
}

/// Runs one config: validate, solve, write artifacts, report.
pub fn run(config_path: &Path, opts: &RunOptions) -> Result<RunReport> {
    let config = ExperimentConfig::load(config_path)?;
    let plan = config.plan()?;
    let start = Instant::now();
    let out_dir = resolve_out_dir(&config, opts)?;
    std::fs::create_dir_all(&out_dir)?;

    let mut files = Vec::new();
    let mut certs = Vec::new();
    let mut notes = Vec::new();
    let scale = opts.tol_scale;

    match plan {
        Plan::Gexp { payoff, band, grid } => {
            notes.push(grid_stats(&grid, &band));
            let field = solve_g_heat(&payoff, &band, &grid)?;
            let mut csv = String::from("t,x,u\n");
            for n in 0..=grid.n_time {
                let t = grid.time_at(n);
                for (i, v) in field.slice(n).iter().enumerate() {
                    let _ = writeln!(csv, "{t},{},{v}", grid.x_at(i));
                }
            }
            files.push(write_artifact(&out_dir, "field.csv", csv.as_bytes())?);
            notes.push(format!("value_at_origin = {}", field.at_origin()));
        }
        Plan::Gbsde {
            terminal,
            gen,
            band,
            grid,
        } => {
            notes.push(grid_stats(&grid, &band));
            let sol = solve_gbsde(&terminal, &gen, &band, &grid)?;
            let mut csv = String::from("t,x,y,z\n");
            for n in 0..=grid.n_time {
                let t = grid.time_at(n);
                let (ys, zs) = (sol.y.slice(n), sol.z_slice(n));
                for i in 0..grid.n_space {
                    let _ = writeln!(csv, "{t},{},{},{}", grid.x_at(i), ys[i], zs[i]);
                }
            }
            files.push(write_artifact(&out_dir, "field.csv", csv.as_bytes())?);
            let k_residual = sol.k_martingale_residual(config.policies.tree_depth)?;
            let k_increase = max_k_increase(|sc| sol.k_path(sc), grid.n_time, config.seed)?;
            let y_scale = sol.y.sup_abs().max(1.0);
            certs.push(CertLine::new(
                "k_martingale_residual",
                k_residual,
                K_RESIDUAL_TOL * scale,
            ));
            certs.push(CertLine::new(
                "k_pathwise_increase",
                k_increase,
                K_MONOTONE_TOL * y_scale * scale,
            ));
            let diag = serde_json::json!({
                "k_martingale_residual": k_residual,
                "k_pathwise_increase": k_increase,
                "max_abs_z": sol.max_abs_z,
                "stability_guard": grid.dt() * gen.lip_z() * (1.0 + 2.0 * sol.max_abs_z),
                "stability_guard_limit": crate::solver::STABILITY_GUARD,
            });
            files.push(write_artifact(
                &out_dir,
                "diagnostics.json",
                serde_json::to_string_pretty(&diag).unwrap().as_bytes(),
            )?);
            notes.push(format!("y_at_origin = {}", sol.y.at_origin()));
        }
        Plan::Skorokhod {
            backward,
            input,
            pair,
            tol,
        } => {
            let sol = if backward {
                solve_bsp(&input, &pair, tol)?
            } else {
                solve_sp(&input, &pair, tol)?
            };
            let mut csv = String::from("t,x,k,k_r,k_l\n");
            for i in 0..sol.times.len() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    sol.times[i], sol.x[i], sol.k[i], sol.k_r[i], sol.k_l[i]
                );
            }
            files.push(write_artifact(&out_dir, "path.csv", csv.as_bytes())?);
            let tv = sol.k_total_variation().max(1.0);
            certs.push(CertLine::new(
                "flatness_l",
                sol.flatness_l,
                tol * tv * scale,
            ));
            certs.push(CertLine::new(
                "flatness_r",
                sol.flatness_r,
                tol * tv * scale,
            ));
            let mut worst_constraint: f64 = 0.0;
            for i in 0..sol.times.len() {
                let t = sol.times[i];
                worst_constraint = worst_constraint
                    .max(pair.l.eval(t, sol.x[i]).max(0.0))
                    .max(-pair.r.eval(t, sol.x[i]).min(0.0));
            }
            certs.push(CertLine::new(
                "constraint_margin",
                worst_constraint,
                tol * scale,
            ));
        }
        Plan::MeanReflected {
            bounded,
            verify_only,
            terminal,
            gen,
            loss,
            band,
            grid,
        } => {
            notes.push(grid_stats(&grid, &band));
            let pol = config.policies.clone();
            let (sol, diag_json): (MRSolution, serde_json::Value) = if bounded {
                let (sol, diag) = solve_bounded(&terminal, &gen, &loss, &band, &grid, &pol)?;
                let j = serde_json::to_value(&diag).unwrap();
                (sol, serde_json::json!({ "fixed_point": j }))
            } else {
                let (sol, diag) = solve_unbounded(&terminal, &gen, &loss, &band, &grid, &pol)?;
                let j = serde_json::to_value(&diag).unwrap();
                (sol, serde_json::json!({ "truncation": j }))
            };
            let report = verify_solution(&sol, &loss, &pol, grid.t_start)?;
            if !verify_only {
                let mut csv = String::from("t,a,a_r,a_l,mean_Y,lower_root,upper_root\n");
                for i in 0..=grid.n_time {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{}",
                        grid.time_at(i),
                        sol.a[i],
                        sol.a_r[i],
                        sol.a_l[i],
                        sol.mean_y[i],
                        sol.band_lower[i],
                        sol.band_upper[i]
                    );
                }
                files.push(write_artifact(&out_dir, "reflector.csv", csv.as_bytes())?);
                let mut csv = String::from("t,x,y,z\n");
                for n in 0..=grid.n_time {
                    let t = grid.time_at(n);
                    let (ys, zs) = (sol.y.slice(n), sol.z_slice(n));
                    for i in 0..grid.n_space {
                        let _ = writeln!(csv, "{t},{},{},{}", grid.x_at(i), ys[i], zs[i]);
                    }
                }
                files.push(write_artifact(&out_dir, "field.csv", csv.as_bytes())?);
                files.push(write_artifact(
                    &out_dir,
                    "diagnostics.json",
                    serde_json::to_string_pretty(&diag_json).unwrap().as_bytes(),
                )?);
            }
            files.push(write_artifact(
                &out_dir,
                "certificates.json",
                serde_json::to_string_pretty(&report).unwrap().as_bytes(),
            )?);
            let a_total = report.a_total.max(1e-12);
            certs.push(CertLine::new(
                "l_margin",
                report.l_margin,
                MARGIN_TOL * scale,
            ));
            certs.push(CertLine::new(
                "r_margin",
                report.r_margin,
                MARGIN_TOL * scale,
            ));
            certs.push(CertLine::new(
                "flatness_r",
                report.flatness_r,
                FLATNESS_TOL * a_total * scale,
            ));
            certs.push(CertLine::new(
                "flatness_l",
                report.flatness_l,
                FLATNESS_TOL * a_total * scale,
            ));
            certs.push(CertLine::new(
                "k_martingale_residual",
                report.k_residual,
                K_RESIDUAL_TOL * scale,
            ));
            certs.push(CertLine::new(
                "representation_identity",
                report.representation_error,
                0.0,
            ));
            certs.push(CertLine::new(
                "a_monotone_and_complementary",
                if report.a_monotone && report.a_complementary {
                    0.0
                } else {
                    1.0
                },
                0.5,
            ));
            notes.push(format!("a_total_variation = {}", report.a_total));
        }
    }

    let pass = certs.iter().all(|c| c.pass);
    let report = RunReport {
        name: config.name.clone(),
        mode: config.mode.to_string(),
        wall_ms: start.elapsed().as_millis(),
        pass,
        certificates: certs,
        files,
        notes,
    };
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )?;
    Ok(report)
}

fn grid_stats(grid: &crate::grid::GridSpec, band: &crate::band::VolatilityBand) -> String {
    format!(
        "grid {} x {} on [{}, {}] x [{}, {}], cfl {:.3}",
        grid.n_time,
        grid.n_space,
        grid.t_start,
        grid.t_end,
        grid.x_min,
        grid.x_max,
        grid.cfl_ratio(band)
    )
}

fn max_k_increase(
    k_path: impl Fn(&Scenario) -> Result<Vec<f64>>,
    n_time: usize,
    seed: u64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut state = seed ^ 0x9e3779b97f4a7c15;
    let mut masks = vec![(0u64, 0u64), (u64::MAX, u64::MAX)];
    for _ in 0..8 {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let hi = state;
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        masks.push((hi, state));
    }
    for (hm, um) in masks {
        let k = k_path(&Scenario::from_masks(n_time, hm, um))?;
        for w in k.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
    }
    Ok(worst)
}

fn resolve_out_dir(config: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf> {
    let root = if let Some(dir) = &opts.out_dir {
        dir.clone()
    } else if let Some(dir) = &config.output.dir {
        PathBuf::from(dir)
    } else if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        PathBuf::from(dir)
    } else {
        PathBuf::from("out")
    };
    Ok(root.join(&config.name))
}

fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<FileDigest> {
    let path = dir.join(name);
    std::fs::write(&path, bytes)?;
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(FileDigest {
        path: name.to_string(),
        sha256: hex,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub config: String,
    pub pass: bool,
    pub error: Option<String>,
    pub certificates: Vec<CertLine>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub all_pass: bool,
    pub runs: Vec<SuiteEntry>,
}

#[derive(Debug, serde::Deserialize)]
struct Manifest {
    configs: Vec<String>,
}

/// Runs every config in a manifest (members may run concurrently; output
/// order follows the manifest). A member failure is recorded, not fatal.
pub fn suite(manifest_path: &Path, opts: &RunOptions) -> Result<SuiteReport> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<SuiteEntry> = pool.install(|| {
        manifest
            .configs
            .par_iter()
            .map(|rel| {
                let path = base.join(rel);
                match run(&path, opts) {
                    Ok(report) => SuiteEntry {
                        config: rel.clone(),
                        pass: report.pass,
                        error: None,
                        certificates: report.certificates,
                    },
                    Err(e) => SuiteEntry {
                        config: rel.clone(),
                        pass: false,
                        error: Some(e.to_string()),
                        certificates: Vec::new(),
                    },
                }
            })
            .collect()
    });
    let all_pass = runs.iter().all(|r| r.pass);
    let report = SuiteReport { all_pass, runs };
    let root = opts
        .out_dir
        .clone()
        .or_else(|| std::env::var(OUT_DIR_ENV).ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&root)?;
    std::fs::write(
        root.join("suite_report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationSummary {
    pub name: String,
    pub mode: String,
    pub details: Vec<String>,
}

/// Parses and validates a config without running it, reporting the derived
/// quantities a run would use.
pub fn validate(config_path: &Path) -> Result<ValidationSummary> {
    let config = ExperimentConfig::load(config_path)?;
    let plan = config.plan()?;
    let mut details = Vec::new();
    match &plan {
        Plan::Gexp { band, grid, .. } => {
            details.push(format!("grid {} x {}", grid.n_time, grid.n_space));
            details.push(format!("cfl_ratio = {}", grid.cfl_ratio(band)));
        }
        Plan::Gbsde {
            gen, band, grid, ..
        } => {
            details.push(format!("grid {} x {}", grid.n_time, grid.n_space));
            details.push(format!("cfl_ratio = {}", grid.cfl_ratio(band)));
            details.push(format!("lip_y = {}, lip_z = {}", gen.lip_y(), gen.lip_z()));
        }
        Plan::Skorokhod {
            input, pair, tol, ..
        } => {
            details.push(format!("steps = {}", input.values.len() - 1));
            details.push(format!(
                "bi-lipschitz c = {}, C = {}, tol = {tol}",
                pair.c_lo(),
                pair.c_hi()
            ));
        }
        Plan::MeanReflected {
            gen,
            loss,
            band,
            grid,
            ..
        } => {
            details.push(format!("grid {} x {}", grid.n_time, grid.n_space));
            details.push(format!("cfl_ratio = {}", grid.cfl_ratio(band)));
            let m = crate::reflection::contraction_constant(gen, loss, band);
            details.push(format!(
                "loss c = {}, C = {}, gap = {}",
                loss.c_lo(),
                loss.c_hi(),
                loss.gap_on(&grid.times())
            ));
            details.push(format!("contraction constant M = {m}"));
        }
    }
    Ok(ValidationSummary {
        name: config.name,
        mode: config.mode.to_string(),
        details,
    })
}
