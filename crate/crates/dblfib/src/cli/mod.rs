//! Command-line batch runner: scenario in, CSV/JSON artifacts plus a manifest out.

pub mod io;
pub mod scenario;

use crate::bolker::{bolker_report, BolkerReport};
use crate::fibration::CanonicalPoint;
use crate::microlocal::{chi_map, critical_point_solve, default_lambdas, planar_phase_grid, propagate_wavefront, wavefront_scan, PhaseDiagnostics};
use crate::recovery::{foliation_validate, layer_strip};
use crate::transforms::{forward, sinogram, TransformSpec};
use clap::{Parser, Subcommand};
use io::{sha256_hex, GridData, Manifest, OutputEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenario::{build, build_field, build_foliation, parse_scenario, Scenario, SchemaError};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "dblfib", version, about = "Double fibration transforms: forward runs, Bolker checks, wavefront detection and layer stripping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario JSON file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Evaluate the transform on the scenario grid.
    Forward,
    /// Bolker report for each probe covector.
    Bolker,
    /// Finite-lambda wavefront scan of the field.
    Wavefront,
    /// Critical points and phase properties of K_lambda.
    PhaseCheck,
    /// Layer stripping over a foliation.
    Recover,
    /// Schema check only.
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Bolker => "bolker",
            Command::Wavefront => "wavefront",
            Command::PhaseCheck => "phase-check",
            Command::Recover => "recover",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{module}::{variant}: {message}")]
    Task { module: &'static str, variant: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Task { .. } => 1,
        }
    }

    fn task<E: std::fmt::Debug + std::fmt::Display>(module: &'static str, e: E) -> Self {
        let dbg = format!("{e:?}");
        let variant = dbg.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or("").to_string();
        CliError::Task { module, variant, message: e.to_string() }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source: e }
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable report");
    s.push('\n');
    s.into_bytes()
}

/// Artifacts of one task, written next to the manifest.
type Artifacts = Vec<(String, Vec<u8>)>;

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let started = Instant::now();
    let cfg_path = cli.config.as_ref().ok_or_else(|| SchemaError {
        field: "--config".into(),
        line: 0,
        message: "a scenario file is required".into(),
    })?;
    let bytes = std::fs::read(cfg_path).map_err(|e| io_err(cfg_path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let base = cfg_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let sc = parse_scenario(&text, &base)?;
    if cli.command == Command::Validate {
        return Ok(Vec::new());
    }
    if let Some(n) = cli.threads {
        // A second initialisation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let seed = cli.seed.unwrap_or(sc.seed);
    let artifacts = match cli.command {
        Command::Forward => run_forward(&sc, &base)?,
        Command::Bolker => run_bolker(&sc, seed)?,
        Command::Wavefront => run_wavefront(&sc, &base)?,
        Command::PhaseCheck => run_phase(&sc, seed)?,
        Command::Recover => run_recover(&sc, &base, seed)?,
        Command::Validate => unreachable!(),
    };
    std::fs::create_dir_all(&cli.out).map_err(|e| io_err(&cli.out, e))?;
    let mut written = Vec::new();
    let mut outputs = Vec::new();
    for (name, data) in &artifacts {
        let p = cli.out.join(name);
        std::fs::write(&p, data).map_err(|e| io_err(&p, e))?;
        outputs.push(OutputEntry { file: name.clone(), sha256: sha256_hex(data) });
        written.push(p);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cli.command.name().into(),
        config: cfg_path.display().to_string(),
        config_sha256: sha256_hex(&bytes),
        seed,
        threads: rayon::current_num_threads(),
        started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        wall_time_s: started.elapsed().as_secs_f64(),
        outputs,
    };
    let mp = cli.out.join("manifest.json");
    std::fs::write(&mp, json(&manifest)).map_err(|e| io_err(&mp, e))?;
    written.push(mp);
    Ok(written)
}

fn run_forward(sc: &Scenario, base: &Path) -> Result<Artifacts, CliError> {
    let b = build(sc)?;
    let f = build_field(sc, base)?;
    if b.grid.is_empty() {
        return Err(SchemaError { field: "transform.grid".into(), line: 0, message: "forward needs a grid".into() }.into());
    }
    let spec = TransformSpec { fibration: b.fibration, kind: b.kind, quadrature: b.quadrature };
    let axes: Vec<&str> = b.axes.iter().map(|s| s.as_str()).collect();
    let sino = sinogram(&spec, &f, &axes, b.grid.clone());
    for (i, e) in sino.errors.iter().take(5) {
        log::warn!("node {i}: {e}");
    }
    let data = GridData { axes: b.axes, coords: b.grid, values: sino.values };
    let name = sc.task.forward.as_ref().and_then(|t| t.output.clone()).unwrap_or_else(|| "sinogram.csv".into());
    Ok(vec![(name, data.to_csv().into_bytes())])
}

#[derive(Serialize)]
struct ProbeResult {
    index: usize,
    x: Vec<f64>,
    eta: Vec<f64>,
    reports: Vec<BolkerReport>,
    error: Option<String>,
}

fn run_bolker(sc: &Scenario, seed: u64) -> Result<Artifacts, CliError> {
    let b = build(sc)?;
    let fib = &b.fibration;
    let probes = sc.task.bolker.as_ref().map(|t| t.probes.clone()).unwrap_or_default();
    let mut out = Vec::new();
    for (index, pr) in probes.iter().enumerate() {
        let points: Result<Vec<CanonicalPoint>, String> = match &pr.z {
            Some(z) => fib
                .jet(z, &pr.x)
                .map(|j| vec![CanonicalPoint { zeta: j.apply_a(&pr.eta), z: z.clone(), x: pr.x.clone(), eta: pr.eta.clone() }])
                .map_err(|e| e.to_string()),
            None => propagate_wavefront(fib, &[(pr.x.clone(), pr.eta.clone())]).map_err(|e| e.to_string()),
        };
        let (reports, error) = match points {
            Ok(pts) if pts.is_empty() => (Vec::new(), Some("no canonical point over this covector".to_string())),
            Ok(pts) => {
                let r: Result<Vec<_>, _> = pts.iter().map(|p| bolker_report(fib, p, b.symbol.as_ref(), seed)).collect();
                r.map(|v| (v, None)).map_err(|e| CliError::task("bolker", e))?
            }
            Err(e) => (Vec::new(), Some(e)),
        };
        out.push(ProbeResult { index, x: pr.x.clone(), eta: pr.eta.clone(), reports, error });
    }
    Ok(vec![("bolker.json".into(), json(&out))])
}

fn run_wavefront(sc: &Scenario, base: &Path) -> Result<Artifacts, CliError> {
    let t = sc.task.wavefront.as_ref().ok_or_else(|| SchemaError {
        field: "task.wavefront".into(),
        line: 0,
        message: "missing required field".into(),
    })?;
    let f = build_field(sc, base)?;
    if f.dim() != 2 || t.bbox.len() != 2 {
        return Err(SchemaError { field: "task.wavefront.bbox".into(), line: 0, message: "scans are planar".into() }.into());
    }
    let bbox: Vec<(f64, f64)> = t.bbox.iter().map(|b| (b[0], b[1])).collect();
    let grid = planar_phase_grid(&bbox, t.spacing, t.directions);
    let lambdas = t.lambdas.clone().unwrap_or_else(default_lambdas);
    let rep = wavefront_scan(&f, &grid, &lambdas, &t.detector);
    Ok(vec![("wavefront.csv".into(), rep.to_csv().into_bytes())])
}

#[derive(Serialize)]
struct PhaseEntry {
    index: usize,
    diagnostics: Option<PhaseDiagnostics>,
    error: Option<String>,
}

/// Seeded (x, v) with x = pi(chi(v)) + delta eta/|eta| on the 2D Radon model.
pub fn seeded_radon_points(count: usize, delta: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let a: f64 = rng.gen_range(0.3..std::f64::consts::PI - 0.3);
            let mu: f64 = rng.gen_range(0.5..1.5) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let th = [a.cos(), a.sin()];
            let b_alpha = -x[0] * th[1] + x[1] * th[0];
            let v1 = vec![a, x[0] * th[0] + x[1] * th[1]];
            let v2 = vec![-b_alpha * mu, mu];
            // eta = -mu theta.
            let sg = -mu.signum();
            let xe = vec![x[0] + delta * sg * th[0], x[1] + delta * sg * th[1]];
            (xe, v1, v2)
        })
        .collect()
}

fn run_phase(sc: &Scenario, seed: u64) -> Result<Artifacts, CliError> {
    let b = build(sc)?;
    let fib = &b.fibration;
    if fib.defining.is_none() {
        return Err(CliError::task("microlocal", "phase-check needs a defining-function fibration"));
    }
    let t = sc.task.phase_check.clone().unwrap_or_default();
    let mut cases = Vec::new();
    for p in &t.points {
        let x = match &p.x {
            Some(x) => x.clone(),
            None => chi_map(fib, &p.v1, &p.v2).map_err(|e| CliError::task("microlocal", e))?.0,
        };
        cases.push((x, p.v1.clone(), p.v2.clone()));
    }
    cases.extend(seeded_radon_points(t.random, t.delta, seed));
    let out: Vec<PhaseEntry> = cases
        .iter()
        .enumerate()
        .map(|(index, (x, v1, v2))| match critical_point_solve(fib, x, v1, v2) {
            Ok(d) => PhaseEntry { index, diagnostics: Some(d), error: None },
            Err(e) => PhaseEntry { index, diagnostics: None, error: Some(format!("{e:?}")) },
        })
        .collect();
    Ok(vec![("phase.json".into(), json(&out))])
}

fn run_recover(sc: &Scenario, base: &Path, seed: u64) -> Result<Artifacts, CliError> {
    let t = sc.task.recover.as_ref().ok_or_else(|| SchemaError {
        field: "task.recover".into(),
        line: 0,
        message: "missing required field".into(),
    })?;
    let b = build(sc)?;
    let p = b.symbol.clone().ok_or_else(|| CliError::task("recovery", "geometry has no characteristic symbol"))?;
    let fol = build_foliation(&t.foliation)?;
    let check = foliation_validate(&fol, &p, t.validate_levels, 8, seed);
    let mut arts: Artifacts = vec![("foliation.json".into(), json(&check))];
    if !check.pass {
        log::error!("foliation_validate failed; not stripping");
        return Ok(arts);
    }
    let f = build_field(sc, base)?;
    let spec = TransformSpec { fibration: b.fibration.clone(), kind: b.kind, quadrature: b.quadrature };
    let data = |z: &[f64]| forward(&spec, &f, z).unwrap_or(0.0);
    let cfg = crate::recovery::StripConfig { seed, ..t.strip };
    let rep = layer_strip(&b.fibration, &fol, &p, &data, &cfg).map_err(|e| CliError::task("recovery", e))?;
    arts.push(("recovery.json".into(), json(&rep)));
    Ok(arts)
}
