//! `srctrace` command-line driver.

mod config;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use config::{file_sha256, Overrides, RunConfig};
use serde::Serialize;
use srctrace::control::{precompute_to_file, ControlCache, ControlFitter};
use srctrace::heat::BoundaryTrace;
use srctrace::inversion::pipeline::{compare_with_truth, write_intensity_csv};
use srctrace::inversion::{run_inversion, InversionResult};
use srctrace::scenario::{generate_measurement, paper_discretization};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "srctrace", version, about = "Point-source reconstruction from boundary measurements of a 2D diffusion process")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its boundary trace.
    Generate,
    /// Build (or resume) the boundary-control cache.
    Precompute,
    /// Reconstruct sources from a trace and a cache.
    Invert,
    /// Summarize a result directory.
    Report,
}

/// Exit status for a completed run that found no source.
const NO_SOURCE: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<u8> {
        let cfg = RunConfig::resolve(&cli.overrides)?;
        match cli.command {
            Command::Generate => generate(&cfg),
            Command::Precompute => precompute(&cfg),
            Command::Invert => invert(&cfg),
            Command::Report => report(&cfg),
        }
    };
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    config_hash: String,
    seed: u64,
    versions: Versions,
    inputs: Vec<(String, String)>,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Versions {
    srctrace: &'static str,
    cli: &'static str,
    cache_format: &'static str,
}

fn write_manifest(path: &Path, command: &str, cfg: &RunConfig, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    let inputs = inputs
        .iter()
        .map(|p| Ok((p.display().to_string(), file_sha256(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let m = Manifest {
        command,
        config: cfg,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        versions: Versions {
            srctrace: srctrace::VERSION,
            cli: env!("CARGO_PKG_VERSION"),
            cache_format: srctrace::control::CACHE_FORMAT,
        },
        inputs,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, &m)?;
    writeln!(f)?;
    Ok(())
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn generate(cfg: &RunConfig) -> Result<u8> {
    let scenario = cfg.require_scenario()?;
    let out = cfg.trace.clone().unwrap_or_else(|| cfg.output.join("trace.bin"));
    ensure_parent(&out)?;
    let trace = generate_measurement(&scenario)?;
    trace
        .save(&out, Some(&scenario.mesh), Some(scenario.kappa))
        .with_context(|| format!("writing trace {}", out.display()))?;
    let truth = sibling(&out, "scenario.json");
    fs::write(&truth, serde_json::to_string_pretty(&scenario)? + "\n")?;
    write_manifest(&sibling(&out, "manifest.json"), "generate", cfg, &[], &[&out, &truth])?;
    eprintln!("wrote {} ({} sources)", out.display(), scenario.truth.m());
    Ok(0)
}

fn precompute(cfg: &RunConfig) -> Result<u8> {
    let (grid, mesh, kappa) = match cfg.load_scenario()? {
        Some(s) => (s.grid, s.mesh, s.kappa),
        None => {
            let (g, m) = paper_discretization();
            (g, m, srctrace::scenario::PAPER_KAPPA)
        }
    };
    let path = cfg.cache.clone().unwrap_or_else(|| cfg.output.join("cache.bin"));
    ensure_parent(&path)?;
    let report = precompute_to_file(&path, cfg.w, &grid, &mesh, kappa, 16, |done, total| {
        eprint!("\r{done}/{total}");
        true
    })?;
    eprintln!();
    eprintln!(
        "cache {}: {} entries, {} reused, {} solved",
        path.display(),
        report.total,
        report.reused,
        report.solved
    );
    write_manifest(&sibling(&path, "manifest.json"), "precompute", cfg, &[], &[&path])?;
    Ok(0)
}

fn invert(cfg: &RunConfig) -> Result<u8> {
    let trace_path = cfg.trace.clone().context("no trace given; pass --trace FILE")?;
    if !trace_path.exists() {
        bail!("trace {} not found; create it with `srctrace generate`", trace_path.display());
    }
    let cache_path = cfg.cache.clone().context("no cache given; pass --cache FILE")?;
    if !cache_path.exists() {
        bail!(
            "control cache {} not found; build it first with `srctrace precompute --cache {}`",
            cache_path.display(),
            cache_path.display()
        );
    }
    let (trace, header): (BoundaryTrace, _) = BoundaryTrace::load(&trace_path)
        .with_context(|| format!("reading trace {}", trace_path.display()))?;
    let cache = ControlCache::load(&cache_path).with_context(|| format!("reading cache {}", cache_path.display()))?;
    if let (Some(mesh), Some(kappa)) = (header.mesh, header.kappa) {
        cache.check_data(&header.grid, &mesh, kappa)?;
    }
    let fitter = ControlFitter::new(cache)?;
    let mut result = run_inversion(&trace, &fitter, &cfg.inversion())?;
    let scenario = cfg.load_scenario()?.or_else(|| {
        let p = sibling(&trace_path, "scenario.json");
        fs::read_to_string(p).ok().and_then(|t| serde_json::from_str(&t).ok())
    });
    let truth = scenario.as_ref().map(|s| &s.truth);
    if let Some(t) = truth {
        result.errors = Some(compare_with_truth(&result, t));
    }

    let dir = &cfg.output;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut outputs = vec![dir.join("result.json"), dir.join("r_values.csv"), dir.join("positions.csv")];
    write_json(&outputs[0], &result)?;
    srctrace::functional::write_r_values_csv(&result.r_values, BufWriter::new(File::create(&outputs[1])?))?;
    write_positions(&outputs[2], &result, truth)?;
    for j in 0..result.m {
        let p = dir.join(format!("intensity_{j}.csv"));
        write_intensity_csv(&result, j, truth, BufWriter::new(File::create(&p)?))?;
        outputs.push(p);
    }
    if result.errors.is_some() {
        let p = dir.join("errors.csv");
        write_errors(&p, &result)?;
        outputs.push(p);
    }
    let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&dir.join("manifest.json"), "invert", cfg, &[&trace_path], &out_refs)?;
    print_summary(&result);
    Ok(if result.detected { 0 } else { NO_SOURCE })
}

fn report(cfg: &RunConfig) -> Result<u8> {
    let path = cfg.output.join("result.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}; run `srctrace invert` first", path.display()))?;
    let result: InversionResult = serde_json::from_str(&text)?;
    print_summary(&result);
    if result.errors.is_some() {
        write_errors(&cfg.output.join("errors.csv"), &result)?;
    }
    Ok(if result.detected { 0 } else { NO_SOURCE })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn write_positions(path: &Path, result: &InversionResult, truth: Option<&srctrace::source::SourceSet>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "kind,index,x,y,lambda0")?;
    for (j, (p, l)) in result.positions.iter().zip(&result.lambda0).enumerate() {
        writeln!(w, "estimate,{j},{},{},{l}", p[0], p[1])?;
    }
    if let Some(t) = truth {
        for (j, (s, l)) in t.sources.iter().zip(t.total_intensities()).enumerate() {
            writeln!(w, "truth,{j},{},{},{l}", s.position[0], s.position[1])?;
        }
    }
    Ok(())
}

fn write_errors(path: &Path, result: &InversionResult) -> Result<()> {
    let Some(e) = &result.errors else { return Ok(()) };
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "metric,source,value")?;
    writeln!(w, "position,,{}", e.position_error)?;
    writeln!(w, "lambda0,,{}", e.lambda0_error)?;
    let cell = |x: &Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for (j, x) in e.ifourier_errors.iter().enumerate() {
        writeln!(w, "ifourier,{j},{}", cell(x))?;
    }
    for (j, x) in e.approx_errors.iter().enumerate() {
        writeln!(w, "approx,{j},{}", cell(x))?;
    }
    Ok(())
}

fn print_summary(r: &InversionResult) {
    if !r.detected {
        println!("no detectable source");
        return;
    }
    println!("{} sources (zero-mode objective {:.3e})", r.m, r.diagnostics.objective);
    for (j, (p, l)) in r.positions.iter().zip(&r.lambda0).enumerate() {
        println!("  {j}: ({:8.2}, {:8.2})  λ0 = {l:.6e}", p[0], p[1]);
    }
    if let Some(c) = r.diagnostics.stability_constant {
        println!("stability constant {c:.4}");
    }
    if let Some(e) = &r.errors {
        println!("position error {:.3}%  λ0 error {:.3}%", 100.0 * e.position_error, 100.0 * e.lambda0_error);
        let fmt = |v: &[Option<f64>]| {
            v.iter()
                .map(|x| x.map_or("-".into(), |x| format!("{:.2}%", 100.0 * x)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        if r.intensities.ifourier.is_some() {
            println!("I-F intensity errors:    {}", fmt(&e.ifourier_errors));
        }
        if r.intensities.approx.is_some() {
            println!("approx intensity errors: {}", fmt(&e.approx_errors));
        }
    }
}
