//! `cbct`: phantoms, projection, dose simulation, enhancement, reconstruction
//! and the evaluation sweep from the command line.
//!
//! Every command reads an optional TOML config (`--config`) with the sections
//! `[geometry] [phantom] [dose] [sem] [solver] [iem] [io] [eval]`; any key can
//! be overridden with `--set section.key=value`, and the common ones have
//! dedicated flags. Exit status: 0 on success, 1 when a computation fails, 2 for
//! usage, configuration and file errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use cbct_core::arrays::{read_array, write_array, Precision};
use cbct_core::enhance::enhance;
use cbct_core::pipeline::{
    evaluate_methods, init_thread_pool, reconstruct, render_table, rows_to_jsonl, run_pipeline, write_report, DoseLevel,
    DoseSettings, PipelineConfig, Variant,
};
use cbct_core::{ArrayKind, CtArray, DoseModel, Error, Method, Result, SystemOperator};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "cbct", version, about = "Cone-beam CT simulation, enhancement and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; every section is optional.
    #[arg(long, short = 'c', value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set solver.max_iters=50`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, extra: Vec<String>) -> Result<PipelineConfig> {
        let mut all = self.overrides.clone();
        all.extend(extra);
        PipelineConfig::load(self.config.as_deref(), &all)
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output `.ctarr` file.
    #[arg(long, short = 'o', value_name = "FILE")]
    output: PathBuf,
    /// On-disk precision (default: `[io] precision`, else f32).
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Fdk,
    Sirt,
    Gd,
    Nag,
}

impl MethodArg {
    fn method(self) -> Method {
        match self {
            MethodArg::Fdk => Method::Fdk,
            MethodArg::Sirt => Method::Sirt,
            MethodArg::Gd => Method::Gd,
            MethodArg::Nag => Method::Nag,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DoseArg {
    Low,
    Clinical,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a phantom on the configured voxel grid.
    Phantom {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Phantom kind (`[phantom] kind`).
        #[arg(long, value_parser = ["shepp_logan", "sphere"])]
        kind: Option<String>,
        /// Sphere radius, normalized to the volume half-width.
        #[arg(long)]
        radius: Option<f64>,
        /// Sphere density.
        #[arg(long)]
        value: Option<f64>,
    },
    /// Forward-project a volume into a sinogram.
    Project {
        #[command(flatten)]
        config: ConfigArgs,
        /// Input volume.
        #[arg(long, short = 'i', value_name = "FILE")]
        input: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Apply the adjoint projector to a sinogram (unfiltered backprojection).
    Backproject {
        #[command(flatten)]
        config: ConfigArgs,
        /// Input sinogram.
        #[arg(long, short = 'i', value_name = "FILE")]
        input: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Simulate a Poisson-noise acquisition of a clean sinogram.
    Noise {
        #[command(flatten)]
        config: ConfigArgs,
        /// Clean sinogram in density units.
        #[arg(long, short = 'i', value_name = "FILE")]
        input: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
        /// Dose preset: low (i0 = 1e4) or clinical (i0 = 1e6).
        #[arg(long, value_enum, conflicts_with = "i0")]
        dose: Option<DoseArg>,
        /// Unattenuated photon count per detector pixel.
        #[arg(long)]
        i0: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Minimum count before the log transform.
        #[arg(long)]
        count_floor: Option<f64>,
        /// Attenuation per unit density, 1/mm (1 for sinograms already in line-integral units).
        #[arg(long)]
        attenuation: Option<f64>,
    },
    /// Denoise a sinogram (SEM) or a volume (IEM).
    Enhance {
        #[command(flatten)]
        config: ConfigArgs,
        /// Input sinogram or volume; its kind selects `[sem]` or `[iem]`.
        #[arg(long, short = 'i', value_name = "FILE")]
        input: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long, value_parser = ["identity", "gaussian", "median", "tv"])]
        kind: Option<String>,
        /// Gaussian standard deviation in elements.
        #[arg(long)]
        sigma: Option<f64>,
        /// Median window radius.
        #[arg(long)]
        radius: Option<usize>,
        /// TV regularization weight.
        #[arg(long)]
        lambda: Option<f64>,
        /// TV iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_parser = ["per_view", "per_z_slice", "volumetric"])]
        slicing: Option<String>,
    },
    /// Reconstruct a volume from a sinogram; also writes a JSON report.
    Recon {
        #[command(flatten)]
        config: ConfigArgs,
        /// Input sinogram.
        #[arg(long, short = 'i', value_name = "FILE")]
        input: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
        /// Reconstruction method (`[solver] method`).
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Relative stopping tolerance.
        #[arg(long)]
        grad_tol: Option<f64>,
        /// Clamp iterates to be non-negative.
        #[arg(long)]
        nonneg: bool,
        /// Report path (default: the output path with a `.json` extension).
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Run acquisition → SEM → reconstruction → IEM as configured.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        /// Final volume (`[io] output`).
        #[arg(long, short = 'o', value_name = "FILE")]
        output: Option<PathBuf>,
        /// Noise seed (`[dose] seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Report path (default: next to the output, or stdout).
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
        /// Also run the `[eval]` sweep, whatever `[eval] enabled` says.
        #[arg(long)]
        eval: bool,
    },
    /// Compare methods over doses and seeds against the ground truth.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated variants such as `fdk,nag,nag+sem+iem`.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Comma-separated doses: low, clinical or a photon count.
        #[arg(long, value_delimiter = ',')]
        doses: Option<Vec<String>>,
        /// Comma-separated noise seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Directory for `table.txt` and `rows.jsonl`.
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Print the header and value range of a `.ctarr` file.
    Info {
        file: PathBuf,
    },
}

fn precision(arg: Option<PrecisionArg>, cfg: &PipelineConfig) -> Precision {
    match arg {
        Some(PrecisionArg::F32) => Precision::F32,
        Some(PrecisionArg::F64) => Precision::F64,
        None => cfg.io.precision,
    }
}

fn meta(command: &str) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("command".into(), json!(command));
    m
}

fn save(out: &OutputArgs, cfg: &PipelineConfig, array: CtArray, command: &str) -> Result<()> {
    write_array(&out.output, &array, precision(out.precision, cfg), meta(command))?;
    eprintln!("wrote {}", out.output.display());
    Ok(())
}

fn set(key: &str, value: Option<impl ToString>) -> Option<String> {
    value.map(|v| format!("{key}={}", v.to_string()))
}

fn quoted(key: &str, value: Option<&str>) -> Option<String> {
    value.map(|v| format!("{key}=\"{v}\""))
}

fn operator(cfg: &PipelineConfig) -> Result<SystemOperator> {
    Ok(SystemOperator::new(cfg.geometry.build()?))
}

fn report_path(explicit: Option<PathBuf>, output: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| output.with_extension("json"))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Phantom { config, out, kind, radius, value } => {
            let extra = [quoted("phantom.kind", kind.as_deref()), set("phantom.radius", radius), set("phantom.value", value)];
            let cfg = config.load(extra.into_iter().flatten().collect())?;
            let volume = cfg.phantom.build(&cfg.geometry.build()?)?;
            save(&out, &cfg, volume.into(), "phantom")
        }
        Command::Project { config, input, out } => {
            let cfg = config.load(Vec::new())?;
            let volume = read_array(&input)?.0.into_volume()?;
            let sinogram = operator(&cfg)?.forward_project(&volume)?;
            save(&out, &cfg, sinogram.into(), "project")
        }
        Command::Backproject { config, input, out } => {
            let cfg = config.load(Vec::new())?;
            let sinogram = read_array(&input)?.0.into_sinogram()?;
            let volume = operator(&cfg)?.back_project(&sinogram)?;
            save(&out, &cfg, volume.into(), "backproject")
        }
        Command::Noise { config, input, out, dose, i0, seed, count_floor, attenuation } => {
            let cfg = config.load(Vec::new())?;
            let base = cfg.dose;
            let i0 = match (dose, i0) {
                (Some(DoseArg::Low), _) => DoseLevel::Preset(cbct_core::DosePreset::Low).i0(),
                (Some(DoseArg::Clinical), _) => DoseLevel::Preset(cbct_core::DosePreset::Clinical).i0(),
                (None, Some(i0)) => i0,
                (None, None) => base
                    .map(|d| d.model.i0)
                    .ok_or_else(|| Error::Config("no dose given: use --dose, --i0 or a [dose] section".into()))?,
            };
            let model = DoseModel {
                i0,
                count_floor: count_floor.or(base.map(|d| d.model.count_floor)).unwrap_or(cbct_core::noise::DEFAULT_COUNT_FLOOR),
                seed: seed.or(base.map(|d| d.model.seed)).unwrap_or(0),
            };
            let mu = attenuation.or(base.map(|d| d.attenuation)).unwrap_or(cbct_core::pipeline::DEFAULT_ATTENUATION);
            let clean = read_array(&input)?.0.into_sinogram()?;
            let noisy = DoseSettings::new(model, mu)?.simulate(&clean)?;
            save(&out, &cfg, noisy.into(), "noise")
        }
        Command::Enhance { config, input, out, kind, sigma, radius, lambda, iterations, slicing } => {
            let (array, header) = read_array(&input)?;
            let section = match header.kind {
                ArrayKind::Sinogram => "sem",
                ArrayKind::Volume => "iem",
            };
            let extra = [
                quoted(&format!("{section}.kind"), kind.as_deref()),
                set(&format!("{section}.sigma"), sigma),
                set(&format!("{section}.radius"), radius),
                set(&format!("{section}.lambda"), lambda),
                set(&format!("{section}.iterations"), iterations),
                quoted(&format!("{section}.slicing"), slicing.as_deref()),
            ];
            let cfg = config.load(extra.into_iter().flatten().collect())?;
            let stage = if section == "sem" { cfg.sem } else { cfg.iem };
            eprintln!("{stage}");
            save(&out, &cfg, enhance(&stage, &array)?, "enhance")
        }
        Command::Recon { config, input, out, method, max_iters, grad_tol, nonneg, report } => {
            let extra = [
                quoted("solver.method", method.map(|m| m.method().name())),
                set("solver.max_iters", max_iters),
                set("solver.grad_tol", grad_tol),
                nonneg.then(|| "solver.nonneg=true".to_string()),
            ];
            let cfg = config.load(extra.into_iter().flatten().collect())?;
            let sinogram = read_array(&input)?.0.into_sinogram()?;
            let op = operator(&cfg)?;
            sinogram.check_geometry(op.geometry())?;
            let start = Instant::now();
            let (volume, solver) = reconstruct(&op, &sinogram, &cfg.solver)?;
            let wall_time = start.elapsed().as_secs_f64();
            save(&out, &cfg, volume.into(), "recon")?;
            let path = report_path(report, &out.output);
            let summary = json!({ "method": cfg.solver.method, "wall_time": wall_time, "solver": solver });
            write_report(&path, &summary)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::Pipeline { config, output, seed, report, eval } => {
            let extra = [
                output.as_ref().map(|p| format!("io.output=\"{}\"", p.display())),
                set("dose.seed", seed),
            ];
            let cfg = config.load(extra.into_iter().flatten().collect())?;
            let (_, run_report) = run_pipeline(&cfg)?;
            for stage in &run_report.stages {
                let mse = stage.mse.map_or_else(|| "-".to_string(), |m| format!("{m:.5e}"));
                eprintln!("{:<12} {:>9.3}s  mse {mse:<12} {}", stage.name, stage.wall_time, stage.detail);
            }
            match report.or_else(|| cfg.io.output.as_ref().map(|o| o.with_extension("json"))) {
                Some(path) => {
                    write_report(&path, &run_report)?;
                    eprintln!("wrote {}", path.display());
                }
                None => println!("{}", serde_json::to_string_pretty(&run_report).expect("report serializes")),
            }
            if eval || cfg.eval.enabled {
                let rows = evaluate_methods(&cfg, &cfg.eval.methods, &cfg.eval.doses, &cfg.eval.seeds)?;
                print!("{}", render_table(&rows));
            }
            Ok(())
        }
        Command::Eval { config, methods, doses, seeds, out_dir } => {
            let cfg = config.load(Vec::new())?;
            let methods: Vec<Variant> = match methods {
                Some(m) => m.iter().map(|s| s.parse()).collect::<Result<_>>()?,
                None => cfg.eval.methods.clone(),
            };
            let doses: Vec<DoseLevel> = match doses {
                Some(d) => d.iter().map(|s| s.parse()).collect::<Result<_>>()?,
                None => cfg.eval.doses.clone(),
            };
            let seeds = seeds.unwrap_or_else(|| cfg.eval.seeds.clone());
            let rows = evaluate_methods(&cfg, &methods, &doses, &seeds)?;
            let table = render_table(&rows);
            print!("{table}");
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (name, text) in [("table.txt", table), ("rows.jsonl", rows_to_jsonl(&rows))] {
                    let path = dir.join(name);
                    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                }
                eprintln!("wrote {}", dir.display());
            }
            Ok(())
        }
        Command::Info { file } => {
            let (array, header) = read_array(&file)?;
            let data = array.grid().data();
            let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let mean = data.iter().sum::<f64>() / data.len().max(1) as f64;
            println!("file     {}", file.display());
            println!("kind     {}", header.kind);
            println!("dtype    {}", match header.dtype {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            });
            println!("layout   {}", header.layout);
            println!("dims     {}", header.dims.map(|d| d.to_string()).join(" x "));
            println!("spacing  {:?} mm", header.spacing);
            println!("range    [{lo}, {hi}], mean {mean}");
            if !header.meta.is_empty() {
                println!("meta     {}", Value::Object(header.meta));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = init_thread_pool().and_then(|_| run(cli.command));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let shown = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(inner) = source {
                let text = inner.to_string();
                if !shown.contains(&text) {
                    eprintln!("  caused by: {text}");
                }
                source = inner.source();
            }
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
