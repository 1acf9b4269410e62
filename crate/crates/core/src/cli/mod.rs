//! Command-line front end: trace generation, experiment runs and reports.
//!
//! Synthetic data comes from ChaCha8 (`rand_chacha`), seeded with the
//! experiment seed. Layer `k` draws neurons from stream `2k` and synapses from
//! stream `2k + 1`, so adding a layer or an engine never shifts another
//! layer's data.

pub mod config;
pub mod trace;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::analysis::{count_terms, report, EngineRun, LayerRecord, ReportDocument};
use crate::encoding::stats;
use crate::error::{Error, Result};
use crate::geometry::{FilterSet, LayerSpec, Tensor3};
use crate::numerics::{quantize8, trim_tensor, NeuronFormat, QuantParams, Width};
use crate::pragmatic::{prag_layer, TrimMode};
use crate::reference::{conv_oracle, dadn_cycles, dadn_layer, EngineResult};
use crate::stripes::stripes_layer;

use config::{EngineVariant, ExperimentConfig, ResolvedLayer, TraceSource};
use trace::{TraceDtype, TraceFile};

/// Synapses are drawn uniformly from `[-SYNAPSE_BOUND, SYNAPSE_BOUND]`.
pub const SYNAPSE_BOUND: i32 = 127;

pub fn layer_rng(seed: u64, layer: usize, synapses: bool) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * layer as u64 + synapses as u64);
    rng
}

fn sample_real(rng: &mut ChaCha8Rng, count: usize, sigma: f64, relu: bool) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(format!("sigma {sigma}: {e}")))?;
    Ok((0..count)
        .map(|_| {
            let v = normal.sample(rng);
            if relu {
                v.max(0.0)
            } else {
                v
            }
        })
        .collect())
}

/// Samples `Normal(0, sigma)`, optionally rectifies, and rounds toward zero
/// into the 16-bit container (unsigned after ReLU, signed otherwise).
fn synthetic16(rng: &mut ChaCha8Rng, x: usize, y: usize, i: usize, sigma: f64, relu: bool) -> Result<Tensor3> {
    let (lo, hi) = if relu { (0.0, 65535.0) } else { (-32768.0, 32767.0) };
    let values = sample_real(rng, x * y * i, sigma, relu)?
        .into_iter()
        .map(|v| v.trunc().clamp(lo, hi) as i32)
        .collect();
    Tensor3::from_vec(x, y, i, values)
}

/// Real-valued samples quantized to 8-bit codes with `quant`, or with the
/// sample range when no limits are given.
fn synthetic8(
    rng: &mut ChaCha8Rng,
    x: usize,
    y: usize,
    i: usize,
    sigma: f64,
    relu: bool,
    quant: Option<QuantParams>,
) -> Result<Tensor3> {
    let real = sample_real(rng, x * y * i, sigma, relu)?;
    let q = match quant {
        Some(q) => q,
        None => {
            let lo = real.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = real.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo < hi {
                QuantParams::new(lo, hi)?
            } else {
                QuantParams::new(lo, lo + 1.0)?
            }
        }
    };
    let codes = real
        .into_iter()
        .map(|v| quantize8(v, q).map(i32::from))
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_vec(x, y, i, codes)
}

/// Synthetic 16-bit neuron trace for `spec`, identical to what `simulate`
/// uses for the first layer with this seed.
pub fn generate_trace(spec: &LayerSpec, sigma: f64, relu: bool, seed: u64) -> Result<Tensor3> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    synthetic16(&mut layer_rng(seed, 0, false), spec.nx, spec.ny, spec.i, sigma, relu)
}

pub fn generate_synapses(spec: &LayerSpec, depth: usize, seed: u64, layer: usize) -> Result<FilterSet> {
    let mut rng = layer_rng(seed, layer, true);
    let filters = (0..spec.n)
        .map(|_| Tensor3::from_fn(spec.fx, spec.fy, depth, |_, _, _| rng.gen_range(-SYNAPSE_BOUND..=SYNAPSE_BOUND)))
        .collect();
    FilterSet::new(filters)?.zero_extend_depth(spec.i)
}

/// Inputs for one layer, shared by every engine.
#[derive(Debug, Clone)]
pub struct LayerData {
    pub layer: ResolvedLayer,
    pub format: NeuronFormat,
    /// Neurons at the configured depth.
    pub raw: Tensor3,
    /// Neurons zero-extended to whole bricks.
    pub input: Tensor3,
    pub filters: FilterSet,
}

fn layer_neurons(cfg: &ExperimentConfig, k: usize, layer: &ResolvedLayer, seed: u64) -> Result<(Tensor3, NeuronFormat)> {
    let (x, y, i) = (layer.spec.nx, layer.spec.ny, layer.depth);
    if let Some(path) = &layer.trace {
        let f = TraceFile::read(path)?;
        if f.tensor.dims() != (x, y, i) {
            let (a, b, c) = f.tensor.dims();
            return Err(Error::InvalidConfig(format!(
                "layers[{k}].trace: {} holds {a}x{b}x{c}, layer needs {x}x{y}x{i}",
                path.display()
            )));
        }
        let format = f.dtype.format();
        if format.width != cfg.container()? {
            return Err(Error::InvalidConfig(format!(
                "layers[{k}].trace: {}-bit trace in a {}-bit experiment",
                format.width.bits(),
                cfg.width
            )));
        }
        layer.window.check_container(format.width).map_err(|e| Error::InvalidConfig(format!("layers[{k}].precision: {e}")))?;
        return Ok((f.tensor, format));
    }
    let TraceSource::Synthetic { sigma, relu } = cfg.trace else {
        unreachable!("file sources resolve to a per-layer path")
    };
    let mut rng = layer_rng(seed, k, false);
    let format = cfg.synthetic_format()?;
    let t = match format.width {
        Width::W16 => synthetic16(&mut rng, x, y, i, sigma, relu)?,
        Width::W8 => synthetic8(&mut rng, x, y, i, sigma, relu, layer.quant)?,
    };
    Ok((t, format))
}

pub fn prepare_layers(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<LayerData>> {
    cfg.validate()?;
    let layers = cfg.resolved_layers()?;
    let prepared: Vec<Result<LayerData>> = layers
        .into_par_iter()
        .enumerate()
        .map(|(k, layer)| {
            let (raw, format) = layer_neurons(cfg, k, &layer, seed)?;
            let input = raw.zero_extend_depth(layer.spec.i)?;
            let filters = generate_synapses(&layer.spec, layer.depth, seed, k)?;
            Ok(LayerData {
                layer,
                format,
                raw,
                input,
                filters,
            })
        })
        .collect();
    prepared.into_iter().collect()
}

fn run_variant(v: &EngineVariant, d: &LayerData) -> Result<EngineResult> {
    let spec = &d.layer.spec;
    let window = Some(d.layer.window);
    match v {
        EngineVariant::Dadn => dadn_layer(&d.input, &d.filters, spec, d.format.width),
        EngineVariant::Stripes => stripes_layer(&d.input, &d.filters, spec, window, d.format),
        EngineVariant::Pragmatic(c) => prag_layer(&d.input, &d.filters, spec, window, d.format, c),
    }
}

/// Reference outputs: on the raw input and on the profile-trimmed input.
fn oracles(d: &LayerData) -> Result<(Tensor3, Tensor3)> {
    let raw = conv_oracle(&d.input, &d.filters, &d.layer.spec)?;
    let trimmed = trim_tensor(&d.input, d.layer.window, d.format.sign)?;
    Ok((raw, conv_oracle(&trimmed, &d.filters, &d.layer.spec)?))
}

fn layer_record(d: &LayerData, runs: Vec<EngineRun>) -> Result<LayerRecord> {
    Ok(LayerRecord {
        name: d.layer.name.clone(),
        dadn_cycles: dadn_cycles(&d.layer.spec)?,
        runs,
        terms: Some(count_terms(&d.input, &d.layer.spec, Some(d.layer.window), d.format, d.layer.first)?),
        bits: Some(stats(d.raw.values(), d.format.width)?),
    })
}

/// Runs every engine variant on every layer and checks each serial engine
/// against the reference convolution.
pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<ReportDocument> {
    let data = prepare_layers(cfg, seed)?;
    let variants = cfg.variants()?;
    let refs: Vec<Result<(Tensor3, Tensor3)>> = data.par_iter().map(oracles).collect();
    let refs: Vec<(Tensor3, Tensor3)> = refs.into_iter().collect::<Result<_>>()?;

    let tasks: Vec<(usize, usize)> = (0..data.len())
        .flat_map(|l| (0..variants.len()).map(move |v| (l, v)))
        .collect();
    let results: Vec<Result<EngineRun>> = tasks
        .par_iter()
        .map(|&(l, v)| {
            let variant = &variants[v];
            let r = run_variant(variant, &data[l])?;
            let expect = match variant {
                EngineVariant::Dadn => &refs[l].0,
                EngineVariant::Stripes => &refs[l].1,
                EngineVariant::Pragmatic(c) if c.trim == TrimMode::None => &refs[l].0,
                EngineVariant::Pragmatic(_) => &refs[l].1,
            };
            if &r.output != expect {
                return Err(Error::OracleMismatch {
                    layer: data[l].layer.name.clone(),
                    engine: variant.label(),
                });
            }
            Ok(EngineRun {
                label: variant.label(),
                report: r.report,
            })
        })
        .collect();
    let mut runs = results.into_iter();
    let mut records = Vec::with_capacity(data.len());
    for d in &data {
        let layer_runs = runs.by_ref().take(variants.len()).collect::<Result<Vec<_>>>()?;
        records.push(layer_record(d, layer_runs)?);
    }
    Ok(report(&records))
}

/// Term counts and essential-bit statistics only; no timing.
pub fn analyze(cfg: &ExperimentConfig, seed: u64) -> Result<ReportDocument> {
    let data = prepare_layers(cfg, seed)?;
    let records: Vec<Result<LayerRecord>> = data.par_iter().map(|d| layer_record(d, Vec::new())).collect();
    Ok(report(&records.into_iter().collect::<Result<Vec<_>>>()?))
}

#[derive(Debug, Parser)]
#[command(name = "prasim", version, about = "Cycle-level simulator for bit-serial convolution engines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configured engine and write the report.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; overrides `output.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Term counts and essential-bit statistics, no timing.
    Analyze {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write one layer's neuron trace.
    GenTrace {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Layer name; defaults to the first layer.
        #[arg(long)]
        layer: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse the config and check layers, engines and trace files.
    Validate { config: PathBuf },
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn emit(cfg: &ExperimentConfig, doc: &ReportDocument, csv: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let table = doc.to_table();
    out.write_all(table.as_bytes()).map_err(|e| Error::Io(e.to_string()))?;
    if let Some(path) = csv.or_else(|| cfg.output.csv.as_ref().map(|p| cfg.resolve_path(p))) {
        write_file(&path, doc.to_csv_string().as_bytes())?;
    }
    if let Some(path) = &cfg.output.table {
        write_file(&cfg.resolve_path(path), table.as_bytes())?;
    }
    Ok(())
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seed, csv } => {
            let cfg = ExperimentConfig::load(&config)?;
            let doc = simulate(&cfg, seed.unwrap_or(cfg.seed))?;
            emit(&cfg, &doc, csv, out)
        }
        Command::Analyze { config, seed, csv } => {
            let cfg = ExperimentConfig::load(&config)?;
            let doc = analyze(&cfg, seed.unwrap_or(cfg.seed))?;
            emit(&cfg, &doc, csv, out)
        }
        Command::GenTrace {
            config,
            output,
            layer,
            seed,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            let layers = cfg.resolved_layers()?;
            let k = match &layer {
                None => 0,
                Some(name) => layers
                    .iter()
                    .position(|l| &l.name == name)
                    .ok_or_else(|| Error::InvalidConfig(format!("--layer: no layer named {name:?}")))?,
            };
            let (t, format) = layer_neurons(&cfg, k, &layers[k], seed.unwrap_or(cfg.seed))?;
            TraceFile::new(TraceDtype::for_format(format), t)?.write(&output)?;
            writeln!(out, "wrote {} ({})", output.display(), layers[k].name).map_err(|e| Error::Io(e.to_string()))
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            let layers = cfg.resolved_layers()?;
            for (k, l) in layers.iter().enumerate() {
                if l.trace.is_some() {
                    layer_neurons(&cfg, k, l, cfg.seed)?;
                }
            }
            writeln!(out, "ok: {} layers, {} engine variants", layers.len(), cfg.variants()?.len())
                .map_err(|e| Error::Io(e.to_string()))
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Diagnostics go to `err`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 1;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
