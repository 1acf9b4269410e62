//! Experiment configuration (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{Activation, LayerSpec};
use crate::numerics::{NeuronFormat, PrecisionWindow, QuantParams, Width};
use crate::pragmatic::{PragConfig, SyncMode, TrimMode};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Neuron container width, 16 or 8.
    #[serde(default = "default_width")]
    pub width: u8,
    pub trace: TraceSource,
    pub layers: Vec<LayerConfig>,
    pub engines: Vec<EngineConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_width() -> u8 {
    16
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TraceSource {
    Synthetic {
        sigma: f64,
        #[serde(default = "default_true")]
        relu: bool,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub name: Option<String>,
    pub nx: usize,
    pub ny: usize,
    pub i: usize,
    pub n: usize,
    pub fx: usize,
    pub fy: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default)]
    pub act: Activation,
    #[serde(default)]
    pub out_shift: u32,
    pub precision: Option<Precision>,
    pub quant: Option<QuantConfig>,
    pub first: Option<bool>,
    /// Per-layer trace file; overrides a file-based `[trace]`.
    pub trace: Option<PathBuf>,
}

/// Either `[msb, lsb]` or `{ width = p, lsb = l }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum Precision {
    Window([u8; 2]),
    Width { width: u8, lsb: u8 },
}

impl Precision {
    pub fn window(self) -> Result<PrecisionWindow> {
        match self {
            Precision::Window([msb, lsb]) => PrecisionWindow::new(msb, lsb),
            Precision::Width { width, lsb } => PrecisionWindow::from_width(width, lsb),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantConfig {
    pub min: f64,
    pub max: f64,
}

/// A count that may be `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "CountRepr")]
pub struct Count(pub Option<usize>);

#[derive(Deserialize)]
#[serde(untagged)]
enum CountRepr {
    N(usize),
    S(String),
}

impl TryFrom<CountRepr> for Count {
    type Error = String;
    fn try_from(r: CountRepr) -> std::result::Result<Self, String> {
        match r {
            CountRepr::N(0) => Err("count must be at least 1".into()),
            CountRepr::N(n) => Ok(Count(Some(n))),
            CountRepr::S(s) if s == "inf" => Ok(Count(None)),
            CountRepr::S(s) => Err(format!("expected a positive integer or \"inf\", got {s:?}")),
        }
    }
}

fn default_l_bits() -> Vec<u8> {
    vec![4]
}

fn default_sync() -> Vec<SyncMode> {
    vec![SyncMode::Pallet]
}

fn default_ssr() -> Vec<Count> {
    vec![Count(Some(1))]
}

fn default_buffer() -> Vec<Count> {
    vec![Count(Some(2))]
}

fn default_trim() -> Vec<TrimMode> {
    vec![TrimMode::Profile]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EngineConfig {
    Dadn,
    Stripes,
    /// Grid over every listed value of each knob.
    Pragmatic {
        #[serde(default = "default_l_bits")]
        l_bits: Vec<u8>,
        #[serde(default = "default_sync")]
        sync: Vec<SyncMode>,
        #[serde(default = "default_ssr")]
        ssr: Vec<Count>,
        #[serde(default = "default_buffer")]
        pallet_buffer: Vec<Count>,
        #[serde(default = "default_trim")]
        trim: Vec<TrimMode>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub csv: Option<PathBuf>,
    pub table: Option<PathBuf>,
}

/// One concrete engine after grid expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngineVariant {
    Dadn,
    Stripes,
    Pragmatic(PragConfig),
}

impl EngineVariant {
    pub fn label(&self) -> String {
        match self {
            EngineVariant::Dadn => "DaDN".into(),
            EngineVariant::Stripes => "STR".into(),
            EngineVariant::Pragmatic(c) => c.to_string(),
        }
    }
}

/// A validated layer ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedLayer {
    pub name: String,
    /// Geometry with depth rounded up to whole bricks.
    pub spec: LayerSpec,
    /// Depth as configured, before extension.
    pub depth: usize,
    pub window: PrecisionWindow,
    pub quant: Option<QuantParams>,
    pub first: bool,
    pub trace: Option<PathBuf>,
}

fn cfg_err(field: impl AsRef<str>, e: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{}: {e}", field.as_ref()))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string().trim_end().into()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn container(&self) -> Result<Width> {
        Width::from_bits(self.width as u32).map_err(|e| cfg_err("width", e))
    }

    /// Neuron format of synthetic traces. File traces carry their own.
    pub fn synthetic_format(&self) -> Result<NeuronFormat> {
        Ok(match (self.container()?, &self.trace) {
            (Width::W8, _) => NeuronFormat::CODE8,
            (Width::W16, TraceSource::Synthetic { relu: false, .. }) => NeuronFormat::SIGNED16,
            (Width::W16, _) => NeuronFormat::UNSIGNED16,
        })
    }

    /// Checks everything that does not need trace data.
    pub fn validate(&self) -> Result<()> {
        let width = self.container()?;
        if let TraceSource::Synthetic { sigma, .. } = self.trace {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(cfg_err("trace.sigma", format!("must be positive and finite, got {sigma}")));
            }
        }
        if self.layers.is_empty() {
            return Err(cfg_err("layers", "at least one layer is required"));
        }
        if self.engines.is_empty() {
            return Err(cfg_err("engines", "at least one engine is required"));
        }
        let layers = self.resolved_layers()?;
        for (k, l) in layers.iter().enumerate() {
            if l.quant.is_some() && width != Width::W8 {
                return Err(cfg_err(format!("layers[{k}].quant"), "only valid with width = 8"));
            }
            if l.trace.is_none() && matches!(self.trace, TraceSource::Synthetic { .. }) {
                l.window
                    .check_container(width)
                    .map_err(|e| cfg_err(format!("layers[{k}].precision"), e))?;
            }
        }
        self.variants()?;
        Ok(())
    }

    pub fn resolved_layers(&self) -> Result<Vec<ResolvedLayer>> {
        let width = self.container()?;
        self.layers
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let field = |f: &str| format!("layers[{k}].{f}");
                let spec = LayerSpec::new(l.nx, l.ny, l.i, l.n, l.fx, l.fy, l.stride, l.pad)
                    .with_act(l.act)
                    .with_out_shift(l.out_shift)
                    .depth_extended();
                spec.validate().map_err(|e| cfg_err(format!("layers[{k}]"), e))?;
                let window = match l.precision {
                    Some(p) => p.window().map_err(|e| cfg_err(field("precision"), e))?,
                    None => PrecisionWindow::new(width.bits() - 1, 0)?,
                };
                let quant = l
                    .quant
                    .map(|q| QuantParams::new(q.min, q.max))
                    .transpose()
                    .map_err(|e| cfg_err(field("quant"), e))?;
                let trace = match (&l.trace, &self.trace) {
                    (Some(p), _) | (None, TraceSource::File { path: p }) => Some(self.resolve_path(p)),
                    (None, TraceSource::Synthetic { .. }) => None,
                };
                Ok(ResolvedLayer {
                    name: l.name.clone().unwrap_or_else(|| format!("layer{k}")),
                    spec,
                    depth: l.i,
                    window,
                    quant,
                    first: l.first.unwrap_or(k == 0),
                    trace,
                })
            })
            .collect()
    }

    /// Engine variants in configuration order, duplicates dropped. Pallet
    /// sync ignores the SSR and buffer knobs.
    pub fn variants(&self) -> Result<Vec<EngineVariant>> {
        let mut out: Vec<EngineVariant> = Vec::new();
        let mut push = |v: EngineVariant| {
            if !out.contains(&v) {
                out.push(v);
            }
        };
        for (k, e) in self.engines.iter().enumerate() {
            match e {
                EngineConfig::Dadn => push(EngineVariant::Dadn),
                EngineConfig::Stripes => push(EngineVariant::Stripes),
                EngineConfig::Pragmatic {
                    l_bits,
                    sync,
                    ssr,
                    pallet_buffer,
                    trim,
                } => {
                    for (name, empty) in [
                        ("l_bits", l_bits.is_empty()),
                        ("sync", sync.is_empty()),
                        ("ssr", ssr.is_empty()),
                        ("pallet_buffer", pallet_buffer.is_empty()),
                        ("trim", trim.is_empty()),
                    ] {
                        if empty {
                            return Err(cfg_err(format!("engines[{k}].{name}"), "empty list"));
                        }
                    }
                    for &l in l_bits {
                        for &s in sync {
                            for &r in ssr {
                                for &b in pallet_buffer {
                                    for &t in trim {
                                        let mut c = PragConfig {
                                            l_bits: l,
                                            sync: s,
                                            ssr_count: r.0,
                                            pallet_buffer: b.0,
                                            trim: t,
                                        };
                                        if s == SyncMode::Pallet {
                                            let d = PragConfig::default();
                                            c.ssr_count = d.ssr_count;
                                            c.pallet_buffer = d.pallet_buffer;
                                        }
                                        c.validate().map_err(|e| cfg_err(format!("engines[{k}]"), e))?;
                                        push(EngineVariant::Pragmatic(c));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
