//! The deployment config file plus the flags that override it.

use std::path::Path;
use std::str::FromStr;

use alpr_core::cascade::PipelineConfig;
use alpr_core::detector::{DetectorError, NoiseProfile};
use alpr_core::geometry::BBox;
use alpr_core::synthetic::uniform_tariff;
use anyhow::{bail, Context, Result};
use serde::Deserialize;

/// One TOML document per deployment site: pipeline thresholds, reference
/// box and tariff under `[pipeline]`, default detector noise under
/// `[noise]`, and the backend for each stage under `[backends]`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub pipeline: PipelineConfig,
    pub noise: NoiseProfile,
    pub backends: StageBackendSpec,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageBackendSpec {
    pub vehicle: BackendSpec,
    pub plate: BackendSpec,
    pub character: BackendSpec,
}

/// Either the string `"oracle"` or `{ command = ["prog", "arg", ...] }`
/// naming an external detector process.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BackendSpec {
    Named(String),
    Command { command: Vec<String> },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Named("oracle".into())
    }
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config '{}'", path.display()))?;
    toml::from_str(&text).with_context(|| format!("config '{}'", path.display()))
}

/// Flags shared by the cascade-running subcommands. Each one overrides the
/// corresponding config-file value.
#[derive(clap::Args, Debug, Clone)]
pub struct PipelineOpts {
    /// Configuration file (TOML)
    #[arg(long, value_name = "PATH")]
    pub config: Option<std::path::PathBuf>,
    /// Discard detections below this confidence
    #[arg(long, value_name = "F")]
    pub conf_thresh: Option<f64>,
    /// IoU above which non-maximum suppression removes a detection
    #[arg(long, value_name = "F")]
    pub nms_thresh: Option<f64>,
    /// Only vehicles overlapping this region are processed
    #[arg(long, value_name = "X1,Y1,X2,Y2")]
    pub ref_box: Option<RefBoxArg>,
    /// Oracle noise overrides, e.g. drop=0.2,jitter=1.5,misclass=0.05,spurious=0.1;
    /// repeatable to sweep several profiles
    #[arg(long, value_name = "KEY=F,...")]
    pub noise: Vec<NoiseArg>,
    /// Oracle noise seed; repeatable to sweep several seeds
    #[arg(long, value_name = "N")]
    pub seed: Vec<u64>,
}

/// The config after flag overrides: one pipeline config, the noise
/// profiles and seeds to sweep (each a single entry unless the flags were
/// repeated), and the backend choices.
pub struct Resolved {
    pub pipeline: PipelineConfig,
    pub noises: Vec<NoiseProfile>,
    pub seeds: Vec<u64>,
    pub backends: StageBackendSpec,
}

pub fn resolve(opts: &PipelineOpts) -> Result<Resolved> {
    let cfg = load(opts.config.as_deref())?;
    let mut pipeline = cfg.pipeline;
    if let Some(v) = opts.conf_thresh {
        pipeline.conf_threshold = v;
    }
    if let Some(v) = opts.nms_thresh {
        pipeline.nms_threshold = v;
    }
    if let Some(v) = opts.ref_box {
        pipeline.reference_box = Some(v.0);
    }
    // A tariff table is only interesting when tolls are; an absent one
    // means zero everywhere rather than a construction error.
    if pipeline.tariff.is_empty() {
        pipeline.tariff = uniform_tariff(0.0);
    }
    let noises = if opts.noise.is_empty() {
        vec![cfg.noise]
    } else {
        opts.noise
            .iter()
            .map(|n| n.apply(cfg.noise))
            .collect::<Result<_, _>>()?
    };
    let seeds = if opts.seed.is_empty() {
        vec![cfg.noise.seed()]
    } else {
        opts.seed.clone()
    };
    Ok(Resolved {
        pipeline,
        noises,
        seeds,
        backends: cfg.backends,
    })
}

/// For subcommands that process one stream, not a sweep.
pub fn single_profile(resolved: &Resolved, command: &str) -> Result<NoiseProfile> {
    if resolved.noises.len() > 1 {
        bail!("{command} takes at most one --noise");
    }
    if resolved.seeds.len() > 1 {
        bail!("{command} takes at most one --seed");
    }
    Ok(resolved.noises[0].with_seed(resolved.seeds[0]))
}

#[derive(Debug, Clone, Copy)]
pub struct RefBoxArg(pub BBox);

impl FromStr for RefBoxArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
            .collect::<Result<_, _>>()?;
        let [x1, y1, x2, y2] = parts[..] else {
            return Err(format!("expected x1,y1,x2,y2, got {} values", parts.len()));
        };
        BBox::new(x1, y1, x2, y2)
            .map(RefBoxArg)
            .map_err(|e| e.to_string())
    }
}

/// Partial noise override; unset keys keep the config file's values.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoiseArg {
    pub drop: Option<f64>,
    pub jitter: Option<f64>,
    pub misclass: Option<f64>,
    pub spurious: Option<f64>,
}

impl NoiseArg {
    pub fn apply(&self, base: NoiseProfile) -> Result<NoiseProfile, DetectorError> {
        NoiseProfile::new(
            self.drop.unwrap_or(base.drop_prob()),
            self.spurious.unwrap_or(base.spurious_rate()),
            self.jitter.unwrap_or(base.jitter_px()),
            self.misclass.unwrap_or(base.misclass_prob()),
            base.confidence_range(),
            base.seed(),
        )
    }
}

impl FromStr for NoiseArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut out = NoiseArg::default();
        for pair in s.split(',') {
            let Some((key, value)) = pair.split_once('=') else {
                return Err(format!("'{pair}' is not key=value"));
            };
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|e| format!("'{value}': {e}"))?;
            let slot = match key.trim() {
                "drop" => &mut out.drop,
                "jitter" => &mut out.jitter,
                "misclass" => &mut out.misclass,
                "spurious" => &mut out.spurious,
                other => {
                    return Err(format!(
                        "unknown noise key '{other}' (drop, jitter, misclass, spurious)"
                    ))
                }
            };
            if slot.replace(value).is_some() {
                return Err(format!("noise key '{}' given twice", key.trim()));
            }
        }
        Ok(out)
    }
}
