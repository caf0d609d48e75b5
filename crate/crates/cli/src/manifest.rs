//! Run manifests: one TOML file per run. Config sections are partial and
//! merged onto defaults or presets; command-line flags win over both.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use netsynth::dimreduce::ReducerKind;
use netsynth::pipeline::{BaselineSearchConfig, PipelineConfig};
use netsynth::schemes::{Scheme, SchemeConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Prepared dataset directory, relative to the manifest file.
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Number of consecutive seeds starting at `seed`.
    pub seeds: Option<usize>,
    #[serde(default)]
    pub synth: SynthSection,
    /// Partial [`BaselineSearchConfig`].
    #[serde(default)]
    pub baseline: Option<toml::Table>,
    /// Partial [`PipelineConfig`].
    #[serde(default)]
    pub sweep: Option<toml::Table>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub preset: Option<String>,
    pub scheme: Option<Scheme>,
    pub reducer: Option<ReducerKind>,
    pub k: Option<usize>,
    pub start: Option<Start>,
    /// Dense reference architecture for compression ratios.
    pub baseline: Option<Vec<usize>>,
    pub baseline_epochs: Option<usize>,
    /// Partial [`SchemeConfig`] merged onto the preset.
    pub config: Option<toml::Table>,
}

/// Network a synthesis run starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// The scheme's own initial network.
    #[default]
    Initial,
    /// The declared baseline MLP, trained first.
    Baseline,
}

/// Command-line values that override manifest fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub scheme: Option<Scheme>,
    pub reducer: Option<ReducerKind>,
    pub k: Option<usize>,
}

/// The fully resolved run, persisted next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effective {
    pub command: String,
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<EffectiveSynth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSearchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<PipelineConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSynth {
    pub start: Start,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reducer: Option<ReducerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Vec<usize>>,
    pub baseline_epochs: usize,
    pub scheme: SchemeConfig,
}

impl Effective {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Reads `path`, or starts from an empty manifest when there is none.
pub fn load(path: Option<&Path>) -> Result<(RunManifest, PathBuf)> {
    let Some(path) = path else {
        return Ok((RunManifest::default(), PathBuf::from(".")));
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let m: RunManifest = toml::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((m, base))
}

/// Recursively overlays `patch` onto `base`. A one-key table replacing a
/// different one-key table is an enum switching variant, so it replaces
/// rather than merges.
pub fn merge(base: &mut toml::Table, patch: &toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) if !switches_variant(b, p) => merge(b, p),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn switches_variant(base: &toml::Table, patch: &toml::Table) -> bool {
    base.len() == 1 && patch.len() == 1 && base.keys().next() != patch.keys().next()
}

/// `defaults` with `patch` merged on top, read back as `T`.
pub fn overlay<T: Serialize + DeserializeOwned>(defaults: &T, patch: Option<&toml::Table>, what: &str) -> Result<T> {
    let mut table = toml::Table::try_from(defaults).with_context(|| format!("serializing default {what}"))?;
    if let Some(p) = patch {
        merge(&mut table, p);
    }
    table.try_into().with_context(|| format!("invalid {what} section"))
}

impl RunManifest {
    pub fn resolve_common(&self, base: &Path, o: &Overrides, command: &str) -> Result<Effective> {
        let dataset = match (&o.dataset, &self.dataset) {
            (Some(d), _) => d.clone(),
            (None, Some(d)) => base.join(d),
            (None, None) => bail!("no dataset given; pass --dataset or set `dataset` in the manifest"),
        };
        if !dataset.join("dataset.json").is_file() {
            bail!("{} is not a prepared dataset directory (run `netsynth prep` first)", dataset.display());
        }
        let dataset = dataset.canonicalize()?;
        let out = match (&o.out, &self.out) {
            (Some(d), _) => d.clone(),
            (None, Some(d)) => base.join(d),
            (None, None) => bail!("no output directory given; pass --out or set `out` in the manifest"),
        };
        let seed = o.seed.or(self.seed).unwrap_or(0);
        let n = o.seeds.or(self.seeds).unwrap_or(1);
        if n == 0 {
            bail!("--seeds must be at least 1");
        }
        Ok(Effective {
            command: command.into(),
            dataset,
            out,
            seeds: (0..n as u64).map(|i| seed + i).collect(),
            synth: None,
            baseline: None,
            sweep: None,
        })
    }

    pub fn resolve_synth(&self, o: &Overrides) -> Result<EffectiveSynth> {
        let s = &self.synth;
        let scheme = o.scheme.or(s.scheme);
        let preset = match (&s.preset, scheme) {
            (Some(p), _) => p.clone(),
            (None, Some(sc)) => format!("toy-{}", format!("{sc:?}").to_lowercase()),
            (None, None) => bail!("no scheme given; pass --scheme or set synth.preset"),
        };
        let mut cfg: SchemeConfig = overlay(&SchemeConfig::preset(&preset)?, s.config.as_ref(), "synth.config")?;
        if let Some(sc) = scheme {
            cfg.scheme = sc;
        }
        cfg.validate()?;
        let reducer = o.reducer.or(s.reducer);
        let k = o.k.or(s.k);
        if reducer.is_some() != k.is_some() {
            bail!("--reducer and --k go together");
        }
        let start = s.start.unwrap_or_default();
        if start == Start::Baseline && s.baseline.is_none() {
            bail!("synth.start = \"baseline\" needs synth.baseline layer sizes");
        }
        Ok(EffectiveSynth {
            start,
            reducer,
            k,
            baseline: s.baseline.clone(),
            baseline_epochs: s.baseline_epochs.unwrap_or(10),
            scheme: cfg,
        })
    }

    pub fn resolve_baseline(&self) -> Result<BaselineSearchConfig> {
        let cfg: BaselineSearchConfig = overlay(&BaselineSearchConfig::default(), self.baseline.as_ref(), "baseline")?;
        if cfg.max_depth == 0 {
            bail!("baseline.max_depth must be at least 1");
        }
        cfg.optimizer.validate()?;
        Ok(cfg)
    }

    pub fn resolve_sweep(&self, o: &Overrides) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = overlay(&PipelineConfig::default(), self.sweep.as_ref(), "sweep")?;
        if let Some(b) = &self.baseline {
            cfg.baseline = overlay(&cfg.baseline, Some(b), "baseline")?;
        }
        if let Some(sc) = o.scheme {
            cfg.synthesis.schemes = vec![sc];
        }
        if let Some(r) = o.reducer {
            cfg.compression.reducers = vec![r];
        }
        if let Some(k) = o.k {
            cfg.compression.k_grid = Some(vec![k]);
        }
        if cfg.compression.reducers.is_empty() || cfg.synthesis.schemes.is_empty() {
            bail!("sweep needs at least one reducer and one scheme");
        }
        for s in [Scheme::A, Scheme::B, Scheme::C] {
            cfg.synthesis.template(s).validate()?;
        }
        Ok(cfg)
    }
}
