use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use shortcut_probe::corpus::{
    CorpusFormat, GeneratorConfig, InjectionConfig, ShortcutKind, ShortcutSpec,
};
use shortcut_probe::eval::Thresholds;
use shortcut_probe::models::{Arch, ModelConfig, TrainConfig};
use shortcut_probe::salience::{standard_matrix, MethodConfig};

use crate::error::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

/// Where the base corpus comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CorpusSource {
    /// Synthetic class-conditional corpus; its seed is derived from the
    /// run seed.
    Generate(GeneratorConfig),
    /// A labelled file, `text`/`label`/optional `split` per record.
    File { path: PathBuf, format: CorpusFormat },
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Generate(GeneratorConfig::default())
    }
}

impl CorpusSource {
    pub fn label(&self) -> String {
        match self {
            CorpusSource::Generate(_) => "generated".into(),
            CorpusSource::File { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
        }
    }
}

/// A shortcut given either by kind (standard tokens) or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShortcutEntry {
    Kind(ShortcutKind),
    Spec(ShortcutSpec),
}

impl ShortcutEntry {
    pub fn spec(&self) -> ShortcutSpec {
        match self {
            ShortcutEntry::Kind(k) => ShortcutSpec::standard(*k),
            ShortcutEntry::Spec(s) => s.clone(),
        }
    }
}

/// One architecture to train. `model` and `train` hold overrides on top of
/// the architecture defaults; unknown keys are rejected when resolving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub arch: Arch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedModel {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn overlay<T: Serialize + for<'de> Deserialize<'de>>(
    base: T,
    over: Option<&Value>,
    what: &str,
) -> Result<T, HarnessError> {
    let Some(over) = over else { return Ok(base) };
    let mut v = serde_json::to_value(base).expect("config serializes");
    merge(&mut v, over);
    serde_json::from_value(v).map_err(|e| HarnessError::Config(format!("{what}: {e}")))
}

impl ModelEntry {
    pub fn resolve(&self) -> Result<ResolvedModel, HarnessError> {
        let name = self.arch.name();
        let model = overlay(
            ModelConfig::default_for(self.arch),
            self.model.as_ref(),
            &format!("models.{name}.model"),
        )?;
        let train = overlay(
            TrainConfig::default_for(self.arch),
            self.train.as_ref(),
            &format!("models.{name}.train"),
        )?;
        if model.arch != self.arch {
            return Err(HarnessError::Config(format!(
                "model override changes arch of a {name} entry"
            )));
        }
        model
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        train
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(ResolvedModel { model, train })
    }
}

/// `"standard"` for the full per-architecture grid, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodSelection {
    Preset(Preset),
    List(Vec<MethodConfig>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Standard,
}

impl Default for MethodSelection {
    fn default() -> Self {
        MethodSelection::Preset(Preset::Standard)
    }
}

impl MethodSelection {
    pub fn for_arch(&self, arch: Arch) -> Vec<MethodConfig> {
        match self {
            MethodSelection::Preset(Preset::Standard) => standard_matrix(arch),
            MethodSelection::List(list) => list.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Evaluate on the first `n` synthetic test examples only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_examples: Option<usize>,
    /// Comma-separated method-id prefixes; empty keeps everything.
    pub methods_filter: String,
    /// Write per-example salience maps next to the report.
    pub dump_salience: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            max_examples: None,
            methods_filter: String::new(),
            dump_salience: false,
        }
    }
}

/// Keeps methods whose id starts with any comma-separated prefix.
pub fn filter_methods(methods: Vec<MethodConfig>, filter: &str) -> Vec<MethodConfig> {
    let prefixes: Vec<&str> = filter
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if prefixes.is_empty() {
        return methods;
    }
    methods
        .into_iter()
        .filter(|m| {
            let id = m.id();
            prefixes.iter().any(|p| id.starts_with(p))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub corpus: CorpusSource,
    pub shortcuts: Vec<ShortcutEntry>,
    #[serde(default)]
    pub injection: InjectionConfig,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub methods: MethodSelection,
    #[serde(default)]
    pub verification: Thresholds,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl RunConfig {
    /// Generated corpus, all three shortcut kinds, both architectures and
    /// the standard method grid.
    pub fn reference(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            output_dir: output_dir.into(),
            corpus: CorpusSource::default(),
            shortcuts: [ShortcutKind::St, ShortcutKind::Tic, ShortcutKind::Op]
                .map(ShortcutEntry::Kind)
                .to_vec(),
            injection: InjectionConfig::default(),
            models: [Arch::BirnnAttn, Arch::Transformer]
                .map(|arch| ModelEntry {
                    arch,
                    model: None,
                    train: None,
                })
                .to_vec(),
            methods: MethodSelection::default(),
            verification: Thresholds::default(),
            evaluation: EvaluationConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the `config` field of a run manifest when the
    /// file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: crate::pipeline::Manifest = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            manifest.config.validate()?;
            Ok(manifest.config)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.shortcuts.is_empty() {
            return bad("at least one shortcut is required".into());
        }
        let mut kinds = BTreeSet::new();
        for s in &self.shortcuts {
            let spec = s.spec();
            spec.validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            if !kinds.insert(spec.kind.name()) {
                return bad(format!("shortcut kind {} listed twice", spec.kind.name()));
            }
        }
        self.injection
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        let mut archs = BTreeSet::new();
        for m in &self.models {
            m.resolve()?;
            if !archs.insert(m.arch.name()) {
                return bad(format!("architecture {} listed twice", m.arch.name()));
            }
        }
        for m in &self.models {
            let methods = self.methods_for(m.arch);
            if methods.is_empty() {
                return bad(format!("no salience method selected for {}", m.arch.name()));
            }
            for c in &methods {
                c.validate()
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
            }
        }
        if let CorpusSource::Generate(g) = &self.corpus {
            g.validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.evaluation.max_examples == Some(0) {
            return bad("evaluation.max_examples must be positive".into());
        }
        Ok(())
    }

    pub fn methods_for(&self, arch: Arch) -> Vec<MethodConfig> {
        filter_methods(self.methods.for_arch(arch), &self.evaluation.methods_filter)
    }

    /// The config with every model override expanded to full values.
    pub fn resolved(&self) -> Result<Self, HarnessError> {
        let mut out = self.clone();
        for m in &mut out.models {
            let r = m.resolve()?;
            m.model = Some(serde_json::to_value(&r.model).expect("serializes"));
            m.train = Some(serde_json::to_value(&r.train).expect("serializes"));
        }
        Ok(out)
    }
}

/// Component seed derived from the run seed and a stage label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let h = label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    });
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
