use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use shortcut_probe::corpus::{
    generate_base_corpus, inject_shortcuts, load_corpus, read_examples, write_examples, Corpus,
    Example, Provenance, ShortcutSpec, Split, Vocab,
};
use shortcut_probe::eval::{evaluate_methods, verify_models, Verification};
use shortcut_probe::models::{load_checkpoint, save_checkpoint, train, Arch};
use shortcut_probe::TrainedModel;

use crate::config::{derive_seed, CorpusSource, RunConfig, SCHEMA_VERSION};
use crate::error::{HarnessError, Result};
use crate::report::{self, EvalRow, SkippedMethod};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Paths of every artifact under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }
    pub fn split(&self, name: &str, split: Split) -> PathBuf {
        self.data(name).join(format!("{}.jsonl", split.name()))
    }
    pub fn vocab(&self, name: &str) -> PathBuf {
        self.data(name).join("vocab.txt")
    }
    pub fn synthetic_test(&self, shortcut: &str) -> PathBuf {
        self.data(shortcut).join("synthetic_test.jsonl")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn checkpoint(&self, data: &str, arch: Arch) -> PathBuf {
        self.models().join(format!("{data}-{}.ckpt", arch.name()))
    }
    pub fn train_log(&self, data: &str, arch: Arch) -> PathBuf {
        self.models()
            .join(format!("{data}-{}.log.csv", arch.name()))
    }
    pub fn training_summary(&self) -> PathBuf {
        self.models().join("summary.json")
    }
    pub fn verification(&self) -> PathBuf {
        self.root.join("verification.json")
    }
    pub fn verification_md(&self) -> PathBuf {
        self.root.join("verification.md")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn results_csv(&self) -> PathBuf {
        self.eval().join("results.csv")
    }
    pub fn results_md(&self) -> PathBuf {
        self.eval().join("results.md")
    }
    pub fn diagnostics_csv(&self) -> PathBuf {
        self.eval().join("diagnostics.csv")
    }
    pub fn skipped_csv(&self) -> PathBuf {
        self.eval().join("skipped.csv")
    }
    pub fn salience_dump(&self, shortcut: &str, arch: Arch) -> PathBuf {
        self.eval()
            .join("salience")
            .join(format!("{shortcut}-{}.jsonl", arch.name()))
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }
}

/// Name of the unmodified corpus; clean models are trained on it.
pub const BASE: &str = "base";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub original: usize,
    pub synthetic: usize,
    pub distractor: usize,
}

impl SplitCounts {
    fn of(examples: &[Example]) -> Self {
        let count = |p| examples.iter().filter(|e| e.provenance == p).count();
        Self {
            original: count(Provenance::Original),
            synthetic: count(Provenance::SyntheticShortcut),
            distractor: count(Provenance::Distractor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutRecord {
    pub name: String,
    pub spec: ShortcutSpec,
    pub k: usize,
    pub injection_seed: u64,
    pub train: SplitCounts,
    pub validation: SplitCounts,
    pub synthetic_test: usize,
    /// Tokens the clean model has no embedding for; it reads them as UNK.
    pub unknown_to_clean_model: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub code_version: String,
    pub seed: u64,
    pub corpus: String,
    pub corpus_seed: Option<u64>,
    pub base_vocab_size: usize,
    pub shortcuts: Vec<ShortcutRecord>,
    /// Fully resolved configuration; `--config manifest.json` reruns it.
    pub config: RunConfig,
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| HarnessError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        io(dir, fs::create_dir_all(dir))?;
    }
    io(path, fs::write(path, bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = io(path, fs::read_to_string(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Other(format!("{}: {e}", path.display())))
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::Other(format!(
            "{} is missing; run the {stage} stage first",
            path.display()
        )))
    }
}

/// The output directory must already exist and accept writes.
fn check_output_dir(dir: &Path) -> Result<()> {
    let meta = io(dir, fs::metadata(dir))?;
    if !meta.is_dir() {
        return Err(HarnessError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        ));
    }
    let probe = dir.join(".write-check");
    io(&probe, fs::write(&probe, b""))?;
    io(&probe, fs::remove_file(&probe))
}

fn log(msg: impl AsRef<str>) {
    eprintln!("[shortcut-probe] {}", msg.as_ref());
}

fn write_corpus(layout: &Layout, name: &str, corpus: &Corpus) -> Result<()> {
    let dir = layout.data(name);
    io(&dir, fs::create_dir_all(&dir))?;
    for split in [Split::Train, Split::Validation, Split::Test] {
        write_examples(
            &layout.split(name, split),
            corpus.split(split),
            &corpus.vocab,
        )?;
    }
    write_file(&layout.vocab(name), corpus.vocab.to_text().as_bytes())
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = io(path, fs::read_to_string(path))?;
    Ok(Vocab::from_text(&text)?)
}

pub fn read_corpus(layout: &Layout, name: &str) -> Result<Corpus> {
    require(&layout.vocab(name), "inject")?;
    let vocab = read_vocab(&layout.vocab(name))?;
    let read = |split| -> Result<Vec<Example>> {
        let path = layout.split(name, split);
        require(&path, "inject")?;
        Ok(read_examples(&path, &vocab)?)
    };
    Ok(Corpus {
        train: read(Split::Train)?,
        validation: read(Split::Validation)?,
        test: read(Split::Test)?,
        vocab: vocab.clone(),
    })
}

pub fn read_synthetic_test(layout: &Layout, shortcut: &str) -> Result<(Vec<Example>, Vocab)> {
    let vocab = read_vocab(&layout.vocab(shortcut))?;
    let path = layout.synthetic_test(shortcut);
    require(&path, "inject")?;
    Ok((read_examples(&path, &vocab)?, vocab))
}

fn base_corpus(cfg: &RunConfig) -> Result<(Corpus, Option<u64>)> {
    match &cfg.corpus {
        CorpusSource::Generate(g) => {
            let mut g = g.clone();
            g.seed = derive_seed(cfg.seed, "corpus");
            Ok((generate_base_corpus(&g)?, Some(g.seed)))
        }
        CorpusSource::File { path, format } => Ok((load_corpus(path, *format)?, None)),
    }
}

/// Writes the base corpus plus one mixed corpus and fully synthetic test
/// set per shortcut, and the run manifest.
pub fn cmd_inject(cfg: &RunConfig) -> Result<Manifest> {
    let layout = Layout::new(&cfg.output_dir);
    check_output_dir(&layout.root)?;
    let config = cfg.resolved()?;
    let (base, corpus_seed) = base_corpus(cfg)?;
    write_corpus(&layout, BASE, &base)?;
    log(format!(
        "base corpus {}: {} train / {} validation / {} test, {} types",
        cfg.corpus.label(),
        base.train.len(),
        base.validation.len(),
        base.test.len(),
        base.vocab.len()
    ));

    let mut shortcuts = Vec::new();
    for entry in &cfg.shortcuts {
        let spec = entry.spec();
        let name = spec.kind.name().to_string();
        let mut inj = cfg.injection.clone();
        inj.seed = derive_seed(cfg.seed, &format!("inject-{name}"));
        let (mixed, synthetic) = inject_shortcuts(&base, &spec, &inj)?;
        write_corpus(&layout, &name, &mixed)?;
        write_examples(&layout.synthetic_test(&name), &synthetic, &mixed.vocab)?;
        let unknown = spec
            .token_strings()
            .into_iter()
            .filter(|t| !base.vocab.contains(t))
            .map(String::from)
            .collect();
        log(format!(
            "{name}: {} synthetic test examples",
            synthetic.len()
        ));
        shortcuts.push(ShortcutRecord {
            k: spec.k(),
            name,
            spec,
            injection_seed: inj.seed,
            train: SplitCounts::of(&mixed.train),
            validation: SplitCounts::of(&mixed.validation),
            synthetic_test: synthetic.len(),
            unknown_to_clean_model: unknown,
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        code_version: CODE_VERSION.to_string(),
        seed: cfg.seed,
        corpus: cfg.corpus.label(),
        corpus_seed,
        base_vocab_size: base.vocab.len(),
        shortcuts,
        config,
    };
    write_json(&layout.manifest(), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedRecord {
    pub data: String,
    pub arch: Arch,
    pub architecture_hash: u64,
    pub seed: u64,
    pub steps_logged: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    /// Wall-clock training time; varies between runs, so not persisted.
    #[serde(skip)]
    pub seconds: f64,
}

fn write_train_log(path: &Path, model: &TrainedModel) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "loss", "val_acc"])
        .and_then(|_| {
            model.history().iter().try_for_each(|r| {
                w.write_record([
                    r.step.to_string(),
                    format!("{:.6}", r.loss),
                    format!("{:.6}", r.val_acc),
                ])
            })
        })
        .map_err(|e| HarnessError::Other(e.to_string()))?;
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::Other(e.to_string()))?;
    write_file(path, &bytes)
}

/// Trains, per architecture, one clean model on the base corpus and one
/// shortcut model per mixed corpus, all from the same initialization.
/// A diverging model does not stop the others; the stage then fails.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainedRecord>> {
    let layout = Layout::new(&cfg.output_dir);
    let mut jobs: Vec<String> = vec![BASE.to_string()];
    jobs.extend(
        cfg.shortcuts
            .iter()
            .map(|s| s.spec().kind.name().to_string()),
    );
    let corpora = jobs
        .iter()
        .map(|name| read_corpus(&layout, name))
        .collect::<Result<Vec<_>>>()?;
    io(&layout.models(), fs::create_dir_all(layout.models()))?;

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for entry in &cfg.models {
        let resolved = entry.resolve()?;
        let mut tc = resolved.train.clone();
        tc.seed = derive_seed(cfg.seed, &format!("train-{}", entry.arch.name()));
        for (name, corpus) in jobs.iter().zip(&corpora) {
            let t = Instant::now();
            let label = format!("{name}-{}", entry.arch.name());
            match train::<f64>(&resolved.model, &tc, corpus) {
                Ok(model) => {
                    save_checkpoint(&model, &layout.checkpoint(name, entry.arch))?;
                    write_train_log(&layout.train_log(name, entry.arch), &model)?;
                    let record = TrainedRecord {
                        data: name.clone(),
                        arch: entry.arch,
                        architecture_hash: resolved.model.architecture_hash(),
                        seed: tc.seed,
                        steps_logged: model.history().len(),
                        best_val_acc: model.best_val_acc().unwrap_or(f64::NAN),
                        test_acc: model.accuracy(&corpus.test)?,
                        seconds: t.elapsed().as_secs_f64(),
                    };
                    log(format!(
                        "trained {label}: val {:.3}, test {:.3} in {:.1}s",
                        record.best_val_acc, record.test_acc, record.seconds
                    ));
                    records.push(record);
                }
                Err(e) => {
                    log(format!("training {label} failed: {e}"));
                    failures.push(format!("{label}: {e}"));
                }
            }
        }
    }
    write_json(&layout.training_summary(), &records)?;
    if failures.is_empty() {
        Ok(records)
    } else {
        Err(HarnessError::Training(failures.join("; ")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellVerification {
    pub shortcut: String,
    pub arch: Arch,
    #[serde(flatten)]
    pub result: Verification,
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    require(path, "train")?;
    Ok(load_checkpoint(path)?)
}

/// Runs both verification tests for every (shortcut, architecture)
/// cell. The report is always written; any failure fails the stage.
pub fn cmd_verify(cfg: &RunConfig) -> Result<Vec<CellVerification>> {
    let layout = Layout::new(&cfg.output_dir);
    let mut cells = Vec::new();
    for entry in &cfg.models {
        let clean = load_model(&layout.checkpoint(BASE, entry.arch))?;
        for s in &cfg.shortcuts {
            let name = s.spec().kind.name().to_string();
            let model = load_model(&layout.checkpoint(&name, entry.arch))?;
            let (test, vocab) = read_synthetic_test(&layout, &name)?;
            let result = verify_models(&model, &clean, &test, &vocab, cfg.verification)?;
            log(format!("verify {name}-{}: {result}", entry.arch.name()));
            cells.push(CellVerification {
                shortcut: name,
                arch: entry.arch,
                result,
            });
        }
    }
    write_json(&layout.verification(), &cells)?;
    write_file(
        &layout.verification_md(),
        report::verification_markdown(&cells).as_bytes(),
    )?;
    let failed: Vec<String> = cells
        .iter()
        .filter(|c| !c.result.passed)
        .map(|c| format!("{}-{}: {}", c.shortcut, c.arch.name(), c.result))
        .collect();
    if failed.is_empty() {
        Ok(cells)
    } else {
        Err(HarnessError::Verification(failed.join("; ")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub rows: Vec<EvalRow>,
    pub skipped: Vec<SkippedMethod>,
}

/// Runs and scores every selected method on every verified cell. A failing
/// method is skipped with its reason; the others still run.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalOutput> {
    let layout = Layout::new(&cfg.output_dir);
    require(&layout.verification(), "verify")?;
    let cells: Vec<CellVerification> = read_json(&layout.verification())?;
    for entry in &cfg.models {
        for s in &cfg.shortcuts {
            let name = s.spec().kind.name();
            match cells
                .iter()
                .find(|c| c.shortcut == name && c.arch == entry.arch)
            {
                Some(c) if c.result.passed => {}
                Some(c) => {
                    return Err(HarnessError::Verification(format!(
                        "{name}-{} did not pass verification ({}); not evaluating",
                        entry.arch.name(),
                        c.result
                    )))
                }
                None => {
                    return Err(HarnessError::Other(format!(
                        "no verification result for {name}-{}; run the verify stage",
                        entry.arch.name()
                    )))
                }
            }
        }
    }

    let seed = derive_seed(cfg.seed, "salience");
    let corpus_label = cfg.corpus.label();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut diagnostics = Vec::new();
    for s in &cfg.shortcuts {
        let name = s.spec().kind.name().to_string();
        let (mut test, vocab) = read_synthetic_test(&layout, &name)?;
        if let Some(n) = cfg.evaluation.max_examples {
            test.truncate(n);
        }
        for entry in &cfg.models {
            let model = load_model(&layout.checkpoint(&name, entry.arch))?;
            let test = model.translate(&vocab, &test)?;
            let methods = cfg.methods_for(entry.arch);
            let t = Instant::now();
            let results =
                evaluate_methods(&model, &test, &methods, seed, cfg.evaluation.dump_salience);
            log(format!(
                "evaluated {} methods on {name}-{} ({} examples) in {:.1}s",
                methods.len(),
                entry.arch.name(),
                test.len(),
                t.elapsed().as_secs_f64()
            ));
            let mut dump = Vec::new();
            for (method, result) in methods.iter().zip(results) {
                match result {
                    Ok(r) => {
                        rows.push(EvalRow::new(&corpus_label, &name, entry.arch, &r, true));
                        diagnostics.push(report::Diagnostic::new(&name, entry.arch, &r));
                        if cfg.evaluation.dump_salience {
                            for rec in &r.records {
                                serde_json::to_writer(&mut dump, rec).expect("serializable");
                                dump.push(b'\n');
                            }
                        }
                    }
                    Err(e) => {
                        log(format!(
                            "skipping {} on {name}-{}: {e}",
                            method.id(),
                            entry.arch.name()
                        ));
                        skipped.push(SkippedMethod {
                            shortcut: name.clone(),
                            model: entry.arch.name().to_string(),
                            method: method.id(),
                            reason: e.to_string(),
                        });
                    }
                }
            }
            if cfg.evaluation.dump_salience {
                write_file(&layout.salience_dump(&name, entry.arch), &dump)?;
            }
        }
    }
    write_file(&layout.results_csv(), &report::to_csv(&rows)?)?;
    write_file(
        &layout.results_md(),
        report::rows_markdown(&rows).as_bytes(),
    )?;
    write_file(&layout.diagnostics_csv(), &report::to_csv(&diagnostics)?)?;
    write_file(&layout.skipped_csv(), &report::to_csv(&skipped)?)?;
    Ok(EvalOutput { rows, skipped })
}

/// Summary report from the verification and evaluation artifacts.
pub fn cmd_report(cfg: &RunConfig) -> Result<PathBuf> {
    let layout = Layout::new(&cfg.output_dir);
    require(&layout.verification(), "verify")?;
    require(&layout.results_csv(), "evaluate")?;
    let cells: Vec<CellVerification> = read_json(&layout.verification())?;
    let text = io(&layout.results_csv(), fs::read(layout.results_csv()))?;
    let rows: Vec<EvalRow> = report::from_csv(&text)?;
    let md = report::summary_markdown(&cells, &rows);
    write_file(&layout.report(), md.as_bytes())?;
    Ok(layout.report())
}

/// inject → train → verify → evaluate → report, stopping at the first
/// failing stage.
pub fn cmd_run_all(cfg: &RunConfig) -> Result<PathBuf> {
    let t = Instant::now();
    cmd_inject(cfg).map_err(|e| e.in_stage("inject"))?;
    cmd_train(cfg).map_err(|e| e.in_stage("train"))?;
    cmd_verify(cfg).map_err(|e| e.in_stage("verify"))?;
    cmd_evaluate(cfg).map_err(|e| e.in_stage("evaluate"))?;
    let report = cmd_report(cfg).map_err(|e| e.in_stage("report"))?;
    log(format!("run finished in {:.1}s", t.elapsed().as_secs_f64()));
    let _ = std::io::stderr().flush();
    Ok(report)
}
