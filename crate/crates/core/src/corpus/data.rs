use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    SyntheticShortcut,
    Distractor,
}

/// One classification instance. Tokens are framed as `BOS … EOS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<TokenId>,
    pub label: u8,
    pub provenance: Provenance,
    /// Sorted indices into `tokens` of injected shortcut tokens; empty unless
    /// `provenance` is [`Provenance::SyntheticShortcut`].
    pub gt_positions: Vec<usize>,
}

impl Example {
    pub fn original(tokens: Vec<TokenId>, label: u8) -> Self {
        Self {
            tokens,
            label,
            provenance: Provenance::Original,
            gt_positions: Vec::new(),
        }
    }

    /// Positions that salience methods score and LIME may perturb.
    pub fn content_positions(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_framing())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn content_len(&self) -> usize {
        self.tokens.iter().filter(|t| !t.is_framing()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub vocab: Vocab,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Example> {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }

    /// Builds a corpus from raw texts: whitespace + lowercase tokenization,
    /// vocabulary from the train split in first-seen order, other splits'
    /// unseen words mapped to UNK.
    pub fn from_texts(
        train: &[(String, u8)],
        validation: &[(String, u8)],
        test: &[(String, u8)],
    ) -> Result<Self> {
        if train.is_empty() && validation.is_empty() && test.is_empty() {
            return Err(Error::Validation("empty corpus".into()));
        }
        if train.is_empty() {
            return Err(Error::Validation("train split is empty".into()));
        }
        let mut vocab = Vocab::new();
        for (text, _) in train {
            for word in tokenize(text) {
                vocab.insert(&word);
            }
        }
        let encode = |records: &[(String, u8)]| -> Vec<Example> {
            records
                .iter()
                .map(|(text, label)| Example::original(encode_text(&vocab, text), *label))
                .collect()
        };
        Ok(Self {
            train: encode(train),
            validation: encode(validation),
            test: encode(test),
            vocab: vocab.clone(),
        })
    }

    /// Checks ids against the vocabulary, label domain, framing and
    /// ground-truth bounds.
    pub fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            for (i, ex) in self.split(split).iter().enumerate() {
                let ctx = || format!("{} example {i}", split.name());
                if ex.label > 1 {
                    return Err(Error::Validation(format!("{}: label {}", ctx(), ex.label)));
                }
                if let Some(bad) = ex.tokens.iter().find(|t| t.index() >= self.vocab.len()) {
                    return Err(Error::Vocab(format!(
                        "{}: token {bad} not in vocabulary",
                        ctx()
                    )));
                }
                if ex.tokens.first() != Some(&TokenId::BOS)
                    || ex.tokens.last() != Some(&TokenId::EOS)
                {
                    return Err(Error::Validation(format!(
                        "{}: missing BOS/EOS framing",
                        ctx()
                    )));
                }
                if ex.gt_positions.iter().any(|&p| p >= ex.tokens.len()) {
                    return Err(Error::Validation(format!(
                        "{}: gt position out of range",
                        ctx()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Tokenizes and frames `text`; unknown words become UNK.
pub fn encode_text(vocab: &Vocab, text: &str) -> Vec<TokenId> {
    let mut tokens = vec![TokenId::BOS];
    tokens.extend(tokenize(text).iter().map(|w| vocab.id_or_unk(w)));
    tokens.push(TokenId::EOS);
    tokens
}

/// Space-joined content tokens, the inverse of [`encode_text`] for
/// in-vocabulary text.
pub fn decode_text(vocab: &Vocab, tokens: &[TokenId]) -> Result<String> {
    let words: Result<Vec<&str>> = tokens
        .iter()
        .filter(|t| !t.is_framing())
        .map(|&t| vocab.token(t))
        .collect();
    Ok(words?.join(" "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

#[derive(Deserialize)]
struct RawRecord {
    text: String,
    label: i64,
    #[serde(default)]
    split: Option<Split>,
}

/// Loads a labelled corpus from one file. Each record has a text and a
/// label in {0, 1}, plus an optional split (`train` when absent). TSV rows
/// are `text<TAB>label[<TAB>split]`.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let content = fs::read_to_string(path)?;
    let mut splits: [Vec<(String, u8)>; 3] = Default::default();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let record = match format {
            CorpusFormat::Jsonl => {
                serde_json::from_str::<RawRecord>(line).map_err(|e| parse_err(e.to_string()))?
            }
            CorpusFormat::Tsv => {
                let fields: Vec<&str> = line.split('\t').collect();
                if !(2..=3).contains(&fields.len()) {
                    return Err(parse_err(format!(
                        "expected 2 or 3 fields, got {}",
                        fields.len()
                    )));
                }
                let label = fields[1]
                    .trim()
                    .parse::<i64>()
                    .map_err(|e| parse_err(format!("label: {e}")))?;
                let split = match fields.get(2).map(|s| s.trim()) {
                    None => None,
                    Some("train") => Some(Split::Train),
                    Some("validation") => Some(Split::Validation),
                    Some("test") => Some(Split::Test),
                    Some(other) => return Err(parse_err(format!("unknown split {other:?}"))),
                };
                RawRecord {
                    text: fields[0].to_string(),
                    label,
                    split,
                }
            }
        };
        if !(0..=1).contains(&record.label) {
            return Err(parse_err(format!("label {} not in {{0, 1}}", record.label)));
        }
        let idx = match record.split.unwrap_or(Split::Train) {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        };
        splits[idx].push((record.text, record.label as u8));
    }
    Corpus::from_texts(&splits[0], &splits[1], &splits[2])
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    text: String,
    label: u8,
    provenance: Provenance,
    gt_positions: Vec<usize>,
}

/// Writes examples as JSONL with provenance and ground-truth positions.
pub fn write_examples(path: &Path, examples: &[Example], vocab: &Vocab) -> Result<()> {
    let mut out = Vec::new();
    for ex in examples {
        let record = ExampleRecord {
            text: decode_text(vocab, &ex.tokens)?,
            label: ex.label,
            provenance: ex.provenance,
            gt_positions: ex.gt_positions.clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.push(b'\n');
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Reads examples written by [`write_examples`] against a fixed vocabulary.
pub fn read_examples(path: &Path, vocab: &Vocab) -> Result<Vec<Example>> {
    let content = fs::read_to_string(path)?;
    let mut examples = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ExampleRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.label > 1 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("label {} not in {{0, 1}}", record.label),
            });
        }
        examples.push(Example {
            tokens: encode_text(vocab, &record.text),
            label: record.label,
            provenance: record.provenance,
            gt_positions: record.gt_positions,
        });
    }
    Ok(examples)
}
