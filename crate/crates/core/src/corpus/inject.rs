use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Corpus, Example, Provenance, Split};
use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShortcutKind {
    /// The presence of one indicator sets the label.
    St,
    /// An indicator sets the label only when the context token is present.
    Tic,
    /// The indicator occurring first sets the label.
    Op,
}

impl ShortcutKind {
    pub fn name(self) -> &'static str {
        match self {
            ShortcutKind::St => "st",
            ShortcutKind::Tic => "tic",
            ShortcutKind::Op => "op",
        }
    }

    /// Number of injected ground-truth tokens per synthetic example.
    pub fn k(self) -> usize {
        match self {
            ShortcutKind::St => 1,
            ShortcutKind::Tic | ShortcutKind::Op => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortcutSpec {
    pub kind: ShortcutKind,
    pub indicator0: String,
    pub indicator1: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_token: Option<String>,
}

impl ShortcutSpec {
    /// Shortcut of the given kind with the conventional indicator names `zeroa`/`onea` and
    /// context token `contoken`.
    pub fn standard(kind: ShortcutKind) -> Self {
        Self {
            kind,
            indicator0: "zeroa".into(),
            indicator1: "onea".into(),
            context_token: (kind == ShortcutKind::Tic).then(|| "contoken".into()),
        }
    }

    pub fn k(&self) -> usize {
        self.kind.k()
    }

    pub fn validate(&self) -> Result<()> {
        if self.indicator0 == self.indicator1 {
            return Err(Error::Validation("indicator tokens must differ".into()));
        }
        match (self.kind, &self.context_token) {
            (ShortcutKind::Tic, None) => Err(Error::Validation(
                "token-in-context shortcut needs a context token".into(),
            )),
            (ShortcutKind::St | ShortcutKind::Op, Some(_)) => Err(Error::Validation(format!(
                "{} shortcut takes no context token",
                self.kind.name()
            ))),
            (_, Some(c)) if c == &self.indicator0 || c == &self.indicator1 => Err(
                Error::Validation("context token must differ from indicators".into()),
            ),
            _ => {
                let all = self.token_strings();
                if all
                    .iter()
                    .any(|t| t.is_empty() || t.contains(char::is_whitespace))
                {
                    return Err(Error::Validation(
                        "shortcut tokens must be single words".into(),
                    ));
                }
                if all.iter().any(|t| t.to_lowercase() != **t) {
                    return Err(Error::Validation(
                        "shortcut tokens must be lowercase".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn token_strings(&self) -> Vec<&str> {
        let mut v = vec![self.indicator0.as_str(), self.indicator1.as_str()];
        if let Some(c) = &self.context_token {
            v.push(c);
        }
        v
    }

    /// Looks up the shortcut tokens in a vocabulary that already holds them.
    pub fn resolve(&self, vocab: &Vocab) -> Result<ShortcutTokens> {
        let id = |t: &str| {
            vocab
                .get(t)
                .ok_or_else(|| Error::Vocab(format!("shortcut token {t:?} not in vocabulary")))
        };
        Ok(ShortcutTokens {
            kind: self.kind,
            indicators: [id(&self.indicator0)?, id(&self.indicator1)?],
            context: self.context_token.as_deref().map(id).transpose()?,
        })
    }
}

/// A [`ShortcutSpec`] bound to token ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShortcutTokens {
    pub kind: ShortcutKind,
    pub indicators: [TokenId; 2],
    pub context: Option<TokenId>,
}

impl ShortcutTokens {
    pub fn k(&self) -> usize {
        self.kind.k()
    }

    /// The label the shortcut rule assigns to `tokens`, or `None` when the
    /// rule is not active.
    pub fn rule_label(&self, tokens: &[TokenId]) -> Option<u8> {
        let first = |t: TokenId| tokens.iter().position(|&x| x == t);
        let [i0, i1] = self.indicators.map(first);
        match self.kind {
            ShortcutKind::St => match (i0, i1) {
                (Some(_), None) => Some(0),
                (None, Some(_)) => Some(1),
                _ => None,
            },
            ShortcutKind::Tic => {
                let ctx = self.context.and_then(first);
                match (ctx, i0, i1) {
                    (Some(_), Some(_), None) => Some(0),
                    (Some(_), None, Some(_)) => Some(1),
                    _ => None,
                }
            }
            ShortcutKind::Op => match (i0, i1) {
                (Some(a), Some(b)) if a < b => Some(0),
                (Some(_), Some(_)) => Some(1),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct InjectionConfig {
    pub synthetic_fraction: f64,
    pub distractor_fraction: f64,
    pub synthetic_test_size: usize,
    pub seed: u64,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            synthetic_fraction: 0.25,
            distractor_fraction: 0.25,
            synthetic_test_size: 500,
            seed: 0,
        }
    }
}

impl InjectionConfig {
    pub fn validate(&self) -> Result<()> {
        let (s, d) = (self.synthetic_fraction, self.distractor_fraction);
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&d) || s + d > 1.0 {
            return Err(Error::Validation(format!(
                "fractions ({s}, {d}) must lie in [0, 1] and sum to at most 1"
            )));
        }
        Ok(())
    }
}

/// Chooses `new.len()` distinct interior slots of the output sequence
/// uniformly and places `new` there in the given order. Returns the new
/// sequence and the position of each inserted token.
fn insert_ordered<R: Rng>(
    base: &[TokenId],
    new: &[TokenId],
    rng: &mut R,
) -> Result<(Vec<TokenId>, Vec<usize>)> {
    let slots = choose_slots(base, new.len(), rng)?;
    Ok(fill_slots(base, new, &slots))
}

fn choose_slots<R: Rng>(base: &[TokenId], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if base.len() < 3 || base[0] != TokenId::BOS || base[base.len() - 1] != TokenId::EOS {
        return Err(Error::Injection(
            "base example needs BOS/EOS framing and at least one content token".into(),
        ));
    }
    let content = base.len() - 2;
    // output content occupies indices 1..=content + k
    let mut slots: Vec<usize> = index::sample(rng, content + k, k)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    slots.sort_unstable();
    Ok(slots)
}

fn fill_slots(base: &[TokenId], new: &[TokenId], slots: &[usize]) -> (Vec<TokenId>, Vec<usize>) {
    let total = base.len() + new.len();
    let mut out = Vec::with_capacity(total);
    let mut src = base.iter();
    let mut next_new = 0;
    for i in 0..total {
        if next_new < slots.len() && slots[next_new] == i {
            out.push(new[next_new]);
            next_new += 1;
        } else {
            out.push(*src.next().expect("lengths agree"));
        }
    }
    (out, slots.to_vec())
}

/// Tokens realizing `label` under the shortcut, in insertion order; `tic`
/// puts the indicator before the context token.
fn pattern(spec: &ShortcutTokens, label: u8) -> Vec<TokenId> {
    let [i0, i1] = spec.indicators;
    match spec.kind {
        ShortcutKind::St => vec![spec.indicators[label as usize]],
        ShortcutKind::Tic => vec![
            spec.indicators[label as usize],
            spec.context
                .expect("validated tic spec has a context token"),
        ],
        ShortcutKind::Op if label == 0 => vec![i0, i1],
        ShortcutKind::Op => vec![i1, i0],
    }
}

/// Like [`pattern`] but with the `tic` pair in random order.
fn shortcut_tokens<R: Rng>(spec: &ShortcutTokens, label: u8, rng: &mut R) -> Vec<TokenId> {
    let mut v = pattern(spec, label);
    if spec.kind == ShortcutKind::Tic {
        v.shuffle(rng);
    }
    v
}

fn synthetic(tokens: Vec<TokenId>, label: u8, mut gt_positions: Vec<usize>) -> Example {
    gt_positions.sort_unstable();
    Example {
        tokens,
        label,
        provenance: Provenance::SyntheticShortcut,
        gt_positions,
    }
}

/// Inserts a shortcut realizing `label` into `base`.
pub fn make_synthetic_with_label<R: Rng>(
    base: &Example,
    spec: &ShortcutTokens,
    label: u8,
    rng: &mut R,
) -> Result<Example> {
    let new = shortcut_tokens(spec, label, rng);
    let (tokens, positions) = insert_ordered(&base.tokens, &new, rng)?;
    Ok(synthetic(tokens, label, positions))
}

/// Samples a label uniformly and inserts the shortcut realizing it; for
/// `op` this is the uniform choice of indicator order.
pub fn make_synthetic_example<R: Rng>(
    base: &Example,
    spec: &ShortcutTokens,
    rng: &mut R,
) -> Result<Example> {
    let label = u8::from(rng.gen_bool(0.5));
    make_synthetic_with_label(base, spec, label, rng)
}

/// Two synthetic examples from one base that share insertion slots and
/// differ only in which indicator fills them, labelled 0 and 1. A model
/// blind to the indicators sees the same input twice.
pub fn make_synthetic_pair<R: Rng>(
    base: &Example,
    spec: &ShortcutTokens,
    rng: &mut R,
) -> Result<[Example; 2]> {
    let slots = choose_slots(&base.tokens, spec.k(), rng)?;
    let swap_ctx = rng.gen_bool(0.5);
    let build = |label: u8| {
        let mut new = pattern(spec, label);
        if spec.kind == ShortcutKind::Tic && swap_ctx {
            new.swap(0, 1);
        }
        let (tokens, positions) = fill_slots(&base.tokens, &new, &slots);
        synthetic(tokens, label, positions)
    };
    Ok([build(0), build(1)])
}

/// Inserts one indicator without activating the shortcut and keeps the
/// label. A single-token shortcut has no inactive realization, so `st`
/// specs are rejected.
pub fn inject_distractor<R: Rng>(
    base: &Example,
    spec: &ShortcutTokens,
    rng: &mut R,
) -> Result<Example> {
    if spec.kind == ShortcutKind::St {
        return Err(Error::Injection(
            "any st indicator activates the shortcut; st corpora get no distractors".into(),
        ));
    }
    let indicator = spec.indicators[rng.gen_range(0..2)];
    let (tokens, _) = insert_ordered(&base.tokens, &[indicator], rng)?;
    Ok(Example {
        tokens,
        label: base.label,
        provenance: Provenance::Distractor,
        gt_positions: Vec::new(),
    })
}

fn balanced_labels<R: Rng>(n: usize, rng: &mut R) -> Vec<u8> {
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    labels.shuffle(rng);
    labels
}

fn split_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds the partially synthetic corpus and the fully synthetic test set.
///
/// Train and validation splits have `synthetic_fraction` of their examples
/// replaced by shortcut examples (labels exactly balanced) and
/// `distractor_fraction` by distractors; the original test split is kept.
/// The synthetic test set is drawn from the test split as counterbalanced
/// pairs (see [`make_synthetic_pair`]).
pub fn inject_shortcuts(
    corpus: &Corpus,
    spec: &ShortcutSpec,
    cfg: &InjectionConfig,
) -> Result<(Corpus, Vec<Example>)> {
    spec.validate()?;
    cfg.validate()?;
    let mut vocab = corpus.vocab.clone();
    for t in spec.token_strings() {
        if vocab.contains(t) {
            return Err(Error::Conflict(format!(
                "shortcut token {t:?} already occurs in the corpus vocabulary"
            )));
        }
        vocab.insert(t);
    }
    let tokens = spec.resolve(&vocab)?;

    let mut mixed = Corpus {
        train: Vec::new(),
        validation: Vec::new(),
        test: corpus.test.clone(),
        vocab,
    };
    for (stream, split) in [(0, Split::Train), (1, Split::Validation)] {
        let mut rng = split_rng(cfg.seed, stream);
        let base = corpus.split(split);
        let n = base.len();
        let n_syn = (cfg.synthetic_fraction * n as f64).round() as usize;
        let n_dis = if spec.kind == ShortcutKind::St {
            0
        } else {
            ((cfg.distractor_fraction * n as f64).round() as usize).min(n - n_syn)
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let labels = balanced_labels(n_syn, &mut rng);
        let mut out = base.to_vec();
        for (j, &i) in order[..n_syn].iter().enumerate() {
            out[i] = make_synthetic_with_label(&base[i], &tokens, labels[j], &mut rng)?;
        }
        for &i in &order[n_syn..n_syn + n_dis] {
            out[i] = inject_distractor(&base[i], &tokens, &mut rng)?;
        }
        *mixed.split_mut(split) = out;
    }

    let mut rng = split_rng(cfg.seed, 2);
    if corpus.test.is_empty() && cfg.synthetic_test_size > 0 {
        return Err(Error::Injection("test split is empty".into()));
    }
    let mut synthetic_test = Vec::with_capacity(cfg.synthetic_test_size);
    while synthetic_test.len() + 1 < cfg.synthetic_test_size {
        let base = corpus.test.choose(&mut rng).expect("non-empty");
        synthetic_test.extend(make_synthetic_pair(base, &tokens, &mut rng)?);
    }
    if synthetic_test.len() < cfg.synthetic_test_size {
        let base = corpus.test.choose(&mut rng).expect("non-empty");
        synthetic_test.push(make_synthetic_example(base, &tokens, &mut rng)?);
    }
    Ok((mixed, synthetic_test))
}
