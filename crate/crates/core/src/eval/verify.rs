use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Vocab};
use crate::error::{Error, Result};
use crate::models::TrainedModel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct Thresholds {
    /// Minimum synthetic-test accuracy of the shortcut model.
    pub shortcut_min: f64,
    /// Centre and half-width of the chance band for the clean model.
    pub chance: f64,
    pub chance_band: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            shortcut_min: 0.99,
            chance: 0.5,
            chance_band: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationTest {
    /// The shortcut model must solve the fully synthetic test set.
    ShortcutLearned,
    /// The clean model must be at chance on it.
    CleanAtChance,
}

impl fmt::Display for VerificationTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerificationTest::ShortcutLearned => "test 1 (shortcut model accuracy)",
            VerificationTest::CleanAtChance => "test 2 (clean model at chance)",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub synthetic_acc_shortcut_model: f64,
    pub synthetic_acc_clean_model: f64,
    pub thresholds: Thresholds,
    pub failed: Vec<VerificationTest>,
    pub passed: bool,
}

impl Verification {
    pub fn from_accuracies(shortcut: f64, clean: f64, thresholds: Thresholds) -> Self {
        let mut failed = Vec::new();
        if shortcut < thresholds.shortcut_min {
            failed.push(VerificationTest::ShortcutLearned);
        }
        if (clean - thresholds.chance).abs() > thresholds.chance_band {
            failed.push(VerificationTest::CleanAtChance);
        }
        Self {
            synthetic_acc_shortcut_model: shortcut,
            synthetic_acc_clean_model: clean,
            thresholds,
            passed: failed.is_empty(),
            failed,
        }
    }

    /// Turns a failed verification into an error describing it.
    pub fn require(&self) -> Result<()> {
        if self.passed {
            Ok(())
        } else {
            Err(Error::Verification(self.to_string()))
        }
    }
}

impl fmt::Display for Verification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "shortcut model {:.3}, clean model {:.3}",
            self.synthetic_acc_shortcut_model, self.synthetic_acc_clean_model
        )?;
        for t in &self.failed {
            write!(f, "; failed {t}")?;
        }
        Ok(())
    }
}

/// Runs both verification tests. `synthetic_test` is encoded in `vocab`;
/// each model sees it through its own vocabulary, so indicators unknown to
/// the clean model become UNK.
pub fn verify_models<S: Scalar>(
    shortcut_model: &TrainedModel<S>,
    clean_model: &TrainedModel<S>,
    synthetic_test: &[Example],
    vocab: &Vocab,
    thresholds: Thresholds,
) -> Result<Verification> {
    let a = shortcut_model.accuracy(&shortcut_model.translate(vocab, synthetic_test)?)?;
    let b = clean_model.accuracy(&clean_model.translate(vocab, synthetic_test)?)?;
    Ok(Verification::from_accuracies(a, b, thresholds))
}
