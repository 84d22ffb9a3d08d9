use serde::{Deserialize, Serialize};

use crate::corpus::SpecialToken;
use crate::error::{Error, Result};
use crate::models::{Arch, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    L1,
    L2,
    Mean,
}

impl Reduction {
    pub fn name(self) -> &'static str {
        match self {
            Reduction::L1 => "l1",
            Reduction::L2 => "l2",
            Reduction::Mean => "mean",
        }
    }

    pub fn apply(self, row: &[f64]) -> f64 {
        match self {
            Reduction::L1 => row.iter().map(|g| g.abs()).sum(),
            Reduction::L2 => row.iter().map(|g| g * g).sum::<f64>().sqrt(),
            Reduction::Mean => row.iter().sum::<f64>() / row.len() as f64,
        }
    }

    pub fn is_signed(self) -> bool {
        self == Reduction::Mean
    }
}

/// Integrated-gradients reference input. Special-token baselines replace
/// content rows with that token's embedding; BOS/EOS rows are always kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Zero,
    Unk,
    Mask,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Zero => "zero",
            Baseline::Unk => "unk",
            Baseline::Mask => "mask",
        }
    }

    pub fn special(self) -> Option<SpecialToken> {
        match self {
            Baseline::Zero => None,
            Baseline::Unk => Some(SpecialToken::Unk),
            Baseline::Mask => Some(SpecialToken::Mask),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Removed tokens are replaced by the mask token.
    Replace,
    /// Removed tokens are deleted from the sequence.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimeConfig {
    pub n_perturbations: usize,
    #[serde(default = "default_mask")]
    pub mask_token: SpecialToken,
    #[serde(default = "default_mode")]
    pub perturb_mode: PerturbMode,
    #[serde(default = "default_width")]
    pub kernel_width: f64,
    #[serde(default = "default_lambda")]
    pub ridge_lambda: f64,
}

fn default_mask() -> SpecialToken {
    SpecialToken::Unk
}
fn default_mode() -> PerturbMode {
    PerturbMode::Replace
}
fn default_width() -> f64 {
    25.0
}
fn default_lambda() -> f64 {
    1.0
}

impl LimeConfig {
    pub fn new(n_perturbations: usize, mask_token: SpecialToken) -> Self {
        Self {
            n_perturbations,
            mask_token,
            perturb_mode: PerturbMode::Replace,
            kernel_width: default_width(),
            ridge_lambda: default_lambda(),
        }
    }

    /// Configurations that query the model on the same perturbations.
    pub(crate) fn shares_samples(&self, other: &LimeConfig) -> bool {
        self.mask_token == other.mask_token && self.perturb_mode == other.perturb_mode
    }
}

/// One salience method configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MethodConfig {
    Grad {
        objective: Objective,
        reduction: Reduction,
    },
    Gxi {
        objective: Objective,
    },
    Ig {
        objective: Objective,
        baseline: Baseline,
        steps: usize,
    },
    Lime(LimeConfig),
    Random,
}

impl MethodConfig {
    pub fn family(&self) -> &'static str {
        match self {
            MethodConfig::Grad { .. } => "grad",
            MethodConfig::Gxi { .. } => "gxi",
            MethodConfig::Ig { .. } => "ig",
            MethodConfig::Lime(_) => "lime",
            MethodConfig::Random => "random",
        }
    }

    /// Objective label; LIME always fits the predicted-class probability.
    pub fn objective_label(&self) -> &'static str {
        match self {
            MethodConfig::Grad { objective, .. }
            | MethodConfig::Gxi { objective }
            | MethodConfig::Ig { objective, .. } => objective.name(),
            MethodConfig::Lime(_) => "prob",
            MethodConfig::Random => "-",
        }
    }

    pub fn variant(&self) -> String {
        match self {
            MethodConfig::Grad { reduction, .. } => reduction.name().to_string(),
            MethodConfig::Gxi { .. } | MethodConfig::Random => "-".to_string(),
            MethodConfig::Ig {
                baseline, steps, ..
            } => format!("{}-{steps}", baseline.name()),
            MethodConfig::Lime(c) => {
                let mut v = format!("{}-{}", c.mask_token.name(), c.n_perturbations);
                if c.perturb_mode == PerturbMode::Drop {
                    v = format!("drop-{}", c.n_perturbations);
                }
                if c.kernel_width != default_width() {
                    v.push_str(&format!("-w{}", c.kernel_width));
                }
                if c.ridge_lambda != default_lambda() {
                    v.push_str(&format!("-l{}", c.ridge_lambda));
                }
                v
            }
        }
    }

    /// Unique, human-readable identifier such as `ig-prob-zero-100`.
    pub fn id(&self) -> String {
        let mut parts = vec![self.family().to_string()];
        if self.objective_label() != "-" && !matches!(self, MethodConfig::Lime(_)) {
            parts.push(self.objective_label().to_string());
        }
        let v = self.variant();
        if v != "-" {
            parts.push(v);
        }
        parts.join("-")
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodConfig::Ig { steps: 0, .. } => Err(Error::Contract(
                "integrated gradients needs at least one step".into(),
            )),
            MethodConfig::Lime(c) => {
                if c.n_perturbations == 0 {
                    return Err(Error::Contract(
                        "LIME needs at least one perturbation".into(),
                    ));
                }
                if !(c.kernel_width > 0.0) || !(c.ridge_lambda >= 0.0) {
                    return Err(Error::Contract(
                        "LIME needs a positive kernel width and non-negative ridge penalty".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// The full comparison grid for one architecture: six gradient variants, two
/// gradient-times-input variants, eight integrated-gradient variants, the
/// LIME variants and the random baseline.
pub fn standard_matrix(arch: Arch) -> Vec<MethodConfig> {
    let objectives = [Objective::Logit, Objective::Prob];
    let mut out = Vec::new();
    for objective in objectives {
        for reduction in [Reduction::L1, Reduction::L2, Reduction::Mean] {
            out.push(MethodConfig::Grad {
                objective,
                reduction,
            });
        }
    }
    for objective in objectives {
        out.push(MethodConfig::Gxi { objective });
    }
    let special = match arch {
        Arch::BirnnAttn => Baseline::Unk,
        Arch::Transformer => Baseline::Mask,
    };
    for objective in objectives {
        for baseline in [Baseline::Zero, special] {
            for steps in [100, 1000] {
                out.push(MethodConfig::Ig {
                    objective,
                    baseline,
                    steps,
                });
            }
        }
    }
    let masks: &[SpecialToken] = match arch {
        Arch::BirnnAttn => &[SpecialToken::Unk],
        Arch::Transformer => &[SpecialToken::Unk, SpecialToken::Mask],
    };
    for &mask in masks {
        for n in [100, 1000, 3000] {
            out.push(MethodConfig::Lime(LimeConfig::new(n, mask)));
        }
    }
    out.push(MethodConfig::Lime(LimeConfig {
        perturb_mode: PerturbMode::Drop,
        ..LimeConfig::new(1000, SpecialToken::Unk)
    }));
    out.push(MethodConfig::Random);
    out
}
