use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which way a score points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Magnitudes only; higher always means more important.
    Unsigned,
    /// Positive scores support the given class.
    Toward(u8),
}

/// Side information some methods report alongside their scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `f(x) − f(baseline)` for integrated gradients.
    pub ig_delta: Option<f64>,
    /// Ridge penalty actually used by LIME.
    pub ridge_lambda: Option<f64>,
    /// Set when the LIME normal equations were singular at the requested
    /// penalty and it had to be raised.
    pub ridge_bumped: bool,
}

/// Per-token scores for the content positions of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceMap {
    /// Token indices that were scored, ascending.
    pub positions: Vec<usize>,
    pub scores: Vec<f64>,
    pub orientation: Orientation,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl SalienceMap {
    pub fn new(positions: Vec<usize>, scores: Vec<f64>, orientation: Orientation) -> Result<Self> {
        if positions.len() != scores.len() {
            return Err(Error::shape(
                "salience map",
                format!("{} positions, {} scores", positions.len(), scores.len()),
            ));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric { op: "salience" });
        }
        Ok(Self {
            positions,
            scores,
            orientation,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_signed(&self) -> bool {
        self.orientation != Orientation::Unsigned
    }

    pub fn sum(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// Same map with every score multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            scores: self.scores.iter().map(|s| s * factor).collect(),
            ..self.clone()
        }
    }
}

/// Token positions ordered from most to least important.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking(pub Vec<usize>);

impl Ranking {
    pub fn positions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Orders positions by descending score, after flipping maps that point
/// toward the class that was not predicted. Ties go to the earlier position.
pub fn rank_tokens(map: &SalienceMap, predicted_class: u8) -> Ranking {
    let flip = matches!(map.orientation, Orientation::Toward(c) if c != predicted_class);
    let mut order: Vec<(usize, f64)> = map
        .positions
        .iter()
        .zip(&map.scores)
        .map(|(&p, &s)| (p, if flip { -s } else { s }))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ranking(order.into_iter().map(|(p, _)| p).collect())
}
