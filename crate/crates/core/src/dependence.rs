//! Per-token visual dependence and the three token classes.
//!
//! `d = (p_clean - p_noisy) / max(p_clean, p_noisy)`, in `[-1, 1]`. Tokens
//! with `d >= 0.25` are image-positive, `d < -0.25` image-negative, and the
//! rest image-invariant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::TokenTrace;

/// Lower bound (inclusive) of the image-positive band.
pub const POSITIVE_THRESHOLD: f64 = 0.25;
/// Lower bound (inclusive) of the image-invariant band.
pub const NEGATIVE_THRESHOLD: f64 = -0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenClass {
    ImagePositive,
    ImageInvariant,
    ImageNegative,
}

impl TokenClass {
    pub const ALL: [TokenClass; 3] = [
        TokenClass::ImagePositive,
        TokenClass::ImageInvariant,
        TokenClass::ImageNegative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenClass::ImagePositive => "positive",
            TokenClass::ImageInvariant => "invariant",
            TokenClass::ImageNegative => "negative",
        }
    }

    pub fn index(self) -> usize {
        match self {
            TokenClass::ImagePositive => 0,
            TokenClass::ImageInvariant => 1,
            TokenClass::ImageNegative => 2,
        }
    }
}

impl std::fmt::Display for TokenClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {p} outside [0, 1]")))
    }
}

/// Relative probability drop when the condition is replaced by its noised
/// version. Both probabilities zero gives 0.
pub fn visual_dependence(p_clean: f64, p_noisy: f64) -> Result<f64> {
    check_prob("p_clean", p_clean)?;
    check_prob("p_noisy", p_noisy)?;
    let denom = p_clean.max(p_noisy);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((p_clean - p_noisy) / denom)
}

pub fn classify(d: f64) -> Result<TokenClass> {
    if !(-1.0..=1.0).contains(&d) {
        return Err(Error::InvalidArgument(format!("dependence {d} outside [-1, 1]")));
    }
    Ok(if d >= POSITIVE_THRESHOLD {
        TokenClass::ImagePositive
    } else if d < NEGATIVE_THRESHOLD {
        TokenClass::ImageNegative
    } else {
        TokenClass::ImageInvariant
    })
}

/// Dependence values and classes for every token of one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceProfile {
    sample_id: String,
    d: Vec<f64>,
    classes: Vec<TokenClass>,
}

impl DependenceProfile {
    /// Build a profile from raw dependence values, classifying each.
    pub fn from_values(sample_id: impl Into<String>, d: Vec<f64>) -> Result<Self> {
        let classes = d.iter().map(|&v| classify(v)).collect::<Result<Vec<_>>>()?;
        Ok(DependenceProfile {
            sample_id: sample_id.into(),
            d,
            classes,
        })
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }

    pub fn classes(&self) -> &[TokenClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

pub fn profile_trace(trace: &TokenTrace) -> Result<DependenceProfile> {
    let d = trace
        .p_clean()
        .iter()
        .zip(trace.p_noisy())
        .map(|(&c, &n)| visual_dependence(c, n))
        .collect::<Result<Vec<_>>>()?;
    DependenceProfile::from_values(trace.sample_id(), d)
}

/// Total visual dependence of a sample.
pub fn sample_dependence(profile: &DependenceProfile) -> Result<f64> {
    if profile.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty dependence profile for '{}'",
            profile.sample_id
        )));
    }
    Ok(profile.d.iter().sum())
}
