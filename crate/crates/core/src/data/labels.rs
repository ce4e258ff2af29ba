//! Label schemes: total maps from raw session labels to class indices or
//! an explicit exclusion.
//!
//! Exclusions are deliberate and counted, never silent: transitional or
//! meditation sessions map to `Exclude`, and windows whose majority label
//! is excluded are dropped with the reason recorded in the manifest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelOutcome {
    Class(usize),
    Exclude,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelScheme {
    pub name: String,
    pub class_names: Vec<String>,
    mapping: BTreeMap<String, LabelOutcome>,
}

impl LabelScheme {
    /// Stress vs. non-stress: neutral and amusement fold into non-stress.
    pub fn wesad_binary() -> Self {
        LabelScheme {
            name: "wesad_binary".into(),
            class_names: vec!["non_stress".into(), "stress".into()],
            mapping: BTreeMap::from([
                ("neutral".into(), LabelOutcome::Class(0)),
                ("amusement".into(), LabelOutcome::Class(0)),
                ("stress".into(), LabelOutcome::Class(1)),
                ("meditation".into(), LabelOutcome::Exclude),
                ("transient".into(), LabelOutcome::Exclude),
            ]),
        }
    }

    /// Neutral vs. amusement vs. stress.
    pub fn wesad_three_class() -> Self {
        LabelScheme {
            name: "wesad_3class".into(),
            class_names: vec!["neutral".into(), "amusement".into(), "stress".into()],
            mapping: BTreeMap::from([
                ("neutral".into(), LabelOutcome::Class(0)),
                ("amusement".into(), LabelOutcome::Class(1)),
                ("stress".into(), LabelOutcome::Class(2)),
                ("meditation".into(), LabelOutcome::Exclude),
                ("transient".into(), LabelOutcome::Exclude),
            ]),
        }
    }

    /// Stress vs. non-stress: time-pressure and interruption sessions
    /// combine into the stress class; the relaxation period is excluded.
    pub fn swell_binary() -> Self {
        LabelScheme {
            name: "swell_binary".into(),
            class_names: vec!["non_stress".into(), "stress".into()],
            mapping: BTreeMap::from([
                ("neutral".into(), LabelOutcome::Class(0)),
                ("time_pressure".into(), LabelOutcome::Class(1)),
                ("interruption".into(), LabelOutcome::Class(1)),
                ("relax".into(), LabelOutcome::Exclude),
            ]),
        }
    }

    /// Binary arousal from 1-9 self reports: below 5 is low, 5 and above
    /// is high.
    pub fn case_arousal() -> Self {
        let mut mapping = BTreeMap::new();
        for rating in 1..=9u32 {
            let class = if rating < 5 { 0 } else { 1 };
            mapping.insert(rating.to_string(), LabelOutcome::Class(class));
        }
        LabelScheme {
            name: "case_arousal".into(),
            class_names: vec!["low_arousal".into(), "high_arousal".into()],
            mapping,
        }
    }

    /// Two raw labels mapping straight onto two classes; used by the
    /// synthetic datasets.
    pub fn binary_passthrough() -> Self {
        LabelScheme {
            name: "binary".into(),
            class_names: vec!["class_0".into(), "class_1".into()],
            mapping: BTreeMap::from([
                ("class_0".into(), LabelOutcome::Class(0)),
                ("class_1".into(), LabelOutcome::Class(1)),
            ]),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "wesad_binary" => Ok(Self::wesad_binary()),
            "wesad_3class" => Ok(Self::wesad_three_class()),
            "swell_binary" => Ok(Self::swell_binary()),
            "case_arousal" => Ok(Self::case_arousal()),
            "binary" => Ok(Self::binary_passthrough()),
            other => Err(Error::config(format!(
                "unknown label scheme '{other}' (expected wesad_binary, wesad_3class, swell_binary, case_arousal, or binary)"
            ))),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Map a raw session label. Unknown labels list the scheme's domain.
    pub fn apply(&self, raw_label: &str) -> Result<LabelOutcome> {
        self.mapping.get(raw_label).copied().ok_or_else(|| {
            let domain: Vec<&str> = self.mapping.keys().map(String::as_str).collect();
            Error::format(format!(
                "raw label '{raw_label}' not declared by scheme '{}'; domain: {domain:?}",
                self.name
            ))
        })
    }

    pub fn declared_labels(&self) -> impl Iterator<Item = &str> {
        self.mapping.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wesad_binary_folds_amusement_into_non_stress() {
        let s = LabelScheme::wesad_binary();
        assert_eq!(s.apply("amusement").unwrap(), LabelOutcome::Class(0));
        assert_eq!(s.apply("neutral").unwrap(), LabelOutcome::Class(0));
        assert_eq!(s.apply("stress").unwrap(), LabelOutcome::Class(1));
    }

    #[test]
    fn wesad_three_class_excludes_meditation() {
        let s = LabelScheme::wesad_three_class();
        assert_eq!(s.apply("meditation").unwrap(), LabelOutcome::Exclude);
        assert_eq!(s.apply("amusement").unwrap(), LabelOutcome::Class(1));
    }

    #[test]
    fn case_boundary_rating_is_high() {
        let s = LabelScheme::case_arousal();
        assert_eq!(s.apply("5").unwrap(), LabelOutcome::Class(1));
        assert_eq!(s.apply("4").unwrap(), LabelOutcome::Class(0));
        assert_eq!(s.apply("9").unwrap(), LabelOutcome::Class(1));
    }

    #[test]
    fn swell_combines_stressors() {
        let s = LabelScheme::swell_binary();
        assert_eq!(s.apply("time_pressure").unwrap(), LabelOutcome::Class(1));
        assert_eq!(s.apply("interruption").unwrap(), LabelOutcome::Class(1));
        assert_eq!(s.apply("relax").unwrap(), LabelOutcome::Exclude);
    }

    #[test]
    fn unknown_label_lists_domain() {
        let s = LabelScheme::wesad_binary();
        let err = s.apply("jogging").unwrap_err().to_string();
        assert!(err.contains("jogging"));
        assert!(err.contains("stress"));
        assert!(err.contains("meditation"));
    }

    #[test]
    fn scheme_lookup_by_name() {
        assert!(LabelScheme::by_name("case_arousal").is_ok());
        assert!(LabelScheme::by_name("nope").is_err());
    }
}
