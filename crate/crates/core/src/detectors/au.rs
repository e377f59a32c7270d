//! Action unit codes and the declared code sets.

use crate::error::{Error, Result};
use std::fmt;

/// Which catalogue of action units a run works against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AuSet {
    /// The twelve most frequent units of the BP4D corpus.
    Bp4d,
    /// The ten-unit FERA 2017 subset.
    Fera,
    /// The four units the synthetic generator can animate.
    Synthetic,
}

impl AuSet {
    pub fn codes(&self) -> &'static [u8] {
        match self {
            AuSet::Bp4d => &[1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24],
            AuSet::Fera => &[1, 4, 6, 7, 10, 12, 14, 15, 17, 23],
            AuSet::Synthetic => &[1, 2, 12, 24],
        }
    }

    pub fn aus(&self) -> Vec<AuCode> {
        self.codes().iter().map(|&c| AuCode(c)).collect()
    }

    pub fn contains(&self, code: u8) -> bool {
        self.codes().contains(&code)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AuSet::Bp4d => "bp4d",
            AuSet::Fera => "fera",
            AuSet::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Result<AuSet> {
        match s {
            "bp4d" => Ok(AuSet::Bp4d),
            "fera" => Ok(AuSet::Fera),
            "synthetic" => Ok(AuSet::Synthetic),
            other => Err(Error::invalid(format!("unknown AU set '{}'", other))),
        }
    }
}

/// A single action unit code, validated against a declared set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AuCode(u8);

impl AuCode {
    pub fn new(value: u8, set: AuSet) -> Result<AuCode> {
        if set.contains(value) {
            Ok(AuCode(value))
        } else {
            Err(Error::invalid(format!(
                "AU{} is not in the {} set",
                value,
                set.as_str()
            )))
        }
    }

    pub fn value(&self) -> u8 {
        self.0
    }

    /// Label used in file names and reports, e.g. `AU12`.
    pub fn label(&self) -> String {
        format!("AU{}", self.0)
    }

    pub fn parse(s: &str, set: AuSet) -> Result<AuCode> {
        let digits = s.strip_prefix("AU").unwrap_or(s);
        let value: u8 = digits
            .parse()
            .map_err(|_| Error::invalid(format!("cannot parse AU code '{}'", s)))?;
        AuCode::new(value, set)
    }
}

impl fmt::Display for AuCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AU{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sets_have_declared_sizes() {
        assert_eq!(AuSet::Bp4d.codes().len(), 12);
        assert_eq!(AuSet::Fera.codes().len(), 10);
        assert_eq!(AuSet::Synthetic.codes().len(), 4);
        // FERA is a subset of BP4D.
        assert!(AuSet::Fera.codes().iter().all(|&c| AuSet::Bp4d.contains(c)));
    }

    #[test]
    fn out_of_set_codes_are_rejected() {
        assert!(AuCode::new(12, AuSet::Synthetic).is_ok());
        assert!(AuCode::new(4, AuSet::Synthetic).is_err());
        assert!(AuCode::new(2, AuSet::Fera).is_err());
        assert!(AuCode::new(99, AuSet::Bp4d).is_err());
    }

    #[test]
    fn labels_and_parsing_round_trip() {
        for set in [AuSet::Bp4d, AuSet::Fera, AuSet::Synthetic] {
            for au in set.aus() {
                assert_eq!(AuCode::parse(&au.label(), set).unwrap(), au);
            }
        }
        assert!(AuCode::parse("AUxx", AuSet::Bp4d).is_err());
    }
}
