//! Measurement schedules on the 15-minute grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid spacing of admissible measurement times, in minutes.
pub const GRID_STEP_MINUTES: u32 = 15;
/// Last admissible measurement time, in minutes.
pub const GRID_END_MINUTES: u32 = 120;

/// An ordered set of measurement times.
///
/// Always starts with the arrival measurement at 0:00, is strictly increasing,
/// and only uses multiples of 15 minutes up to 2:00. Times are kept in whole
/// minutes so designs compare and hash exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Design {
    minutes: Vec<u32>,
}

impl Design {
    pub fn from_minutes(minutes: impl Into<Vec<u32>>) -> Result<Self> {
        let minutes = minutes.into();
        if minutes.first() != Some(&0) {
            return Err(Error::Input(format!("design must start at 0:00, got {minutes:?}")));
        }
        if minutes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input(format!("design times must be strictly increasing: {minutes:?}")));
        }
        if let Some(bad) = minutes
            .iter()
            .find(|&&m| m % GRID_STEP_MINUTES != 0 || m > GRID_END_MINUTES)
        {
            return Err(Error::Input(format!(
                "design time {bad} min is not on the 15-minute grid over [0, 120]"
            )));
        }
        Ok(Self { minutes })
    }

    /// Measurements every hour: 0:00, 1:00, 2:00.
    pub fn conventional() -> Self {
        Self { minutes: vec![0, 60, 120] }
    }

    /// 0:00, 0:45, 1:15, 1:45, 2:00.
    pub fn proposed() -> Self {
        Self {
            minutes: vec![0, 45, 75, 105, 120],
        }
    }

    /// Every 15 minutes over two hours.
    pub fn full() -> Self {
        Self {
            minutes: (0..=GRID_END_MINUTES).step_by(GRID_STEP_MINUTES as usize).collect(),
        }
    }

    /// Early-only schedule that cannot separate curves crossing after 0:30.
    pub fn early_only() -> Self {
        Self { minutes: vec![0, 15, 30] }
    }

    pub fn minutes(&self) -> &[u32] {
        &self.minutes
    }

    pub fn hours(&self) -> Vec<f64> {
        self.minutes.iter().map(|&m| f64::from(m) / 60.0).collect()
    }

    pub fn len(&self) -> usize {
        self.minutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    pub fn contains_minute(&self, minute: u32) -> bool {
        self.minutes.binary_search(&minute).is_ok()
    }

    /// Whether every time of `self` also appears in `other`.
    pub fn is_subset_of(&self, other: &Design) -> bool {
        self.minutes.iter().all(|&m| other.contains_minute(m))
    }

    /// `{0} ∪ extra`; `extra` must not contain 0.
    pub fn from_extra_times(extra: &[u32]) -> Result<Self> {
        let mut minutes = Vec::with_capacity(extra.len() + 1);
        minutes.push(0);
        minutes.extend_from_slice(extra);
        Self::from_minutes(minutes)
    }

    /// Short label such as `0-45-75-105-120`, usable in file names.
    pub fn label(&self) -> String {
        self.minutes.iter().map(u32::to_string).collect::<Vec<_>>().join("-")
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.minutes.iter().map(|m| format!("{}:{:02}", m / 60, m % 60)).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

impl TryFrom<Vec<u32>> for Design {
    type Error = Error;
    fn try_from(minutes: Vec<u32>) -> Result<Self> {
        Self::from_minutes(minutes)
    }
}

impl From<Design> for Vec<u32> {
    fn from(d: Design) -> Self {
        d.minutes
    }
}

/// Parses comma-separated minutes, e.g. `0,60,120`.
impl FromStr for Design {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let minutes = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Input(format!("invalid minute value {p:?} in design {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_minutes(minutes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_designs_are_valid() {
        assert_eq!(Design::full().len(), 9);
        assert_eq!(Design::proposed().to_string(), "{0:00, 0:45, 1:15, 1:45, 2:00}");
        assert!(Design::conventional().is_subset_of(&Design::full()));
        assert!(Design::proposed().is_subset_of(&Design::full()));
    }

    #[test]
    fn rejects_invalid_designs() {
        assert!(Design::from_minutes(vec![15, 30]).is_err());
        assert!(Design::from_minutes(vec![0, 30, 30]).is_err());
        assert!(Design::from_minutes(vec![0, 20]).is_err());
        assert!(Design::from_minutes(vec![0, 135]).is_err());
        assert!("0, x".parse::<Design>().is_err());
    }

    #[test]
    fn parses_and_serializes_minutes() {
        let d: Design = "0, 45,75,105,120".parse().unwrap();
        assert_eq!(d, Design::proposed());
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, "[0,45,75,105,120]");
        assert_eq!(serde_json::from_str::<Design>(&json).unwrap(), d);
        assert!(serde_json::from_str::<Design>("[0,10]").is_err());
        assert_eq!(d.hours()[1], 0.75);
    }
}
