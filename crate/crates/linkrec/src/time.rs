//! UTC timestamps with second precision.

use std::fmt;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Seconds in a day; all "N days" window arithmetic is exact 86,400-second
/// days on UTC timestamps, not calendar arithmetic.
pub const SECONDS_PER_DAY: i64 = 86_400;

/// A UTC timestamp with second precision.
///
/// Stored as epoch seconds; serialized as an ISO-8601 string
/// (`2021-03-01T12:00:00Z`) in all record files and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub fn from_epoch_seconds(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub fn epoch_seconds(self) -> i64 {
        self.0
    }

    /// Parse an ISO-8601 / RFC 3339 timestamp, normalizing to UTC.
    pub fn parse(s: &str) -> Result<Self, String> {
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.with_timezone(&Utc).timestamp()))
            .map_err(|e| format!("invalid timestamp {s:?}: {e}"))
    }

    /// Shift by a whole number of 86,400-second days.
    pub fn plus_days(self, days: i64) -> Self {
        Timestamp(self.0 + days * SECONDS_PER_DAY)
    }

    pub fn plus_seconds(self, secs: i64) -> Self {
        Timestamp(self.0 + secs)
    }

    /// Signed distance `self - earlier` in fractional days.
    pub fn days_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / SECONDS_PER_DAY as f64
    }

    fn to_rfc3339(self) -> String {
        Utc.timestamp_opt(self.0, 0)
            .single()
            .map(|dt| dt.to_rfc3339_opts(SecondsFormat::Secs, true))
            .unwrap_or_else(|| format!("epoch+{}s", self.0))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_rfc3339())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_round_trip() {
        let ts = Timestamp::parse("2021-03-01T12:00:00Z").unwrap();
        assert_eq!(ts.to_string(), "2021-03-01T12:00:00Z");
    }

    #[test]
    fn offset_input_is_normalized_to_utc() {
        let ts = Timestamp::parse("2021-03-01T14:00:00+02:00").unwrap();
        assert_eq!(ts.to_string(), "2021-03-01T12:00:00Z");
    }

    #[test]
    fn day_arithmetic_is_exact_86400s() {
        let t0 = Timestamp::from_epoch_seconds(1_000_000);
        assert_eq!(t0.plus_days(365).epoch_seconds(), 1_000_000 + 365 * 86_400);
        assert!((t0.plus_days(10).days_since(t0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn serde_uses_iso8601_strings() {
        let ts = Timestamp::parse("2021-03-01T12:00:00Z").unwrap();
        let json = serde_json::to_string(&ts).unwrap();
        assert_eq!(json, "\"2021-03-01T12:00:00Z\"");
        let back: Timestamp = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ts);
    }
}
