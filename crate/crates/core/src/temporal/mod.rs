//! Temporal intent of a recall question and the two time signals.
//!
//! A question is parsed into an optional closed range of local calendar days
//! plus a "most recent" flag. The date-match signal is the indicator that a
//! memory's local day falls in the range. The recency signal averages three
//! exponential decays of the memory's age, gated by the flag.

mod llm;
pub use llm::LlmParseError;
mod rules;

pub use llm::LlmDateParser;
pub use rules::RuleDateParser;

use std::sync::Arc;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::backend::LlmBackend;
use crate::memory::{MemoryEntry, RecallQuery};

pub const DAY_SECS: i64 = 86_400;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemporalError {
    #[error("memory created at {created_at} is newer than the query time {asked_at}")]
    NegativeInterval { created_at: i64, asked_at: i64 },
    #[error("invalid temporal parse: {0}")]
    InvalidParse(String),
    #[error("invalid decay constants: {0}")]
    InvalidDecay(String),
}

/// Closed interval of local calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateRange {
    start: NaiveDate,
    end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, TemporalError> {
        if start > end {
            return Err(TemporalError::InvalidParse(format!(
                "start {start} is after end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn day(d: NaiveDate) -> Self {
        Self { start: d, end: d }
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.end
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Parsed search range `(start, end)` and recency flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TemporalParse {
    pub range: Option<DateRange>,
    pub search_recent: bool,
}

impl TemporalParse {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn range(range: DateRange) -> Self {
        Self {
            range: Some(range),
            search_recent: false,
        }
    }

    pub fn recent() -> Self {
        Self {
            range: None,
            search_recent: true,
        }
    }

    /// Builds a parse from the wire strings, where `""` means "no date".
    pub fn from_strings(start: &str, end: &str, recent: bool) -> Result<Self, TemporalError> {
        let date = |s: &str| {
            NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                .map_err(|e| TemporalError::InvalidParse(format!("bad date `{s}`: {e}")))
        };
        let range = match (start.trim().is_empty(), end.trim().is_empty()) {
            (true, true) => None,
            (false, false) => Some(DateRange::new(date(start)?, date(end)?)?),
            _ => {
                return Err(TemporalError::InvalidParse(
                    "start and end dates must both be set or both be empty".into(),
                ))
            }
        };
        Ok(Self {
            range,
            search_recent: recent,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct WireParse {
    search_start_date: String,
    search_end_date: String,
    search_recent: bool,
}

impl Serialize for TemporalParse {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let fmt = |d: Option<NaiveDate>| {
            d.map(|d| d.format("%Y-%m-%d").to_string())
                .unwrap_or_default()
        };
        WireParse {
            search_start_date: fmt(self.range.map(|r| r.start)),
            search_end_date: fmt(self.range.map(|r| r.end)),
            search_recent: self.search_recent,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TemporalParse {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = WireParse::deserialize(d)?;
        TemporalParse::from_strings(&w.search_start_date, &w.search_end_date, w.search_recent)
            .map_err(serde::de::Error::custom)
    }
}

/// Half-lives of the short, middle and long decay terms, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayConstants {
    pub short_secs: f64,
    pub mid_secs: f64,
    pub long_secs: f64,
}

impl Default for DecayConstants {
    fn default() -> Self {
        Self {
            short_secs: 3.0 * DAY_SECS as f64,
            mid_secs: 90.0 * DAY_SECS as f64,
            long_secs: 365.0 * DAY_SECS as f64,
        }
    }
}

impl DecayConstants {
    pub fn validate(&self) -> Result<(), TemporalError> {
        if 0.0 < self.short_secs
            && self.short_secs < self.mid_secs
            && self.mid_secs < self.long_secs
        {
            Ok(())
        } else {
            Err(TemporalError::InvalidDecay(format!("{self:?}")))
        }
    }
}

/// Local wall-clock time of a UTC instant shifted by `offset_minutes`.
pub fn local_datetime(ts: i64, offset_minutes: i32) -> NaiveDateTime {
    let shifted = ts + i64::from(offset_minutes) * 60;
    DateTime::from_timestamp(shifted, 0)
        .unwrap_or_default()
        .naive_utc()
}

pub fn local_date(ts: i64, offset_minutes: i32) -> NaiveDate {
    local_datetime(ts, offset_minutes).date()
}

/// `YYYY-MM-DD Weekday` of the query instant in the asker's timezone.
pub fn recall_time_string(q: &RecallQuery) -> String {
    local_date(q.asked_at, q.timezone_offset_minutes)
        .format("%Y-%m-%d %A")
        .to_string()
}

/// 1 when the memory's local calendar day lies inside the parsed range, else 0.
pub fn date_match_score(m: &MemoryEntry, parse: &TemporalParse, tz_offset_minutes: i32) -> f64 {
    match parse.range {
        Some(r) if r.contains(local_date(m.created_at, tz_offset_minutes)) => 1.0,
        _ => 0.0,
    }
}

/// Average of three exponential decays of the memory age, or 0 when the
/// question does not ask for recent memories.
pub fn recency_score(
    m: &MemoryEntry,
    q: &RecallQuery,
    parse: &TemporalParse,
    c: &DecayConstants,
) -> Result<f64, TemporalError> {
    if q.asked_at < m.created_at {
        return Err(TemporalError::NegativeInterval {
            created_at: m.created_at,
            asked_at: q.asked_at,
        });
    }
    if !parse.search_recent {
        return Ok(0.0);
    }
    let delta = (q.asked_at - m.created_at) as f64;
    Ok(
        ((-delta / c.short_secs).exp()
            + (-delta / c.mid_secs).exp()
            + (-delta / c.long_secs).exp())
            / 3.0,
    )
}

/// Where a parse came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseSource {
    Rules,
    Llm,
    /// The LLM path failed and the rule parser answered instead.
    RulesFallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutcome {
    pub parse: TemporalParse,
    pub source: ParseSource,
    pub warning: Option<String>,
}

/// Date parser front end: the LLM path when a backend is configured, the rule parser otherwise.
#[derive(Clone)]
pub enum TemporalParser {
    Rules(RuleDateParser),
    Llm(LlmDateParser),
}

impl Default for TemporalParser {
    fn default() -> Self {
        TemporalParser::Rules(RuleDateParser)
    }
}

impl TemporalParser {
    pub fn llm(backend: Arc<dyn LlmBackend>) -> Self {
        TemporalParser::Llm(LlmDateParser::new(backend))
    }

    /// Never fails: the LLM path falls back to the rules on any error.
    pub fn parse(&self, q: &RecallQuery) -> ParseOutcome {
        match self {
            TemporalParser::Rules(r) => ParseOutcome {
                parse: r.parse(q),
                source: ParseSource::Rules,
                warning: None,
            },
            TemporalParser::Llm(l) => match l.parse(q) {
                Ok(parse) => ParseOutcome {
                    parse,
                    source: ParseSource::Llm,
                    warning: None,
                },
                Err(e) => {
                    let warning = format!("date parser backend failed, using rules: {e}");
                    tracing::warn!("{warning}");
                    ParseOutcome {
                        parse: RuleDateParser.parse(q),
                        source: ParseSource::RulesFallback,
                        warning: Some(warning),
                    }
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn ts(y: i32, m: u32, d: u32, h: u32) -> i64 {
        ymd(y, m, d)
            .and_hms_opt(h, 0, 0)
            .unwrap()
            .and_utc()
            .timestamp()
    }

    #[test]
    fn date_match_is_inclusive_on_calendar_days() {
        let parse = TemporalParse::range(DateRange::day(ymd(2024, 5, 5)));
        let at = |t| MemoryEntry::new("m", "remember", t, "");
        assert_eq!(date_match_score(&at(ts(2024, 5, 5, 14)), &parse, 0), 1.0);
        assert_eq!(date_match_score(&at(ts(2024, 5, 5, 0)), &parse, 0), 1.0);
        assert_eq!(date_match_score(&at(ts(2024, 5, 6, 0)), &parse, 0), 0.0);
        assert_eq!(
            date_match_score(&at(ts(2024, 5, 5, 14)), &TemporalParse::none(), 0),
            0.0
        );
        assert_eq!(
            date_match_score(&at(ts(2024, 5, 5, 14)), &TemporalParse::recent(), 0),
            0.0
        );
        // 23:00 UTC on the 4th is already the 5th at UTC+2
        assert_eq!(date_match_score(&at(ts(2024, 5, 4, 23)), &parse, 120), 1.0);
        assert_eq!(date_match_score(&at(ts(2024, 5, 4, 23)), &parse, 0), 0.0);
    }

    #[test]
    fn recency_gating_and_sign() {
        let q = RecallQuery::new("where", ts(2024, 5, 6, 12));
        let m = MemoryEntry::new("m", "remember", ts(2024, 5, 6, 12), "");
        let c = DecayConstants::default();
        assert_eq!(
            recency_score(&m, &q, &TemporalParse::recent(), &c).unwrap(),
            1.0
        );
        assert_eq!(
            recency_score(&m, &q, &TemporalParse::none(), &c).unwrap(),
            0.0
        );
        let future = MemoryEntry::new("m", "remember", q.asked_at + 1, "");
        assert!(matches!(
            recency_score(&future, &q, &TemporalParse::recent(), &c),
            Err(TemporalError::NegativeInterval { .. })
        ));
    }

    #[test]
    fn recency_strictly_decreases() {
        let q = RecallQuery::new("where", 400 * DAY_SECS);
        let c = DecayConstants::default();
        let p = TemporalParse::recent();
        let mut prev = f64::INFINITY;
        for days in [0, 1, 2, 3, 10, 30, 90, 200, 399] {
            let m = MemoryEntry::new("m", "r", q.asked_at - days * DAY_SECS, "");
            let s = recency_score(&m, &q, &p, &c).unwrap();
            assert!(s < prev && s > 0.0 && s <= 1.0);
            prev = s;
        }
    }

    #[test]
    fn wire_format_round_trip() {
        let p: TemporalParse = serde_json::from_str(
            r#"{"search_start_date": "2024-05-05", "search_end_date": "2024-05-05", "search_recent": false}"#,
        )
        .unwrap();
        assert_eq!(p, TemporalParse::range(DateRange::day(ymd(2024, 5, 5))));
        assert_eq!(
            serde_json::to_string(&TemporalParse::recent()).unwrap(),
            r#"{"search_start_date":"","search_end_date":"","search_recent":true}"#
        );
        assert!(TemporalParse::from_strings("2024-05-05", "", false).is_err());
        assert!(TemporalParse::from_strings("2024-05-06", "2024-05-05", false).is_err());
    }

    #[test]
    fn decay_constants_must_be_ordered() {
        assert!(DecayConstants::default().validate().is_ok());
        let bad = DecayConstants {
            short_secs: 10.0,
            mid_secs: 5.0,
            long_secs: 20.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn recall_time_uses_local_day() {
        let q = RecallQuery::new("x", ts(2024, 5, 6, 23)).with_offset(120);
        assert_eq!(recall_time_string(&q), "2024-05-07 Tuesday");
        let q = RecallQuery::new("x", ts(2024, 5, 6, 9));
        assert_eq!(recall_time_string(&q), "2024-05-06 Monday");
    }
}
