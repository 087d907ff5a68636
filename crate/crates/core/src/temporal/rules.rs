use std::sync::LazyLock;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use regex::Regex;

use super::{local_date, DateRange, TemporalParse};
use crate::memory::RecallQuery;

/// Deterministic parser for common English date expressions.
///
/// Calendar words resolve against the query's local day `T`:
/// - `last week` is the previous Monday to Sunday week, `this week` runs from Monday to `T`
/// - `last month`/`last year` are the previous calendar periods, `this ...` runs to `T`
/// - `last <weekday>` is the latest such day strictly before `T`, `on <weekday>` may be `T`
/// - `on March 3` is the latest March 3 not after `T`
/// - `last time`, `most recent(ly)`, `recently`, `latest` set the recency flag
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RuleDateParser;

const WEEKDAYS: &str = "monday|tuesday|wednesday|thursday|friday|saturday|sunday";
const MONTHS: &str = "january|february|march|april|may|june|july|august|september|october|november|december|jan|feb|mar|apr|jun|jul|aug|sep|sept|oct|nov|dec";
const COUNT: &str =
    r"\d+|a|an|one|two|three|four|five|six|seven|eight|nine|ten|a couple of|couple of|a few|few";

static ISO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d{4})-(\d{2})-(\d{2})\b").unwrap());
static DAYS_AGO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\b({COUNT}) days? ago\b")).unwrap());
static WEEKS_AGO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\b({COUNT}) weeks? ago\b")).unwrap());
static PAST_DAYS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\b(?:past|last) ({COUNT}) days\b")).unwrap());
static LAST_WEEKDAY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\b(?:last|previous) ({WEEKDAYS})\b")).unwrap());
static ON_WEEKDAY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\b(?:on|this) ({WEEKDAYS})\b")).unwrap());
static MONTH_DAY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"\b({MONTHS})\.? (\d{{1,2}})(?:st|nd|rd|th)?\b")).unwrap()
});
static DAY_MONTH: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"\b(\d{{1,2}})(?:st|nd|rd|th)? (?:of )?({MONTHS})\b"
    ))
    .unwrap()
});
static IN_MONTH: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\bin ({MONTHS})\b")).unwrap());
static RECENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(last time|most recent|most recently|recently|latest|the last one)\b").unwrap()
});

/// Whole-word occurrence of `phrase` in `text`.
fn has(text: &str, phrase: &str) -> bool {
    let word = |c: Option<char>| c.is_some_and(char::is_alphanumeric);
    text.match_indices(phrase).any(|(i, _)| {
        !word(text[..i].chars().next_back()) && !word(text[i + phrase.len()..].chars().next())
    })
}

fn count(word: &str) -> Option<i64> {
    Some(match word {
        "a" | "an" | "one" => 1,
        "two" | "a couple of" | "couple of" => 2,
        "three" | "a few" | "few" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        "ten" => 10,
        n => n.parse().ok()?,
    })
}

fn weekday(name: &str) -> Option<Weekday> {
    name.parse().ok()
}

fn month(name: &str) -> Option<u32> {
    let m = match &name[..3] {
        "jan" => 1,
        "feb" => 2,
        "mar" => 3,
        "apr" => 4,
        "may" => 5,
        "jun" => 6,
        "jul" => 7,
        "aug" => 8,
        "sep" => 9,
        "oct" => 10,
        "nov" => 11,
        "dec" => 12,
        _ => return None,
    };
    Some(m)
}

fn monday_of(d: NaiveDate) -> NaiveDate {
    d - Duration::days(i64::from(d.weekday().num_days_from_monday()))
}

fn month_range(year: i32, month: u32) -> Option<DateRange> {
    let start = NaiveDate::from_ymd_opt(year, month, 1)?;
    let next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)?
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)?
    };
    DateRange::new(start, next - Duration::days(1)).ok()
}

/// Latest `month`/`day` not after `today`.
fn latest_month_day(today: NaiveDate, month: u32, day: u32) -> Option<NaiveDate> {
    // Feb 29 may need up to 8 years of lookback
    (0..=8)
        .filter_map(|back| NaiveDate::from_ymd_opt(today.year() - back, month, day))
        .find(|d| *d <= today)
}

fn span(start: NaiveDate, end: NaiveDate) -> Option<DateRange> {
    DateRange::new(start, end).ok()
}

impl RuleDateParser {
    pub fn parse(&self, q: &RecallQuery) -> TemporalParse {
        let today = local_date(q.asked_at, q.timezone_offset_minutes);
        self.parse_at(&q.text, today)
    }

    /// Parses `text` as if asked on the local day `today`.
    pub fn parse_at(&self, text: &str, today: NaiveDate) -> TemporalParse {
        let text = text
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        TemporalParse {
            range: date_range(&text, today),
            search_recent: RECENT.is_match(&text),
        }
    }
}

fn date_range(text: &str, today: NaiveDate) -> Option<DateRange> {
    let day = |n: i64| today - Duration::days(n);

    if let Some(c) = ISO.captures(text) {
        let d =
            NaiveDate::from_ymd_opt(c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?)?;
        return Some(DateRange::day(d));
    }
    if has(text, "day before yesterday") {
        return Some(DateRange::day(day(2)));
    }
    if has(text, "yesterday") || has(text, "last night") {
        return Some(DateRange::day(day(1)));
    }
    if [
        "today",
        "tonight",
        "this morning",
        "this afternoon",
        "this evening",
    ]
    .iter()
    .any(|p| has(text, p))
    {
        return Some(DateRange::day(today));
    }
    if let Some(c) = DAYS_AGO.captures(text) {
        return Some(DateRange::day(day(count(&c[1])?)));
    }
    if let Some(c) = PAST_DAYS.captures(text) {
        return span(day(count(&c[1])?), today);
    }
    if let Some(c) = WEEKS_AGO.captures(text) {
        let monday = monday_of(today) - Duration::weeks(count(&c[1])?);
        return span(monday, monday + Duration::days(6));
    }
    if has(text, "past week") {
        return span(day(7), today);
    }
    if has(text, "last weekend") {
        let saturday = monday_of(today) - Duration::days(2);
        return span(saturday, saturday + Duration::days(1));
    }
    if has(text, "this weekend") {
        let saturday = monday_of(today) + Duration::days(5);
        return span(saturday, saturday + Duration::days(1));
    }
    if has(text, "last week") || has(text, "previous week") {
        let monday = monday_of(today) - Duration::weeks(1);
        return span(monday, monday + Duration::days(6));
    }
    if has(text, "this week") {
        return span(monday_of(today), today);
    }
    if has(text, "last month") || has(text, "previous month") {
        let (y, m) = if today.month() == 1 {
            (today.year() - 1, 12)
        } else {
            (today.year(), today.month() - 1)
        };
        return month_range(y, m);
    }
    if has(text, "this month") {
        return span(today.with_day(1)?, today);
    }
    if has(text, "last year") {
        let y = today.year() - 1;
        return span(
            NaiveDate::from_ymd_opt(y, 1, 1)?,
            NaiveDate::from_ymd_opt(y, 12, 31)?,
        );
    }
    if has(text, "this year") {
        return span(NaiveDate::from_ymd_opt(today.year(), 1, 1)?, today);
    }
    if let Some(c) = LAST_WEEKDAY.captures(text) {
        let wd = weekday(&c[1])?;
        let back = (7 + today.weekday().num_days_from_monday() - wd.num_days_from_monday()) % 7;
        return Some(DateRange::day(day(if back == 0 {
            7
        } else {
            i64::from(back)
        })));
    }
    if let Some(c) = ON_WEEKDAY.captures(text) {
        let wd = weekday(&c[1])?;
        let back = (7 + today.weekday().num_days_from_monday() - wd.num_days_from_monday()) % 7;
        return Some(DateRange::day(day(i64::from(back))));
    }
    if let Some(c) = MONTH_DAY.captures(text) {
        if let Some(d) = latest_month_day(today, month(&c[1])?, c[2].parse().ok()?) {
            return Some(DateRange::day(d));
        }
    }
    if let Some(c) = DAY_MONTH.captures(text) {
        if let Some(d) = latest_month_day(today, month(&c[2])?, c[1].parse().ok()?) {
            return Some(DateRange::day(d));
        }
    }
    if let Some(c) = IN_MONTH.captures(text) {
        let m = month(&c[1])?;
        let y = if m <= today.month() {
            today.year()
        } else {
            today.year() - 1
        };
        let r = month_range(y, m)?;
        return span(r.start(), r.end().min(today));
    }
    None
}
