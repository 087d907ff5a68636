//! Seeded synthetic benchmark with planted temporal and location constraints.
//!
//! Every case owns a private pool: one positive, a few same-topic distractors
//! that differ from it only in the constrained dimension (day, recency or
//! city), and other-topic filler. Ids are unique across cases so a single
//! store holds every pool.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backend::MockRule;
use crate::eval::{BenchmarkCase, Category};
use crate::memory::MemoryEntry;
use crate::temporal::{local_date, DAY_SECS};

/// Reply of the mock generator when no positive id is in the prompt.
pub const UNKNOWN_RESPONSE: &str = r#"{"id_list":[],"response":"I don't know."}"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    Yesterday,
    LastWeek,
    LastTime,
    Location,
    None,
}

impl Constraint {
    pub const ALL: [Constraint; 5] = [
        Constraint::Yesterday,
        Constraint::LastWeek,
        Constraint::LastTime,
        Constraint::Location,
        Constraint::None,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Constraint::Yesterday => "yesterday",
            Constraint::LastWeek => "last-week",
            Constraint::LastTime => "last-time",
            Constraint::Location => "location",
            Constraint::None => "none",
        }
    }

    /// Constraints resolved by the date-match signal.
    pub fn is_dated(self) -> bool {
        matches!(self, Constraint::Yesterday | Constraint::LastWeek)
    }

    /// Recovers the constraint from a generated question id (`q0007-last-week`).
    pub fn of_question(question_id: &str) -> Option<Self> {
        let (_, tag) = question_id.split_once('-')?;
        Self::ALL.into_iter().find(|c| c.tag() == tag)
    }
}

struct Topic {
    command: &'static str,
    /// `{c}` is replaced by the constraint phrase.
    question: &'static str,
    caption: &'static str,
    category: Category,
}

const TOPICS: [Topic; 7] = [
    Topic {
        command: "remember my parking spot",
        question: "where was my parking spot{c}?",
        caption: "Parking garage pillar painted with the parking level and spot number.",
        category: Category::Other,
    },
    Topic {
        command: "remember this restaurant",
        question: "what was the name of the restaurant{c}?",
        caption: "Restaurant entrance with the restaurant name on a sign above the door.",
        category: Category::Other,
    },
    Topic {
        command: "remember my hotel room",
        question: "what was my hotel room number{c}?",
        caption: "Hotel key card sleeve with the hotel room number written on it.",
        category: Category::Number,
    },
    Topic {
        command: "remember this book",
        question: "what was the title of the book{c}?",
        caption: "Hardcover book on a shelf with the book title printed on the cover.",
        category: Category::Other,
    },
    Topic {
        command: "remember this wine",
        question: "which wine bottle did I like{c}?",
        caption: "Wine bottle on a table with the wine label facing the camera.",
        category: Category::Other,
    },
    Topic {
        command: "remember this dress",
        question: "what color was the dress{c}?",
        caption: "Dress on a clothing rack with the dress color clearly visible.",
        category: Category::Color,
    },
    Topic {
        command: "remember this rug",
        question: "what shape was the rug{c}?",
        caption: "Rug laid flat on a store floor showing the rug shape.",
        category: Category::Shape,
    },
];

const CITIES: [&str; 10] = [
    "Las Vegas, NV",
    "San Francisco, CA",
    "Seattle, WA",
    "Boston, MA",
    "Austin, TX",
    "Denver, CO",
    "Chicago, IL",
    "Portland, OR",
    "Miami, FL",
    "Atlanta, GA",
];

const STREETS: [&str; 8] = [
    "Main St",
    "Oak Ave",
    "Pine Rd",
    "Elm St",
    "Market St",
    "Harbor Blvd",
    "Cedar Ln",
    "Maple Dr",
];

const RESTAURANTS: [&str; 10] = [
    "Blue Lotus",
    "Casa Verde",
    "Golden Spoon",
    "Little Saigon",
    "Olive Tree",
    "Red Lantern",
    "Salt House",
    "Sakura Garden",
    "Taverna Kos",
    "Copper Kettle",
];

const BOOKS: [&str; 10] = [
    "The Silent Orchard",
    "Rivers of Glass",
    "A Winter Atlas",
    "The Clockmaker",
    "Northern Lights",
    "Paper Moons",
    "The Far Harbor",
    "Salt and Stone",
    "The Quiet Engine",
    "Wild Geometry",
];

const WINES: [&str; 10] = [
    "Pinot Noir",
    "Chardonnay",
    "Malbec",
    "Riesling",
    "Merlot",
    "Syrah",
    "Sauvignon Blanc",
    "Tempranillo",
    "Zinfandel",
    "Grenache",
];

const COLORS: [&str; 8] = [
    "red", "blue", "green", "yellow", "black", "white", "purple", "orange",
];

const SHAPES: [&str; 5] = ["round", "square", "oval", "rectangular", "hexagonal"];

/// The detail that distinguishes memories of one topic: (ocr text, completion, gold answer).
fn detail(topic: usize, rng: &mut ChaCha8Rng) -> (String, String, String) {
    match topic {
        0 => {
            let level = rng.random_range(1..=6);
            let spot = format!(
                "{}{}",
                ['A', 'B', 'C', 'D'][rng.random_range(0..4)],
                rng.random_range(10..60)
            );
            (
                format!("LEVEL {level} {spot}"),
                format!("parking spot {spot} on level {level}"),
                format!("level {level}, spot {spot}"),
            )
        }
        1 => {
            let name = *RESTAURANTS.choose(rng).expect("non-empty");
            (
                name.to_uppercase(),
                format!("restaurant named {name}"),
                name.to_string(),
            )
        }
        2 => {
            let room = rng.random_range(101..=1299);
            (
                format!("ROOM {room}"),
                format!("hotel room number {room}"),
                room.to_string(),
            )
        }
        3 => {
            let title = *BOOKS.choose(rng).expect("non-empty");
            (
                title.to_uppercase(),
                format!("book titled {title}"),
                title.to_string(),
            )
        }
        4 => {
            let wine = *WINES.choose(rng).expect("non-empty");
            let year = rng.random_range(2012..=2022);
            (
                format!("{} {year}", wine.to_uppercase()),
                format!("wine bottle of {wine} {year}"),
                format!("{wine} {year}"),
            )
        }
        5 => {
            let color = *COLORS.choose(rng).expect("non-empty");
            (String::new(), format!("{color} dress"), color.to_string())
        }
        _ => {
            let shape = *SHAPES.choose(rng).expect("non-empty");
            (String::new(), format!("{shape} rug"), shape.to_string())
        }
    }
}

/// Sidecar files of one memory, relative to the sidecar root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sidecars {
    pub image_ref: String,
    pub ocr: String,
    pub caption: String,
    pub completion: String,
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub seed: u64,
    pub cases: usize,
    pub min_pool: usize,
    pub max_pool: usize,
    /// Question ids start at this number, so splits never share ids.
    pub first_id: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 200,
            min_pool: 10,
            max_pool: 50,
            first_id: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub memories: Vec<MemoryEntry>,
    pub sidecars: Vec<Sidecars>,
    pub cases: Vec<BenchmarkCase>,
    /// Mock generator rules keyed on each case's positive id.
    pub generator_rules: Vec<MockRule>,
}

struct Clock {
    asked_at: i64,
    tz_minutes: i32,
    today: NaiveDate,
}

impl Clock {
    /// A timestamp on the local day `today - days_ago`, between 08:00 and 20:59.
    fn on_day(&self, days_ago: i64, rng: &mut ChaCha8Rng) -> i64 {
        debug_assert!(days_ago >= 1);
        let day = self.today - Duration::days(days_ago);
        let midnight_local = day
            .and_hms_opt(0, 0, 0)
            .expect("valid")
            .and_utc()
            .timestamp();
        let secs = rng.random_range(8 * 3600..21 * 3600);
        midnight_local + secs - i64::from(self.tz_minutes) * 60
    }
}

/// Days ago (≥ 1) of every day in the previous Monday..Sunday week.
fn last_week_days(today: NaiveDate) -> std::ops::RangeInclusive<i64> {
    let since_monday = i64::from(today.weekday().num_days_from_monday());
    (since_monday + 1)..=(since_monday + 7)
}

pub fn generate(opts: &SynthOptions) -> SyntheticBenchmark {
    assert!(
        opts.min_pool >= 8 && opts.min_pool <= opts.max_pool,
        "pool bounds"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = SyntheticBenchmark {
        memories: Vec::new(),
        sidecars: Vec::new(),
        cases: Vec::new(),
        generator_rules: Vec::new(),
    };
    // 2024-01-01T00:00:00Z
    let base: i64 = 1_704_067_200;
    for n in 0..opts.cases {
        let number = opts.first_id + n;
        let constraint = Constraint::ALL[n % Constraint::ALL.len()];
        let qid = format!("q{number:04}-{}", constraint.tag());
        let tz_minutes = *[0, 0, -420, 60, 330].choose(&mut rng).expect("non-empty");
        let asked_at =
            base + rng.random_range(0..365) * DAY_SECS + rng.random_range(9 * 3600..22 * 3600);
        let clock = Clock {
            asked_at,
            tz_minutes,
            today: local_date(asked_at, tz_minutes),
        };
        let topic = rng.random_range(0..TOPICS.len());
        let city = rng.random_range(0..CITIES.len());
        let distractors = if constraint == Constraint::None {
            0
        } else {
            rng.random_range(3..=6)
        };
        let pool_size = rng.random_range(opts.min_pool..=opts.max_pool);

        let lw = last_week_days(clock.today);
        let positive_day = match constraint {
            Constraint::Yesterday => 1,
            Constraint::LastWeek => rng.random_range(lw.clone()),
            Constraint::LastTime => rng.random_range(1..=3),
            Constraint::Location | Constraint::None => rng.random_range(1..=60),
        };
        let distractor_day = |rng: &mut ChaCha8Rng| -> i64 {
            match constraint {
                Constraint::Yesterday => rng.random_range(2..=40),
                Constraint::LastWeek => {
                    let d = rng.random_range(1..=45);
                    if lw.contains(&d) {
                        d + 7
                    } else {
                        d
                    }
                }
                Constraint::LastTime => rng.random_range(10..=60),
                Constraint::Location | Constraint::None => rng.random_range(1..=60),
            }
        };
        let other_city = |rng: &mut ChaCha8Rng| -> usize {
            let c = rng.random_range(0..CITIES.len() - 1);
            if c >= city {
                c + 1
            } else {
                c
            }
        };

        let mut ids = Vec::with_capacity(pool_size);
        let mut gold = String::new();
        let mut positive_id = String::new();
        for slot in 0..pool_size {
            let id = format!("q{number:04}-m{slot:02}");
            let (t, days_ago, c) = if slot == 0 {
                (topic, positive_day, city)
            } else if slot <= distractors {
                let c = if constraint == Constraint::Location {
                    other_city(&mut rng)
                } else {
                    rng.random_range(0..CITIES.len())
                };
                (topic, distractor_day(&mut rng), c)
            } else {
                let t = (topic + rng.random_range(1..TOPICS.len())) % TOPICS.len();
                (
                    t,
                    rng.random_range(1..=90),
                    rng.random_range(0..CITIES.len()),
                )
            };
            let (ocr, completion, answer) = detail(t, &mut rng);
            if slot == 0 {
                gold = answer;
                positive_id = id.clone();
            }
            let street = STREETS[rng.random_range(0..STREETS.len())];
            let location = format!("{} {street}, {}", rng.random_range(10..2000), CITIES[c]);
            let image_ref = format!("{id}.jpg");
            out.memories.push(
                MemoryEntry::new(
                    &id,
                    TOPICS[t].command,
                    clock.on_day(days_ago, &mut rng),
                    location,
                )
                .with_image(&image_ref),
            );
            out.sidecars.push(Sidecars {
                image_ref,
                ocr,
                caption: TOPICS[t].caption.to_string(),
                completion,
            });
            ids.push(id);
        }
        let phrase = match constraint {
            Constraint::Yesterday => " yesterday".to_string(),
            Constraint::LastWeek => " last week".to_string(),
            Constraint::LastTime => " last time".to_string(),
            Constraint::Location => {
                format!(" in {}", CITIES[city].split(',').next().expect("city name"))
            }
            Constraint::None => String::new(),
        };
        ids.shuffle(&mut rng);
        out.generator_rules.push(MockRule {
            contains: format!("\"memory_id\":\"{positive_id}\""),
            response: serde_json::json!({"id_list": [positive_id], "response": gold}).to_string(),
        });
        out.cases.push(BenchmarkCase {
            question_id: qid,
            question: TOPICS[topic].question.replace("{c}", &phrase),
            query_time: clock.asked_at,
            tz_offset_minutes: tz_minutes,
            candidate_ids: ids,
            positive_ids: vec![positive_id],
            gold_answer: gold,
            category: TOPICS[topic].category,
        });
    }
    out
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

impl SyntheticBenchmark {
    /// Writes `memories.jsonl`, `benchmark.jsonl`, `generator_rules.jsonl`
    /// and the sidecars under `images/`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images)?;
        write_jsonl(&dir.join("memories.jsonl"), &self.memories)?;
        write_jsonl(&dir.join("benchmark.jsonl"), &self.cases)?;
        write_jsonl(&dir.join("generator_rules.jsonl"), &self.generator_rules)?;
        for s in &self.sidecars {
            if !s.ocr.is_empty() {
                std::fs::write(images.join(format!("{}.ocr.txt", s.image_ref)), &s.ocr)?;
            }
            let caption = serde_json::json!({ "image_description": s.caption });
            std::fs::write(
                images.join(format!("{}.caption.json", s.image_ref)),
                caption.to_string(),
            )?;
            std::fs::write(
                images.join(format!("{}.completion.txt", s.image_ref)),
                &s.completion,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::{RuleDateParser, TemporalParse};

    fn bench() -> SyntheticBenchmark {
        generate(&SynthOptions {
            seed: 3,
            cases: 40,
            ..SynthOptions::default()
        })
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = generate(&SynthOptions::default());
        let b = generate(&SynthOptions::default());
        assert_eq!(a.cases, b.cases);
        assert_eq!(a.memories, b.memories);
        let c = generate(&SynthOptions {
            seed: 1,
            ..SynthOptions::default()
        });
        assert_ne!(a.memories, c.memories);
    }

    #[test]
    fn cases_are_valid_and_ids_unique() {
        let b = bench();
        let mut seen = std::collections::HashSet::new();
        for m in &b.memories {
            m.validate().unwrap();
            assert!(seen.insert(m.id.clone()), "duplicate {}", m.id);
        }
        for c in &b.cases {
            c.validate().unwrap();
            assert!((10..=50).contains(&c.candidate_ids.len()));
            assert!(Constraint::of_question(&c.question_id).is_some());
        }
    }

    #[test]
    fn planted_dates_match_the_rule_parser() {
        let b = bench();
        let by_id: std::collections::HashMap<_, _> =
            b.memories.iter().map(|m| (m.id.as_str(), m)).collect();
        for c in &b.cases {
            let q = c.recall_query();
            let parse: TemporalParse = RuleDateParser.parse(&q);
            let constraint = Constraint::of_question(&c.question_id).unwrap();
            let in_range = |id: &str| {
                let d = local_date(by_id[id].created_at, c.tz_offset_minutes);
                parse.range.is_some_and(|r| r.contains(d))
            };
            assert!(c
                .candidate_ids
                .iter()
                .all(|id| by_id[id.as_str()].created_at <= c.query_time));
            if constraint.is_dated() {
                assert!(in_range(&c.positive_ids[0]), "{}", c.question_id);
                let pos = by_id[c.positive_ids[0].as_str()];
                for id in &c.candidate_ids {
                    let m = by_id[id.as_str()];
                    if m.invocation_command == pos.invocation_command && m.id != pos.id {
                        assert!(!in_range(id), "{} distractor {id} in range", c.question_id);
                    }
                }
            } else {
                assert!(parse.range.is_none(), "{}: {:?}", c.question, parse);
                assert_eq!(parse.search_recent, constraint == Constraint::LastTime);
            }
        }
    }

    #[test]
    fn writes_sidecars_the_mock_provider_reads() {
        let b = bench();
        let dir = tempfile::tempdir().unwrap();
        b.write_to(dir.path()).unwrap();
        let provider = crate::augment::MockSidecarProvider::new(dir.path().join("images"));
        let augmenter = crate::augment::Augmenter::uniform(std::sync::Arc::new(provider));
        let out = augmenter.augment(&b.memories[0]).unwrap();
        assert_eq!(out.clue.invocation_completion, b.sidecars[0].completion);
        assert!(!out.clue.image_caption.is_empty());
        let lines = std::fs::read_to_string(dir.path().join("benchmark.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 40);
    }
}
