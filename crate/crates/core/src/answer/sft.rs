//! Noise-injected, multi-task supervised fine-tuning examples.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_prompt, DEFAULT_MAX_CANDIDATES};
use crate::eval::BenchmarkCase;
use crate::memory::AugmentedMemory;

/// One JSONL line: `{"prompt","target","candidate_ids","positive_ids"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub prompt: String,
    /// `{"id_list": [...], "response": "..."}` with positives in prompt order.
    pub target: String,
    pub candidate_ids: Vec<String>,
    pub positive_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftOptions {
    pub seed: u64,
    pub max_negatives: usize,
    pub max_candidates: usize,
}

impl Default for SftOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_negatives: 2,
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SftSummary {
    pub emitted: usize,
    /// `(question_id, reason)` of every skipped case.
    pub skipped: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Target<'a> {
    id_list: &'a [String],
    response: &'a str,
}

/// Builds one example per usable case.
///
/// `rank` returns the case's candidate ids ordered by fused retrieval score;
/// the injected negatives are the best-ranked non-positives. `lookup`
/// resolves ids to memories. A single seeded stream drives both the number
/// of negatives (uniform in `0..=max_negatives`) and the candidate shuffle.
pub fn build_sft_dataset<R, L>(
    cases: &[BenchmarkCase],
    mut rank: R,
    lookup: L,
    opts: &SftOptions,
) -> (Vec<SftExample>, SftSummary)
where
    R: FnMut(&BenchmarkCase) -> Result<Vec<String>, String>,
    L: Fn(&str) -> Option<AugmentedMemory>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    let mut summary = SftSummary::default();
    let mut skip = |case: &BenchmarkCase, reason: String| {
        tracing::warn!(question_id = %case.question_id, "skipping case: {reason}");
        summary.skipped.push((case.question_id.clone(), reason));
    };

    for case in cases {
        if case.positive_ids.is_empty() {
            skip(case, "no positives".into());
            continue;
        }
        let ranked = match rank(case) {
            Ok(r) => r,
            Err(e) => {
                skip(case, e);
                continue;
            }
        };
        let wanted = rng.random_range(0..=opts.max_negatives);
        let negatives: Vec<String> = ranked
            .into_iter()
            .filter(|id| !case.positive_ids.contains(id))
            .take(wanted)
            .collect();
        let mut ids: Vec<String> = case.positive_ids.iter().cloned().chain(negatives).collect();
        ids.shuffle(&mut rng);

        let memories: Option<Vec<AugmentedMemory>> = ids.iter().map(|id| lookup(id)).collect();
        let Some(memories) = memories else {
            let missing = ids
                .iter()
                .find(|id| lookup(id).is_none())
                .cloned()
                .unwrap_or_default();
            skip(case, format!("unknown memory `{missing}`"));
            continue;
        };
        let prompt = match build_prompt(&case.recall_query(), &memories, opts.max_candidates) {
            Ok(p) => p,
            Err(e) => {
                skip(case, e.to_string());
                continue;
            }
        };
        let positives: Vec<String> = ids
            .iter()
            .filter(|id| case.positive_ids.contains(id))
            .cloned()
            .collect();
        let target = serde_json::to_string(&Target {
            id_list: &positives,
            response: &case.gold_answer,
        })
        .expect("target serializes");
        out.push(SftExample {
            prompt,
            target,
            candidate_ids: ids,
            positive_ids: positives,
        });
    }
    summary.emitted = out.len();
    (out, summary)
}

pub fn write_sft_jsonl(examples: &[SftExample], mut w: impl Write) -> std::io::Result<()> {
    for e in examples {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
