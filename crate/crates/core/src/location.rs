//! BM25 location matching over the location fields of a candidate pool.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

#[derive(Debug, Error, PartialEq)]
#[error("invalid BM25 parameters: k1 = {k1}, b = {b}")]
pub struct Bm25ParamsError {
    pub k1: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), Bm25ParamsError> {
        if self.k1 > 0.0 && (0.0..=1.0).contains(&self.b) {
            Ok(())
        } else {
            Err(Bm25ParamsError {
                k1: self.k1,
                b: self.b,
            })
        }
    }
}

/// Corpus statistics of one candidate pool. Immutable once built.
#[derive(Debug, Clone)]
pub struct LocationIndex {
    params: Bm25Params,
    doc_count: usize,
    avg_len: f64,
    df: HashMap<String, usize>,
}

impl LocationIndex {
    pub fn build<'a>(locations: impl IntoIterator<Item = &'a str>, params: Bm25Params) -> Self {
        let mut doc_count = 0;
        let mut total_len = 0;
        let mut df: HashMap<String, usize> = HashMap::new();
        for loc in locations {
            let tokens = tokenize(loc);
            doc_count += 1;
            total_len += tokens.len();
            for t in tokens.into_iter().collect::<HashSet<_>>() {
                *df.entry(t).or_default() += 1;
            }
        }
        let avg_len = if doc_count == 0 {
            0.0
        } else {
            total_len as f64 / doc_count as f64
        };
        Self {
            params,
            doc_count,
            avg_len,
            df,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, which is never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    /// BM25 of `location` against the distinct tokens of `query`. Empty locations score 0.
    pub fn score(&self, location: &str, query: &str) -> f64 {
        let doc = tokenize(location);
        if doc.is_empty() || self.avg_len == 0.0 {
            return 0.0;
        }
        let mut tf: HashMap<&str, usize> = HashMap::new();
        for t in &doc {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        let Bm25Params { k1, b } = self.params;
        let norm = k1 * (1.0 - b + b * doc.len() as f64 / self.avg_len);
        let terms: HashSet<String> = tokenize(query).into_iter().collect();
        terms
            .iter()
            .filter_map(|t| tf.get(t.as_str()).map(|&f| (t, f as f64)))
            .map(|(t, f)| self.idf(t) * f * (k1 + 1.0) / (f + norm))
            .sum()
    }
}

/// Min-max normalization into `[0, 1]`.
///
/// A constant vector maps to all ones when positive and all zeros otherwise.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    scores
        .iter()
        .map(|&s| {
            if hi > lo {
                (s - lo) / (hi - lo)
            } else if hi > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Raw BM25 location scores of every pool member, min-max normalized over the pool.
pub fn pool_location_scores(locations: &[&str], query: &str, params: Bm25Params) -> Vec<f64> {
    let index = LocationIndex::build(locations.iter().copied(), params);
    let raw: Vec<f64> = locations.iter().map(|l| index.score(l, query)).collect();
    min_max_normalize(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook BM25 recomputed from scratch over tokenized documents.
    fn oracle(docs: &[Vec<String>], d: usize, query: &[String], k1: f64, b: f64) -> f64 {
        let n = docs.len() as f64;
        let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
        if docs[d].is_empty() || avgdl == 0.0 {
            return 0.0;
        }
        let mut seen: Vec<&String> = Vec::new();
        let mut total = 0.0;
        for q in query {
            if seen.contains(&q) {
                continue;
            }
            seen.push(q);
            let df = docs.iter().filter(|doc| doc.contains(q)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            let f = docs[d].iter().filter(|t| *t == q).count() as f64;
            let dl = docs[d].len() as f64;
            total += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / avgdl));
        }
        total
    }

    #[test]
    fn singleton_corpus_value() {
        let loc = "Las Vegas Blvd, Las Vegas NV";
        let idx = LocationIndex::build([loc], Bm25Params::default());
        let got = idx.score(loc, "hotel in Las Vegas");
        // two matching terms, each with tf = 2 in a 5-token document equal to avgdl
        let idf = (1.0f64 + 0.5 / 1.5).ln();
        let per_term = idf * 2.0 * 2.2 / (2.0 + 1.2);
        assert!((got - 2.0 * per_term).abs() <= 1e-9, "{got}");
        assert!((got - 0.7911256992423973).abs() <= 1e-9, "{got}");
    }

    #[test]
    fn degenerate_cases() {
        let idx = LocationIndex::build(["Lot B", ""], Bm25Params::default());
        assert_eq!(idx.score("", "lot b"), 0.0);
        assert_eq!(idx.score("Lot B", "hotel paris"), 0.0);
        assert_eq!(
            LocationIndex::build(Vec::<&str>::new(), Bm25Params::default()).score("x", "x"),
            0.0
        );
    }

    #[test]
    fn params_validation() {
        assert!(Bm25Params::default().validate().is_ok());
        assert!(Bm25Params { k1: 0.0, b: 0.5 }.validate().is_err());
        assert!(Bm25Params { k1: 1.0, b: 1.5 }.validate().is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(min_max_normalize(&[2.0, 1.0, 0.0]), vec![1.0, 0.5, 0.0]);
        assert_eq!(min_max_normalize(&[0.7]), vec![1.0]);
        assert_eq!(min_max_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert!(min_max_normalize(&[]).is_empty());
        let s = pool_location_scores(
            &["Las Vegas Blvd", "", "Paris"],
            "las vegas hotel",
            Bm25Params::default(),
        );
        assert_eq!(s, vec![1.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn matches_brute_force_oracle(
            docs in prop::collection::vec(prop::collection::vec("[a-e]", 0..=8), 1..=10),
            query in prop::collection::vec("[a-f]", 1..=5),
            k1 in 0.1f64..3.0,
            b in 0.0f64..=1.0,
        ) {
            let texts: Vec<String> = docs.iter().map(|d| d.join(" ")).collect();
            let params = Bm25Params { k1, b };
            let idx = LocationIndex::build(texts.iter().map(String::as_str), params);
            let q = query.join(" ");
            for (i, text) in texts.iter().enumerate() {
                let want = oracle(&docs, i, &query, k1, b);
                let got = idx.score(text, &q);
                prop_assert!((got - want).abs() <= 1e-9, "doc {i}: {got} vs {want}");
                prop_assert!(got >= 0.0);
            }
        }

        #[test]
        fn normalized_scores_are_bounded(scores in prop::collection::vec(0.0f64..50.0, 0..20)) {
            for s in min_max_normalize(&scores) {
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }
}
