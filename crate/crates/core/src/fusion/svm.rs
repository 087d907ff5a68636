//! Pairwise RankSVM for fusion weights.
//!
//! Each (positive, negative) pair of a query yields the rows `+(x_p - x_n)`
//! with label `+1` and `-(x_p - x_n)` with label `-1`. The primal objective
//! `0.5 |w|^2 + C * sum max(0, 1 - y w.x)^2` is minimized by Newton steps on
//! the generalized Hessian with Armijo backtracking. No intercept is fitted:
//! the mirrored rows make the problem symmetric through the origin.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::{FusionError, FusionWeights, Signal, SignalVector};

/// Labeled candidates of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankQuery {
    pub query_id: String,
    pub items: Vec<(SignalVector, bool)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankTrainingSet {
    queries: Vec<RankQuery>,
}

impl RankTrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a query; it must hold at least one positive and one negative.
    pub fn add(&mut self, q: RankQuery) -> Result<(), FusionError> {
        let pos = q.items.iter().any(|(_, l)| *l);
        let neg = q.items.iter().any(|(_, l)| !*l);
        if !(pos && neg) {
            return Err(FusionError::InvalidTrainingQuery(q.query_id));
        }
        self.queries.push(q);
        Ok(())
    }

    pub fn queries(&self) -> &[RankQuery] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Positive-minus-negative difference vectors in a fixed order.
    pub fn pair_differences(&self) -> Vec<[f64; 4]> {
        let mut out = Vec::new();
        for q in &self.queries {
            for (p, _) in q.items.iter().filter(|(_, l)| *l) {
                for (n, _) in q.items.iter().filter(|(_, l)| !*l) {
                    let (p, n) = (p.to_array(), n.to_array());
                    out.push([p[0] - n[0], p[1] - n[1], p[2] - n[2], p[3] - n[3]]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub c_reg: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Signals excluded from training; their weights stay 0.
    pub masked: Vec<Signal>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            c_reg: 1.0,
            tolerance: 1e-6,
            max_iterations: 10_000,
            masked: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub weights: FusionWeights,
    pub iterations: usize,
    pub pair_count: usize,
    pub objective: f64,
    pub warnings: Vec<String>,
}

/// Trains with default options and the given regularization strength.
pub fn train_weights(data: &RankTrainingSet, c_reg: f64) -> Result<FusionWeights, FusionError> {
    let opts = TrainOptions {
        c_reg,
        ..TrainOptions::default()
    };
    train_weights_with(data, &opts).map(|r| r.weights)
}

struct Problem {
    rows: Vec<(Vector4<f64>, f64)>,
    c: f64,
}

impl Problem {
    fn objective(&self, w: &Vector4<f64>) -> f64 {
        let loss: f64 = self
            .rows
            .iter()
            .map(|(x, y)| (1.0 - y * w.dot(x)).max(0.0).powi(2))
            .sum();
        0.5 * w.dot(w) + self.c * loss
    }

    fn gradient_hessian(&self, w: &Vector4<f64>) -> (Vector4<f64>, Matrix4<f64>) {
        let mut g = *w;
        let mut h = Matrix4::identity();
        for (x, y) in &self.rows {
            let margin = 1.0 - y * w.dot(x);
            if margin > 0.0 {
                g -= 2.0 * self.c * y * margin * x;
                h += 2.0 * self.c * x * x.transpose();
            }
        }
        (g, h)
    }
}

pub fn train_weights_with(
    data: &RankTrainingSet,
    opts: &TrainOptions,
) -> Result<TrainReport, FusionError> {
    if !(opts.c_reg > 0.0 && opts.c_reg.is_finite()) {
        return Err(FusionError::InvalidWeights(format!(
            "c_reg must be positive, got {}",
            opts.c_reg
        )));
    }
    let keep = |i: usize| !opts.masked.iter().any(|s| s.index() == i);
    let diffs: Vec<[f64; 4]> = data
        .pair_differences()
        .into_iter()
        .map(|d| std::array::from_fn(|i| if keep(i) { d[i] } else { 0.0 }))
        .collect();
    if diffs.is_empty() {
        return Err(FusionError::DegenerateData(
            "the training set has no positive/negative pairs".into(),
        ));
    }
    if diffs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(FusionError::NonFiniteScore);
    }
    if diffs.iter().all(|d| d.iter().all(|v| *v == 0.0)) {
        return Err(FusionError::DegenerateData(
            "every pair has identical signals".into(),
        ));
    }
    let mut rows = Vec::with_capacity(diffs.len() * 2);
    for d in &diffs {
        let x = Vector4::from_column_slice(d);
        rows.push((x, 1.0));
        rows.push((-x, -1.0));
    }
    let problem = Problem {
        rows,
        c: opts.c_reg,
    };

    let mut w = Vector4::zeros();
    let mut f = problem.objective(&w);
    let mut iterations = 0;
    loop {
        let (g, h) = problem.gradient_hessian(&w);
        let gnorm = g.amax();
        if gnorm <= opts.tolerance {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(FusionError::NonConvergence {
                iterations,
                gradient_norm: gnorm,
            });
        }
        iterations += 1;
        let step = h.cholesky().map(|c| -c.solve(&g)).unwrap_or(-g);
        let slope = g.dot(&step);
        let mut t = 1.0;
        loop {
            let candidate = w + t * step;
            let fc = problem.objective(&candidate);
            if fc <= f + 1e-4 * t * slope || t < 1e-12 {
                w = candidate;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }

    let mut weights = FusionWeights::from_array([w[0], w[1], w[2], w[3]]);
    weights.c_reg = Some(opts.c_reg);
    weights.trained_at =
        Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    let warnings: Vec<String> = weights
        .negative_signals()
        .into_iter()
        .map(|s| format!("learned a negative weight for the {} signal", s.name()))
        .collect();
    for msg in &warnings {
        tracing::warn!("{msg}");
    }
    Ok(TrainReport {
        weights,
        iterations,
        pair_count: diffs.len(),
        objective: f,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn query(id: &str, items: Vec<([f64; 4], bool)>) -> RankQuery {
        RankQuery {
            query_id: id.into(),
            items: items
                .into_iter()
                .map(|(s, l)| (SignalVector::from_array(s), l))
                .collect(),
        }
    }

    fn synthetic(rng: &mut ChaCha8Rng, n: usize) -> RankTrainingSet {
        let mut set = RankTrainingSet::new();
        for i in 0..n {
            let noise = |rng: &mut ChaCha8Rng| {
                [
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                ]
            };
            let mut items = Vec::new();
            let base: f64 = rng.random_range(-0.9..-0.1);
            let p = noise(rng);
            items.push(([p[0], p[1], p[2], base + rng.random_range(0.5..1.0)], true));
            for _ in 0..4 {
                let n = noise(rng);
                items.push(([n[0], n[1], n[2], base], false));
            }
            set.add(query(&format!("q{i}"), items)).unwrap();
        }
        set
    }

    #[test]
    fn semantic_signal_dominates_on_separable_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let train = synthetic(&mut rng, 40);
        let held_out = synthetic(&mut rng, 40);
        let report = train_weights_with(&train, &TrainOptions::default()).unwrap();
        let w = report.weights.to_array();
        assert!(
            w[3] > w[0].abs() && w[3] > w[1].abs() && w[3] > w[2].abs(),
            "{w:?}"
        );
        // exhaustive pairwise check on unseen queries
        let score = |x: &[f64; 4]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let mut correct = 0;
        let mut total = 0;
        for q in held_out.queries() {
            for (p, _) in q.items.iter().filter(|(_, l)| *l) {
                for (n, _) in q.items.iter().filter(|(_, l)| !*l) {
                    total += 1;
                    correct += usize::from(score(&p.to_array()) > score(&n.to_array()));
                }
            }
        }
        assert_eq!(correct, total);
    }

    #[test]
    fn one_dimensional_date_case() {
        let mut set = RankTrainingSet::new();
        set.add(query(
            "q",
            vec![([1.0, 0.0, 0.0, 0.0], true), ([0.0, 0.0, 0.0, 0.0], false)],
        ))
        .unwrap();
        let w = train_weights(&set, 1.0).unwrap();
        assert!(w.w_t > 0.0);
        assert_eq!([w.w_r, w.w_l, w.w_s], [0.0, 0.0, 0.0]);
        // closed form: minimize 0.5 w^2 + 2C (1 - w)^2 gives w = 4C / (1 + 4C)
        assert!((w.w_t - 0.8).abs() <= 1e-6, "{}", w.w_t);
        assert_eq!(w.c_reg, Some(1.0));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            train_weights(&RankTrainingSet::new(), 1.0),
            Err(FusionError::DegenerateData(_))
        ));
        let mut set = RankTrainingSet::new();
        assert!(set.add(query("q", vec![([1.0; 4], true)])).is_err());
        set.add(query("q", vec![([0.5; 4], true), ([0.5; 4], false)]))
            .unwrap();
        assert!(matches!(
            train_weights(&set, 1.0),
            Err(FusionError::DegenerateData(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = synthetic(&mut rng, 5);
        let opts = TrainOptions {
            max_iterations: 0,
            ..TrainOptions::default()
        };
        assert!(matches!(
            train_weights_with(&set, &opts),
            Err(FusionError::NonConvergence { iterations: 0, .. })
        ));
    }

    #[test]
    fn masked_signals_stay_zero_and_training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = synthetic(&mut rng, 10);
        let opts = TrainOptions {
            masked: vec![Signal::Semantic],
            ..TrainOptions::default()
        };
        let a = train_weights_with(&set, &opts).unwrap();
        let b = train_weights_with(&set, &opts).unwrap();
        assert_eq!(a.weights.w_s, 0.0);
        assert_eq!(a.weights.to_array(), b.weights.to_array());
    }

    #[test]
    fn negative_weights_raise_warnings() {
        let mut set = RankTrainingSet::new();
        set.add(query(
            "q",
            vec![([0.0, 1.0, 0.0, 0.0], true), ([0.0, 0.0, 0.0, 1.0], false)],
        ))
        .unwrap();
        let r = train_weights_with(&set, &TrainOptions::default()).unwrap();
        assert!(r.weights.w_s < 0.0);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("semantic"));
    }
}
