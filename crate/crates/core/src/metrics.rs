//! Evaluation math: Jensen-Shannon divergence, accuracy, macro F1,
//! two-sample Kolmogorov-Smirnov, Fleiss' kappa, and distribution
//! construction over the sentiment / polarity category scales.
//!
//! JSD uses the base-2 logarithm throughout, so values live in [0, 1].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Polarity, SentimentScore, UserId};

/// Tolerance for "probabilities sum to one" checks.
const SUM_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("distribution entries must be non-negative and sum to 1 (got sum {0})")]
    InvalidDistribution(f64),
    #[error("distributions have different category counts ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cannot build a distribution from an empty score list")]
    EmptyScores,
    #[error("prediction and truth maps share no users")]
    EmptyIntersection,
    #[error("samples must be non-empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFiniteSample,
    #[error("ratings row {row} sums to {got}, expected {expected}")]
    RowSumViolation { row: usize, got: usize, expected: usize },
    #[error("fleiss kappa needs at least 2 items and 2 raters per item")]
    TooFewRatings,
}

/// Which category scale a distribution ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryScale {
    /// Five sentiment categories, ordered -2..=2.
    Sentiment,
    /// Three polarity categories, ordered -1..=1.
    Polarity,
}

impl CategoryScale {
    pub fn len(self) -> usize {
        match self {
            CategoryScale::Sentiment => 5,
            CategoryScale::Polarity => 3,
        }
    }

    pub fn is_empty(self) -> bool {
        false
    }
}

/// A normalized histogram over the ordered sentiment or polarity categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentDistribution {
    pub scale: CategoryScale,
    /// Probabilities in category order (lowest category first).
    pub probabilities: Vec<f64>,
    /// Number of observations behind the histogram.
    pub sample_count: usize,
}

impl SentimentDistribution {
    pub fn from_probabilities(
        scale: CategoryScale,
        probabilities: Vec<f64>,
        sample_count: usize,
    ) -> Result<Self, MetricsError> {
        if probabilities.len() != scale.len() {
            return Err(MetricsError::DimensionMismatch(probabilities.len(), scale.len()));
        }
        let sum: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > SUM_TOL {
            return Err(MetricsError::InvalidDistribution(sum));
        }
        Ok(SentimentDistribution { scale, probabilities, sample_count })
    }

    pub fn from_scores(scores: &[SentimentScore]) -> Result<Self, MetricsError> {
        if scores.is_empty() {
            return Err(MetricsError::EmptyScores);
        }
        let mut counts = [0usize; 5];
        for s in scores {
            counts[(s.value() + 2) as usize] += 1;
        }
        let n = scores.len() as f64;
        Ok(SentimentDistribution {
            scale: CategoryScale::Sentiment,
            probabilities: counts.iter().map(|c| *c as f64 / n).collect(),
            sample_count: scores.len(),
        })
    }

    pub fn from_polarities(polarities: &[Polarity]) -> Result<Self, MetricsError> {
        if polarities.is_empty() {
            return Err(MetricsError::EmptyScores);
        }
        let mut counts = [0usize; 3];
        for p in polarities {
            counts[(p.value() + 1) as usize] += 1;
        }
        let n = polarities.len() as f64;
        Ok(SentimentDistribution {
            scale: CategoryScale::Polarity,
            probabilities: counts.iter().map(|c| *c as f64 / n).collect(),
            sample_count: polarities.len(),
        })
    }
}

/// Jensen-Shannon divergence in base 2:
/// `JSD(p‖q) = KL(p‖m)/2 + KL(q‖m)/2` with `m = (p+q)/2`.
///
/// Zero-probability terms contribute zero (`0·log(0/x) = 0`); `m_i` can only
/// vanish where both inputs do, and those terms are skipped. Arguments are
/// ordered canonically before evaluation so `jsd(p, q)` and `jsd(q, p)` run
/// the identical float sequence.
pub fn jsd(p: &SentimentDistribution, q: &SentimentDistribution) -> Result<f64, MetricsError> {
    if p.probabilities.len() != q.probabilities.len() {
        return Err(MetricsError::DimensionMismatch(p.probabilities.len(), q.probabilities.len()));
    }
    let (a, b) = if p.probabilities <= q.probabilities { (p, q) } else { (q, p) };
    let mut acc = 0.0;
    for (&ai, &bi) in a.probabilities.iter().zip(&b.probabilities) {
        let m = (ai + bi) / 2.0;
        if ai > 0.0 {
            acc += 0.5 * ai * (ai / m).log2();
        }
        if bi > 0.0 {
            acc += 0.5 * bi * (bi / m).log2();
        }
    }
    // Guard against tiny negative float residue at p == q.
    Ok(acc.max(0.0))
}

/// Fraction of exact category matches over users present in both maps.
/// Returns `(accuracy, intersection_size)`.
pub fn accuracy<C: PartialEq>(
    predictions: &BTreeMap<UserId, C>,
    truth: &BTreeMap<UserId, C>,
) -> Result<(f64, usize), MetricsError> {
    let mut n = 0usize;
    let mut hits = 0usize;
    for (u, p) in predictions {
        if let Some(t) = truth.get(u) {
            n += 1;
            if p == t {
                hits += 1;
            }
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyIntersection);
    }
    Ok((hits as f64 / n as f64, n))
}

/// Macro F1 over the full category scale: per-class F1 = 2PR/(P+R) with
/// the 0/0 → 0 convention, averaged unweighted over every category in
/// `categories`, including classes with zero support.
pub fn macro_f1<C: PartialEq + Copy>(
    predictions: &BTreeMap<UserId, C>,
    truth: &BTreeMap<UserId, C>,
    categories: &[C],
) -> Result<f64, MetricsError> {
    let pairs: Vec<(&C, &C)> = predictions
        .iter()
        .filter_map(|(u, p)| truth.get(u).map(|t| (p, t)))
        .collect();
    if pairs.is_empty() {
        return Err(MetricsError::EmptyIntersection);
    }
    let mut f1_sum = 0.0;
    for c in categories {
        let tp = pairs.iter().filter(|(p, t)| *p == c && *t == c).count() as f64;
        let fp = pairs.iter().filter(|(p, t)| *p == c && *t != c).count() as f64;
        let fne = pairs.iter().filter(|(p, t)| *p != c && *t == c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fne > 0.0 { tp / (tp + fne) } else { 0.0 };
        if precision + recall > 0.0 {
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(f1_sum / categories.len() as f64)
}

/// Two-sample Kolmogorov-Smirnov test. Returns `(D, p_value)` where
/// `D = sup_x |F_a(x) - F_b(x)|` over the empirical CDFs and the p-value
/// comes from the asymptotic Kolmogorov distribution evaluated at
/// `λ = sqrt(n_e)·D` with effective size `n_e = n_a·n_b/(n_a+n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64), MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFiniteSample);
    }
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = a[i].min(b[j]);
        while i < na && a[i] <= v {
            i += 1;
        }
        while j < nb && b[j] <= v {
            j += 1;
        }
        let diff = (i as f64 / na as f64 - j as f64 / nb as f64).abs();
        d = d.max(diff);
    }
    // One side is exhausted; the remaining sweep peaks at the cut point
    // already visited, so d is final.

    let n_eff = (na as f64 * nb as f64) / (na + nb) as f64;
    let lambda = n_eff.sqrt() * d;
    Ok((d, kolmogorov_survival(lambda)))
}

/// Asymptotic Kolmogorov survival function
/// `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} exp(-2 j² λ²)`, truncated when a term
/// drops below 1e-12. Near λ = 0 the series does not converge numerically;
/// the survival probability there is 1.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut p = 0.0;
    for j in 1..=200 {
        let term = 2.0 * (-2.0 * (j as f64).powi(2) * lambda * lambda).exp();
        if term < 1e-12 {
            break;
        }
        p += if j % 2 == 1 { term } else { -term };
    }
    p.clamp(0.0, 1.0)
}

/// Fleiss' kappa over an item × category count matrix where every row sums
/// to `raters_per_item`. Returns 1.0 in the degenerate unanimous
/// single-category case (chance agreement is already perfect).
pub fn fleiss_kappa(
    ratings: &[Vec<usize>],
    raters_per_item: usize,
) -> Result<f64, MetricsError> {
    if ratings.len() < 2 || raters_per_item < 2 {
        return Err(MetricsError::TooFewRatings);
    }
    let n = raters_per_item;
    let n_items = ratings.len();
    let n_cats = ratings[0].len();
    for (row, counts) in ratings.iter().enumerate() {
        let got: usize = counts.iter().sum();
        if got != n || counts.len() != n_cats {
            return Err(MetricsError::RowSumViolation { row, got, expected: n });
        }
    }
    let p_bar: f64 = ratings
        .iter()
        .map(|row| {
            let same: usize = row.iter().map(|c| c * c).sum();
            (same - n) as f64 / (n * (n - 1)) as f64
        })
        .sum::<f64>()
        / n_items as f64;
    let p_e: f64 = (0..n_cats)
        .map(|j| {
            let share = ratings.iter().map(|row| row[j]).sum::<usize>() as f64
                / (n_items * n) as f64;
            share * share
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Per-cohort evaluation figures, as emitted in the report JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupReport {
    pub n: usize,
    pub coverage: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub jsd_sentiment: f64,
    pub jsd_polarity: f64,
}

/// Evaluation report: overall figures plus per-location groups. Groups are
/// keyed at two granularities, `state` and `state/county`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Log base used by the JSD figures. Fixed at 2.
    pub jsd_log_base: f64,
    pub n: usize,
    pub coverage: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub jsd_sentiment: f64,
    pub jsd_polarity: f64,
    pub per_group: BTreeMap<String, GroupReport>,
}

/// Builds the evaluation report for a predicted-vs-truth pair of score maps.
///
/// `cohort_size` is the number of users the evaluation was requested for;
/// `coverage` is the evaluated fraction of that cohort. `locations` drives
/// the per-group breakdown and may omit users.
pub fn build_report(
    predictions: &BTreeMap<UserId, SentimentScore>,
    truth: &BTreeMap<UserId, SentimentScore>,
    locations: &BTreeMap<UserId, crate::domain::Location>,
    cohort_size: usize,
) -> Result<EvaluationReport, MetricsError> {
    let evaluated: Vec<UserId> = predictions
        .keys()
        .filter(|u| truth.contains_key(*u))
        .cloned()
        .collect();
    if evaluated.is_empty() {
        return Err(MetricsError::EmptyIntersection);
    }

    let overall = group_figures(&evaluated, predictions, truth, cohort_size)?;

    let mut groups: BTreeMap<String, Vec<UserId>> = BTreeMap::new();
    for u in &evaluated {
        if let Some(loc) = locations.get(u) {
            groups.entry(loc.state.clone()).or_default().push(u.clone());
            groups
                .entry(format!("{}/{}", loc.state, loc.county))
                .or_default()
                .push(u.clone());
        }
    }
    let mut per_group = BTreeMap::new();
    for (key, members) in groups {
        per_group.insert(key, group_figures(&members, predictions, truth, members.len())?);
    }

    Ok(EvaluationReport {
        jsd_log_base: 2.0,
        n: overall.n,
        coverage: overall.coverage,
        accuracy: overall.accuracy,
        macro_f1: overall.macro_f1,
        jsd_sentiment: overall.jsd_sentiment,
        jsd_polarity: overall.jsd_polarity,
        per_group,
    })
}

fn group_figures(
    members: &[UserId],
    predictions: &BTreeMap<UserId, SentimentScore>,
    truth: &BTreeMap<UserId, SentimentScore>,
    cohort_size: usize,
) -> Result<GroupReport, MetricsError> {
    let pred: BTreeMap<UserId, SentimentScore> = members
        .iter()
        .filter_map(|u| predictions.get(u).map(|s| (u.clone(), *s)))
        .collect();
    let tru: BTreeMap<UserId, SentimentScore> = members
        .iter()
        .filter_map(|u| truth.get(u).map(|s| (u.clone(), *s)))
        .collect();
    let (acc, n) = accuracy(&pred, &tru)?;
    let f1 = macro_f1(&pred, &tru, &SentimentScore::CATEGORIES)?;

    let pred_scores: Vec<SentimentScore> = pred.values().copied().collect();
    let tru_scores: Vec<SentimentScore> = tru.values().copied().collect();
    let jsd_sentiment = jsd(
        &SentimentDistribution::from_scores(&pred_scores)?,
        &SentimentDistribution::from_scores(&tru_scores)?,
    )?;
    let pred_pol: Vec<Polarity> =
        pred_scores.iter().map(|s| crate::domain::polarity_of(*s)).collect();
    let tru_pol: Vec<Polarity> =
        tru_scores.iter().map(|s| crate::domain::polarity_of(*s)).collect();
    let jsd_polarity = jsd(
        &SentimentDistribution::from_polarities(&pred_pol)?,
        &SentimentDistribution::from_polarities(&tru_pol)?,
    )?;

    Ok(GroupReport {
        n,
        coverage: if cohort_size == 0 { 0.0 } else { n as f64 / cohort_size as f64 },
        accuracy: acc,
        macro_f1: f1,
        jsd_sentiment,
        jsd_polarity,
    })
}
