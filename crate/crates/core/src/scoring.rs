//! Score aggregation for model ratings and for the three-rater human data.
//!
//! Model side: sub-scores on 0..=10 reduce by `min` within each aspect, and
//! the overall score is the geometric mean of the two minima. Sub-scores are
//! weighted equally; no weighting is configurable.
//!
//! Human side: raters pick from {0, 0.5, 1}. Averages are kept as exact
//! half-unit counts and only turned into floats on read.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::parser::{ParseStatus, ParsedRating};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("sub-score list is empty")]
    EmptySubScores,
    #[error("value {0} is outside [0, 10]")]
    OutOfRange(f64),
    #[error("rater value {0} is not one of 0, 0.5, 1")]
    InvalidRaterValue(f64),
    #[error("instance {0} was dropped and cannot be scored")]
    DroppedInstance(String),
    #[error("SC rating is for {sc}, PQ rating for {pq}")]
    InstanceMismatch { sc: String, pq: String },
}

fn check_range(v: f64) -> Result<f64, ScoringError> {
    if (0.0..=10.0).contains(&v) {
        Ok(v)
    } else {
        Err(ScoringError::OutOfRange(v))
    }
}

fn min_of(values: &[f64]) -> Result<f64, ScoringError> {
    let mut it = values.iter().copied();
    let first = check_range(it.next().ok_or(ScoringError::EmptySubScores)?)?;
    it.try_fold(first, |m, v| Ok(m.min(check_range(v)?)))
}

/// Geometric mean of the SC and PQ minima, on the 0..=10 scale.
pub fn overall_score(alpha: &[f64], beta: &[f64]) -> Result<f64, ScoringError> {
    Ok((min_of(alpha)? * min_of(beta)?).sqrt())
}

/// Maps 0..=10 onto 0..=1.
pub fn normalize(v: f64) -> Result<f64, ScoringError> {
    Ok(check_range(v)? / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Parsed,
    PenaltyFilled,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Parsed => "parsed",
            Provenance::PenaltyFilled => "penalty_filled",
        }
    }
}

/// Normalized scores for one rated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub instance_id: String,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sc: f64,
    pub pq: f64,
    pub overall: f64,
    pub sc_provenance: Provenance,
    pub pq_provenance: Provenance,
}

fn provenance(r: &ParsedRating) -> Result<Provenance, ScoringError> {
    match r.status {
        ParseStatus::Parsed => Ok(Provenance::Parsed),
        ParseStatus::PenaltyFilled => Ok(Provenance::PenaltyFilled),
        ParseStatus::Dropped => Err(ScoringError::DroppedInstance(r.instance_id.clone())),
    }
}

/// Combines the SC and PQ ratings of one instance.
pub fn score_instance(parsed_sc: &ParsedRating, parsed_pq: &ParsedRating) -> Result<InstanceScore, ScoringError> {
    if parsed_sc.instance_id != parsed_pq.instance_id {
        return Err(ScoringError::InstanceMismatch {
            sc: parsed_sc.instance_id.clone(),
            pq: parsed_pq.instance_id.clone(),
        });
    }
    let sc_provenance = provenance(parsed_sc)?;
    let pq_provenance = provenance(parsed_pq)?;
    let sc = normalize(min_of(&parsed_sc.sub_scores)?)?;
    let pq = normalize(min_of(&parsed_pq.sub_scores)?)?;
    Ok(InstanceScore {
        instance_id: parsed_sc.instance_id.clone(),
        alpha: parsed_sc.sub_scores.clone(),
        beta: parsed_pq.sub_scores.clone(),
        sc,
        pq,
        overall: (sc * pq).sqrt(),
        sc_provenance,
        pq_provenance,
    })
}

/// One rater's pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RaterValue {
    Zero,
    Half,
    One,
}

impl RaterValue {
    pub const ALL: [RaterValue; 3] = [RaterValue::Zero, RaterValue::Half, RaterValue::One];

    pub fn from_f64(v: f64) -> Result<Self, ScoringError> {
        if v == 0.0 {
            Ok(RaterValue::Zero)
        } else if v == 0.5 {
            Ok(RaterValue::Half)
        } else if v == 1.0 {
            Ok(RaterValue::One)
        } else {
            Err(ScoringError::InvalidRaterValue(v))
        }
    }

    pub fn halves(self) -> u8 {
        match self {
            RaterValue::Zero => 0,
            RaterValue::Half => 1,
            RaterValue::One => 2,
        }
    }

    pub fn value(self) -> f64 {
        f64::from(self.halves()) / 2.0
    }
}

impl Serialize for RaterValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for RaterValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        RaterValue::from_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Mean of three rater values as an exact count of sixths (0..=6).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sixths(u8);

impl Sixths {
    pub fn numerator(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 6.0
    }
}

impl fmt::Display for Sixths {
    /// Two-decimal display, the only place rounding happens.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.value())
    }
}

/// Exact mean of three rater picks.
pub fn human_aggregate(values: [RaterValue; 3]) -> Sixths {
    Sixths(values.iter().map(|v| v.halves()).sum())
}

/// Same as [`human_aggregate`] but from raw numbers.
pub fn human_aggregate_f64(values: [f64; 3]) -> Result<Sixths, ScoringError> {
    let mut picks = [RaterValue::Zero; 3];
    for (slot, v) in picks.iter_mut().zip(values) {
        *slot = RaterValue::from_f64(v)?;
    }
    Ok(human_aggregate(picks))
}

/// Three raters' SC and PQ picks for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanRating {
    pub sc: [RaterValue; 3],
    pub pq: [RaterValue; 3],
}

impl HumanRating {
    pub fn sc_avg(&self) -> f64 {
        human_aggregate(self.sc).value()
    }

    pub fn pq_avg(&self) -> f64 {
        human_aggregate(self.pq).value()
    }

    /// Geometric mean of the exact SC and PQ averages.
    pub fn overall(&self) -> f64 {
        let s = f64::from(human_aggregate(self.sc).numerator());
        let p = f64::from(human_aggregate(self.pq).numerator());
        (s * p).sqrt() / 6.0
    }

    /// (sc, pq, overall) for one rater.
    pub fn rater(&self, k: usize) -> [f64; 3] {
        let sc = self.sc[k].value();
        let pq = self.pq[k].value();
        [sc, pq, (sc * pq).sqrt()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::AspectKind;
    use proptest::prelude::*;

    fn rating(id: &str, scores: &[f64], status: ParseStatus) -> ParsedRating {
        ParsedRating {
            instance_id: id.into(),
            aspect: AspectKind::Sc,
            sub_scores: scores.to_vec(),
            rationale: String::new(),
            status,
            raw_excerpt: String::new(),
            failure: None,
        }
    }

    #[test]
    fn overall_examples() {
        assert_eq!(overall_score(&[10.0, 10.0], &[10.0, 10.0]).unwrap(), 10.0);
        assert_eq!(overall_score(&[0.0, 9.0], &[10.0, 10.0]).unwrap(), 0.0);
        let v = overall_score(&[6.0, 8.0], &[5.0, 9.0]).unwrap();
        assert!((v - 30f64.sqrt()).abs() < 1e-15);
        assert!((v - 5.4772).abs() < 1e-4);
        assert_eq!(overall_score(&[], &[1.0]), Err(ScoringError::EmptySubScores));
        assert_eq!(overall_score(&[11.0], &[1.0]), Err(ScoringError::OutOfRange(11.0)));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(10.0).unwrap(), 1.0);
        assert_eq!(normalize(0.0).unwrap(), 0.0);
        assert!((normalize(5.4772).unwrap() - 0.54772).abs() < 1e-12);
        assert_eq!(normalize(11.0), Err(ScoringError::OutOfRange(11.0)));
        assert!(normalize(f64::NAN).is_err());
    }

    #[test]
    fn human_aggregate_examples() {
        let one_half_half = human_aggregate_f64([1.0, 0.5, 0.5]).unwrap();
        assert!((one_half_half.value() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(one_half_half.to_string(), "0.67");
        assert_eq!(human_aggregate_f64([0.0, 0.0, 0.0]).unwrap().value(), 0.0);
        assert_eq!(human_aggregate_f64([1.0, 0.0, 0.5]).unwrap().value(), 0.5);
        assert_eq!(human_aggregate_f64([1.0, 0.3, 0.5]), Err(ScoringError::InvalidRaterValue(0.3)));
    }

    #[test]
    fn human_aggregate_closure() {
        let mut shown = std::collections::BTreeSet::new();
        for a in RaterValue::ALL {
            for b in RaterValue::ALL {
                for c in RaterValue::ALL {
                    shown.insert(human_aggregate([a, b, c]).to_string());
                }
            }
        }
        let expected: std::collections::BTreeSet<String> =
            ["0.00", "0.17", "0.33", "0.50", "0.67", "0.83", "1.00"].iter().map(|s| s.to_string()).collect();
        assert_eq!(shown, expected);
    }

    #[test]
    fn human_overall_is_geometric_mean() {
        let h = HumanRating {
            sc: [RaterValue::One, RaterValue::Half, RaterValue::Half],
            pq: [RaterValue::One, RaterValue::One, RaterValue::Half],
        };
        assert!((h.overall() - (h.sc_avg() * h.pq_avg()).sqrt()).abs() < 1e-15);
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(json, r#"{"sc":[1.0,0.5,0.5],"pq":[1.0,1.0,0.5]}"#);
        assert_eq!(serde_json::from_str::<HumanRating>(&json).unwrap(), h);
        assert!(serde_json::from_str::<HumanRating>(r#"{"sc":[1,0.7,0],"pq":[1,1,1]}"#).is_err());
    }

    #[test]
    fn score_instance_examples() {
        let s = score_instance(
            &rating("u", &[7.0], ParseStatus::Parsed),
            &rating("u", &[8.0, 6.0], ParseStatus::Parsed),
        )
        .unwrap();
        assert!((s.sc - 0.7).abs() < 1e-15);
        assert!((s.pq - 0.6).abs() < 1e-15);
        assert!((s.overall - 0.42f64.sqrt()).abs() < 1e-12);
        assert!((s.overall - 0.6481).abs() < 1e-4);

        let z = score_instance(
            &rating("u", &[0.0], ParseStatus::PenaltyFilled),
            &rating("u", &[8.0, 6.0], ParseStatus::Parsed),
        )
        .unwrap();
        assert_eq!(z.overall, 0.0);
        assert_eq!(z.sc_provenance, Provenance::PenaltyFilled);

        assert_eq!(
            score_instance(&rating("u", &[], ParseStatus::Dropped), &rating("u", &[8.0, 6.0], ParseStatus::Parsed)),
            Err(ScoringError::DroppedInstance("u".into()))
        );
    }

    fn subscores() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..=10.0, 1..4)
    }

    proptest! {
        #[test]
        fn normalization_commutes(a in subscores(), b in subscores()) {
            let lhs = normalize(overall_score(&a, &b).unwrap()).unwrap();
            let min_a = a.iter().copied().fold(f64::INFINITY, f64::min);
            let min_b = b.iter().copied().fold(f64::INFINITY, f64::min);
            let rhs = (normalize(min_a).unwrap() * normalize(min_b).unwrap()).sqrt();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn raising_a_subscore_never_lowers_overall(a in subscores(), b in subscores(), i in 0usize..4, bump in 0.0f64..5.0) {
            let before = overall_score(&a, &b).unwrap();
            let mut raised = a.clone();
            let k = i % raised.len();
            raised[k] = (raised[k] + bump).min(10.0);
            prop_assert!(overall_score(&raised, &b).unwrap() >= before);
        }

        #[test]
        fn permutation_invariant(mut a in subscores(), mut b in subscores()) {
            let before = overall_score(&a, &b).unwrap();
            a.reverse();
            b.rotate_left(1);
            prop_assert_eq!(overall_score(&a, &b).unwrap(), before);
        }
    }
}
