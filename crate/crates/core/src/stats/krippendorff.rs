//! Krippendorff's alpha from the coincidence matrix.

use std::collections::BTreeMap;

use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Nominal,
    Interval,
}

impl Level {
    fn delta2(self, a: f64, b: f64) -> f64 {
        match self {
            Level::Nominal => f64::from(u8::from(a != b)),
            Level::Interval => (a - b) * (a - b),
        }
    }
}

/// `ratings[rater][unit]`; `None` marks a missing rating. Units rated by
/// fewer than two raters carry no pairable values and are ignored.
pub fn krippendorff_alpha(ratings: &[Vec<Option<f64>>], level: Level) -> Result<f64, StatsError> {
    let units = ratings.iter().map(Vec::len).max().unwrap_or(0);
    // Distinct values are keyed by their bit pattern; inputs are finite.
    let mut coincidence: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for u in 0..units {
        let values: Vec<f64> = ratings.iter().filter_map(|r| r.get(u).copied().flatten()).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        let m = values.len();
        if m < 2 {
            continue;
        }
        let w = 1.0 / (m - 1) as f64;
        for (i, a) in values.iter().enumerate() {
            for (j, b) in values.iter().enumerate() {
                if i != j {
                    *coincidence.entry((a.to_bits(), b.to_bits())).or_insert(0.0) += w;
                }
            }
        }
    }
    let mut marginals: BTreeMap<u64, f64> = BTreeMap::new();
    for (&(c, _), &o) in &coincidence {
        *marginals.entry(c).or_insert(0.0) += o;
    }
    let n: f64 = marginals.values().sum();
    if n < 2.0 || marginals.len() < 2 {
        return Err(StatsError::InsufficientOverlap);
    }
    let d = |a: u64, b: u64| level.delta2(f64::from_bits(a), f64::from_bits(b));
    let observed: f64 = coincidence.iter().map(|(&(c, k), &o)| o * d(c, k)).sum::<f64>() / n;
    let mut expected = 0.0;
    for (&c, &nc) in &marginals {
        for (&k, &nk) in &marginals {
            expected += nc * nk * d(c, k);
        }
    }
    expected /= n * (n - 1.0);
    Ok(1.0 - observed / expected)
}
