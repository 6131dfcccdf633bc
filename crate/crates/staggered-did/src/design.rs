//! The assignment mechanism: uniform draws of adoption-date vectors with
//! fixed per-date counts, exhaustive enumeration of the assignment support,
//! and an oracle that computes exact randomization moments by brute force on
//! small populations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimator::WeightTable;
use crate::numerics::shuffle_multiset;
use crate::panel::{AdoptionAssignment, AdoptionDate, PotentialOutcomeTable};

/// Maximum number of assignment vectors the enumerator will generate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Per-adoption-date unit counts `N_a`, the fixed quantities of the design.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignCounts {
    n_periods: u32,
    // Indexed by adoption-date index; length n_periods + 1.
    counts: Vec<usize>,
}

impl DesignCounts {
    /// Build from explicit `(date, count)` pairs; unmentioned dates get zero.
    pub fn new(n_periods: u32, pairs: &[(AdoptionDate, usize)]) -> Result<Self> {
        let mut counts = vec![0usize; n_periods as usize + 1];
        for (date, count) in pairs {
            if let AdoptionDate::At(a) = date {
                if *a < 1 || *a > n_periods {
                    return Err(Error::Invalid(format!(
                        "adoption date {a} outside 1..={n_periods}"
                    )));
                }
            }
            counts[date.index(n_periods)] += count;
        }
        let dc = DesignCounts { n_periods, counts };
        if dc.n_units() == 0 {
            return Err(Error::Invalid("design counts must cover at least one unit".into()));
        }
        Ok(dc)
    }

    /// Tally the counts realized by a concrete date vector.
    pub fn from_dates(n_periods: u32, dates: &[AdoptionDate]) -> Self {
        let mut counts = vec![0usize; n_periods as usize + 1];
        for d in dates {
            counts[d.index(n_periods)] += 1;
        }
        DesignCounts { n_periods, counts }
    }

    pub fn n_periods(&self) -> u32 {
        self.n_periods
    }

    pub fn n_units(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `N_a`.
    pub fn count(&self, date: AdoptionDate) -> usize {
        self.counts[date.index(self.n_periods)]
    }

    /// `(a, N_a)` over all adoption dates, finite dates first then `Never`.
    pub fn iter(&self) -> impl Iterator<Item = (AdoptionDate, usize)> + '_ {
        AdoptionDate::all(self.n_periods).map(move |a| (a, self.count(a)))
    }

    /// The date vector with units grouped by date in date order; the
    /// lexicographically smallest arrangement.
    fn sorted_dates(&self) -> Vec<AdoptionDate> {
        let mut out = Vec::with_capacity(self.n_units());
        for (date, count) in self.iter() {
            out.extend(std::iter::repeat_n(date, count));
        }
        out
    }
}

/// Draw one assignment uniformly from all arrangements with the given
/// counts.
pub fn sample_assignment<R: Rng + ?Sized>(
    counts: &DesignCounts,
    rng: &mut R,
) -> AdoptionAssignment {
    let dates = shuffle_multiset(&counts.sorted_dates(), rng);
    AdoptionAssignment::new(dates, counts.n_periods())
        .expect("counts produce a valid assignment")
}

/// Number of distinct assignment vectors, `N! / prod_a N_a!`, saturating at
/// `u128::MAX`.
pub fn arrangement_count(counts: &DesignCounts) -> u128 {
    let mut total: u128 = 1;
    let mut remaining = counts.n_units() as u128;
    for (_, count) in counts.iter() {
        let mut choose: u128 = 1;
        for i in 1..=(count as u128) {
            choose = match choose.checked_mul(remaining - (count as u128) + i) {
                Some(v) => v / i,
                None => return u128::MAX,
            };
        }
        total = match total.checked_mul(choose) {
            Some(v) => v,
            None => return u128::MAX,
        };
        remaining -= count as u128;
    }
    total
}

/// Iterator over every distinct assignment with the given counts, in
/// lexicographic order.
pub struct AssignmentEnumerator {
    n_periods: u32,
    current: Option<Vec<AdoptionDate>>,
}

impl Iterator for AssignmentEnumerator {
    type Item = AdoptionAssignment;

    fn next(&mut self) -> Option<AdoptionAssignment> {
        let dates = self.current.take()?;
        let item = AdoptionAssignment::new(dates.clone(), self.n_periods)
            .expect("enumerated dates are valid");
        self.current = next_permutation(dates);
        Some(item)
    }
}

/// Standard next-permutation step; `None` once the sequence is
/// non-increasing.
fn next_permutation(mut v: Vec<AdoptionDate>) -> Option<Vec<AdoptionDate>> {
    if v.len() < 2 {
        return None;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return None;
    }
    let pivot = i - 1;
    let mut j = v.len() - 1;
    while v[j] <= v[pivot] {
        j -= 1;
    }
    v.swap(pivot, j);
    v[i..].reverse();
    Some(v)
}

/// Enumerate the assignment support, guarded against supports with more than
/// [`ENUMERATION_LIMIT`] vectors.
pub fn enumerate_assignments(counts: &DesignCounts) -> Result<AssignmentEnumerator> {
    let arrangements = arrangement_count(counts);
    if arrangements > ENUMERATION_LIMIT {
        return Err(Error::SupportTooLarge { arrangements, limit: ENUMERATION_LIMIT });
    }
    Ok(AssignmentEnumerator { n_periods: counts.n_periods(), current: Some(counts.sorted_dates()) })
}

/// Exact randomization moments of the DID estimator, by enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleMoments {
    /// Exact expectation of the estimator over the uniform support.
    pub mean: f64,
    /// Exact variance (population form) over the uniform support.
    pub variance: f64,
}

/// Compute the exact mean and variance of the DID estimate over every
/// admissible assignment. This is the ground truth the closed-form estimand
/// and variance formulas are checked against.
pub fn oracle_moments(pot: &PotentialOutcomeTable, counts: &DesignCounts) -> Result<OracleMoments> {
    if counts.n_units() != pot.n_units() || counts.n_periods() != pot.n_periods() {
        return Err(Error::DimensionMismatch(format!(
            "counts are for {} units x {} periods, table is {}x{}",
            counts.n_units(),
            counts.n_periods(),
            pot.n_units(),
            pot.n_periods()
        )));
    }
    // The weights depend only on the counts, so they are shared by every
    // assignment in the support.
    let weights = WeightTable::from_counts(counts)?;
    let n_periods = pot.n_periods();
    let n_dates = n_periods as usize + 1;
    let mut taus = Vec::new();

    let mut group_sums = vec![0.0f64; n_periods as usize * n_dates];
    for assignment in enumerate_assignments(counts)? {
        group_sums.iter_mut().for_each(|v| *v = 0.0);
        for (i, date) in assignment.dates().iter().enumerate() {
            let a_idx = date.index(n_periods);
            for t in 1..=n_periods {
                group_sums[(t as usize - 1) * n_dates + a_idx] += pot.value(i, t, *date);
            }
        }
        let mut tau = 0.0;
        for (date, count) in counts.iter() {
            if count == 0 {
                continue;
            }
            let a_idx = date.index(n_periods);
            for t in 1..=n_periods {
                let mean = group_sums[(t as usize - 1) * n_dates + a_idx] / count as f64;
                tau += weights.gamma(t, date) * mean;
            }
        }
        taus.push(tau);
    }

    let m = taus.len() as f64;
    let mean = taus.iter().sum::<f64>() / m;
    let variance = taus.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / m;
    Ok(OracleMoments { mean, variance })
}

/// The three-term variance of a two-period difference in means, valid when
/// only period-2 adopters and never-adopters exist and first-period
/// potential outcomes are identically zero. Specializes the general exact
/// variance to the classical completely randomized experiment.
pub fn neyman_two_period_variance(
    pot: &PotentialOutcomeTable,
    counts: &DesignCounts,
) -> Result<f64> {
    if pot.n_periods() != 2 || counts.n_periods() != 2 {
        return Err(Error::Invalid("two-period specialization requires T = 2".into()));
    }
    if counts.n_units() != pot.n_units() {
        return Err(Error::DimensionMismatch("counts and table disagree on N".into()));
    }
    let n2 = counts.count(AdoptionDate::At(2));
    let ninf = counts.count(AdoptionDate::Never);
    if counts.count(AdoptionDate::At(1)) != 0 || n2 == 0 || ninf == 0 {
        return Err(Error::Invalid(
            "two-period specialization requires support {2, never}".into(),
        ));
    }
    let n = pot.n_units();
    for i in 0..n {
        for a in AdoptionDate::all(2) {
            if pot.value(i, 1, a) != 0.0 {
                return Err(Error::Invalid(
                    "two-period specialization requires first-period potential outcomes to be zero"
                        .into(),
                ));
            }
        }
    }

    let treated: Vec<f64> = (0..n).map(|i| pot.value(i, 2, AdoptionDate::At(2))).collect();
    let control: Vec<f64> = (0..n).map(|i| pot.value(i, 2, AdoptionDate::Never)).collect();
    let mean_t = treated.iter().sum::<f64>() / n as f64;
    let mean_c = control.iter().sum::<f64>() / n as f64;
    let denom = (n - 1) as f64;

    let s2_t: f64 = treated.iter().map(|y| (y - mean_t).powi(2)).sum::<f64>() / denom;
    let s2_c: f64 = control.iter().map(|y| (y - mean_c).powi(2)).sum::<f64>() / denom;
    let s2_effect: f64 = treated
        .iter()
        .zip(&control)
        .map(|(yt, yc)| ((yt - mean_t) - (yc - mean_c)).powi(2))
        .sum::<f64>()
        / denom;

    Ok(s2_t / n2 as f64 + s2_c / ninf as f64 - s2_effect / n as f64)
}
