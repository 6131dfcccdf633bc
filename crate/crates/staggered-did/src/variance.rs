//! The five variance objects for the DID estimate: the exact randomization
//! variance, its conservative estimator, the cluster-robust sandwich, and
//! two cluster bootstraps, plus normal-approximation intervals.
//!
//! Everything is built on gamma-collapsed outcomes: `Y_i(a) = sum_t
//! gamma_{t,a} Y_it(a)` reduces each unit's path to one number per adoption
//! date, and the estimate is the sum of adoption-group means of these.

use serde::Serialize;

use crate::design::DesignCounts;
use crate::error::{Error, Result};
use crate::estimator::{did_estimate_via_ols, WeightTable};
use crate::numerics::{solve_linear_system, RngStream};
use crate::panel::{AdoptionDate, Panel, PotentialOutcomeTable};

use rand::Rng;

/// How many times a bootstrap replicate may redraw a degenerate resample
/// before giving up.
pub const BOOTSTRAP_REDRAW_CAP: usize = 100;

/// Gamma weights smaller than this are treated as a structurally absent
/// group when deciding whether a singleton group blocks variance
/// estimation.
const WEIGHTLESS_TOL: f64 = 1e-12;

/// Gamma-collapsed potential outcomes: one value per unit and adoption
/// date, plus their population means.
#[derive(Debug, Clone)]
pub struct CollapsedOutcomes {
    n_units: usize,
    n_periods: u32,
    // Unit-major, date index within unit.
    per_unit: Vec<f64>,
    means: Vec<f64>,
}

impl CollapsedOutcomes {
    /// `Y_i(a)`.
    #[inline]
    pub fn value(&self, unit: usize, date: AdoptionDate) -> f64 {
        self.per_unit[unit * (self.n_periods as usize + 1) + date.index(self.n_periods)]
    }

    /// Population mean of the collapsed outcome for `date`.
    #[inline]
    pub fn mean(&self, date: AdoptionDate) -> f64 {
        self.means[date.index(self.n_periods)]
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }
}

/// Collapse every unit's potential outcome path with the gamma weights.
pub fn collapse_population(
    pot: &PotentialOutcomeTable,
    weights: &WeightTable,
) -> CollapsedOutcomes {
    let t_max = pot.n_periods();
    let n_dates = t_max as usize + 1;
    let n = pot.n_units();
    let mut per_unit = vec![0.0f64; n * n_dates];
    let mut means = vec![0.0f64; n_dates];
    for i in 0..n {
        for date in AdoptionDate::all(t_max) {
            let mut v = 0.0;
            for t in 1..=t_max {
                v += weights.gamma(t, date) * pot.value(i, t, date);
            }
            per_unit[i * n_dates + date.index(t_max)] = v;
            means[date.index(t_max)] += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    CollapsedOutcomes { n_units: n, n_periods: t_max, per_unit, means }
}

/// Finite-population variance `S^2_a` of the collapsed outcome for `date`
/// (denominator `N - 1`).
pub fn s2_population(
    pot: &PotentialOutcomeTable,
    weights: &WeightTable,
    date: AdoptionDate,
) -> f64 {
    let c = collapse_population(pot, weights);
    s2_from_collapsed(&c, date)
}

fn s2_from_collapsed(c: &CollapsedOutcomes, date: AdoptionDate) -> f64 {
    let m = c.mean(date);
    let n = c.n_units();
    (0..n).map(|i| (c.value(i, date) - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// The plus-form pairwise spread `V^2_{a,a'}`: the variance of the sum of
/// the two centered collapsed outcomes.
pub fn v2_population(
    pot: &PotentialOutcomeTable,
    weights: &WeightTable,
    date_a: AdoptionDate,
    date_b: AdoptionDate,
) -> f64 {
    let c = collapse_population(pot, weights);
    v2_from_collapsed(&c, date_a, date_b)
}

fn v2_from_collapsed(c: &CollapsedOutcomes, date_a: AdoptionDate, date_b: AdoptionDate) -> f64 {
    let ma = c.mean(date_a);
    let mb = c.mean(date_b);
    let n = c.n_units();
    (0..n)
        .map(|i| ((c.value(i, date_a) - ma) + (c.value(i, date_b) - mb)).powi(2))
        .sum::<f64>()
        / (n - 1) as f64
}

/// The minus-form pairwise spread `S^2_{a,a'}`: the variance of the
/// difference of the two centered collapsed outcomes. Satisfies
/// `S^2_{aa'} + V^2_{aa'} = 2 S^2_a + 2 S^2_{a'}`.
pub fn s2_diff_population(
    pot: &PotentialOutcomeTable,
    weights: &WeightTable,
    date_a: AdoptionDate,
    date_b: AdoptionDate,
) -> f64 {
    let c = collapse_population(pot, weights);
    let ma = c.mean(date_a);
    let mb = c.mean(date_b);
    let n = c.n_units();
    (0..n)
        .map(|i| ((c.value(i, date_b) - mb) - (c.value(i, date_a) - ma)).powi(2))
        .sum::<f64>()
        / (n - 1) as f64
}

/// The exact randomization variance of the DID estimate for a known
/// population and fixed counts:
/// `sum_a S^2_a (1/N_a + (T-1)/N) - sum_{a<a'} V^2_{aa'} / N`.
///
/// Dates with no units carry exactly zero weight, so their `S^2` terms
/// vanish and the formula stays well defined.
pub fn exact_variance(pot: &PotentialOutcomeTable, counts: &DesignCounts) -> Result<f64> {
    if counts.n_units() != pot.n_units() || counts.n_periods() != pot.n_periods() {
        return Err(Error::DimensionMismatch("counts and table disagree on N or T".into()));
    }
    let weights = WeightTable::from_counts(counts)?;
    let c = collapse_population(pot, &weights);
    let n = pot.n_units() as f64;
    let t = pot.n_periods() as f64;
    let dates: Vec<AdoptionDate> = AdoptionDate::all(pot.n_periods()).collect();

    let mut variance = 0.0;
    let mut bound = 0.0;
    for &a in &dates {
        let s2 = s2_from_collapsed(&c, a);
        let n_a = counts.count(a);
        if n_a > 0 {
            variance += s2 * (1.0 / n_a as f64 + (t - 1.0) / n);
            bound += s2 / n_a as f64;
        } else {
            // A zero-count date has zero gamma weight everywhere, so its
            // collapsed outcomes are identically zero.
            debug_assert!(s2 == 0.0);
        }
    }
    for (k, &a) in dates.iter().enumerate() {
        for &b in &dates[(k + 1)..] {
            variance -= v2_from_collapsed(&c, a, b) / n;
        }
    }
    debug_assert!(
        variance <= bound + 1e-9 * (1.0 + bound.abs()),
        "exact variance {variance} exceeds its upper bound {bound}"
    );
    Ok(variance)
}

/// Collapse the observed outcomes of a panel with each unit's own adoption
/// date weights: `Y_i = sum_t gamma_{t,A_i} Y_it`.
fn collapse_observed(panel: &Panel, weights: &WeightTable) -> Vec<f64> {
    let t_max = panel.n_periods();
    panel
        .assignment()
        .dates()
        .iter()
        .enumerate()
        .map(|(i, date)| {
            (1..=t_max).map(|t| weights.gamma(t, *date) * panel.outcome(i, t)).sum()
        })
        .collect()
}

/// The conservative variance estimator: within-group sample variances of
/// the collapsed observed outcomes, `sum_a s^2_a / N_a`.
///
/// Its randomization expectation weakly exceeds the exact variance. Errors
/// when a group that carries weight has a single unit.
pub fn conservative_estimator(panel: &Panel) -> Result<f64> {
    let weights = WeightTable::from_counts(panel.assignment().counts())?;
    let collapsed = collapse_observed(panel, &weights);
    let t_max = panel.n_periods();
    let mut total = 0.0;
    for date in AdoptionDate::all(t_max) {
        let n_a = panel.assignment().counts().count(date);
        if n_a == 0 {
            continue;
        }
        let carries_weight =
            (1..=t_max).any(|t| weights.gamma(t, date).abs() > WEIGHTLESS_TOL);
        if n_a == 1 {
            if carries_weight {
                return Err(Error::DegenerateGroup { date: date.to_string() });
            }
            continue;
        }
        let members: Vec<f64> = panel
            .assignment()
            .dates()
            .iter()
            .enumerate()
            .filter(|(_, d)| **d == date)
            .map(|(i, _)| collapsed[i])
            .collect();
        let mean = members.iter().sum::<f64>() / n_a as f64;
        let s2 = members.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n_a - 1) as f64;
        total += s2 / n_a as f64;
    }
    debug_assert!(total >= 0.0);
    Ok(total)
}

/// Cluster-robust sandwich variance of the exposure coefficient from the
/// full dummy-variable regression, with unit-level score aggregation.
pub fn lz_variance(panel: &Panel) -> Result<f64> {
    let fit = did_estimate_via_ols(panel)?;
    let p = fit.n_columns();
    let n = panel.n_units();
    let t_max = panel.n_periods() as usize;

    // Last row of the inverse Gram, as a solve against the last unit vector.
    let mut e_last = vec![0.0f64; p];
    e_last[p - 1] = 1.0;
    let r = match solve_linear_system(&fit.gram, &e_last) {
        Ok(r) => r,
        Err(Error::SingularSystem { .. }) => return Err(Error::CollinearDesign),
        Err(e) => return Err(e),
    };

    // (tau, tau) element of A^{-1} B A^{-1} with B the sum of outer products
    // of per-unit score sums: sum_n (r . s_n)^2, using the sparse rows.
    let mut value = 0.0;
    for (i, date) in panel.assignment().dates().iter().enumerate() {
        let mut dot = 0.0;
        for t_idx in 0..t_max {
            let period = t_idx as u32 + 1;
            let eps = fit.residuals[i * t_max + t_idx];
            let mut row_dot = r[0];
            if i < n - 1 {
                row_dot += r[1 + i];
            }
            if t_idx < t_max - 1 {
                row_dot += r[n + t_idx];
            }
            if date.is_adopted_by(period) {
                row_dot += r[p - 1];
            }
            dot += row_dot * eps;
        }
        value += dot * dot;
    }
    debug_assert!(value >= 0.0);
    Ok(value)
}

/// The same sandwich computed after partialling out the two-way fixed
/// effects: scores are the adjusted treatment times the residual. Equals
/// [`lz_variance`] up to rounding.
pub fn lz_variance_partialled(panel: &Panel) -> Result<f64> {
    let weights = WeightTable::from_counts(panel.assignment().counts())?;
    let n = panel.n_units();
    let t_max = panel.n_periods();
    let t_len = t_max as usize;

    // Doubly demeaned outcomes.
    let mut row_mean = vec![0.0f64; n];
    let mut col_mean = vec![0.0f64; t_len];
    let mut grand = 0.0;
    for (i, rm) in row_mean.iter_mut().enumerate() {
        for t in 1..=t_max {
            let y = panel.outcome(i, t);
            *rm += y;
            col_mean[t as usize - 1] += y;
            grand += y;
        }
    }
    for m in &mut row_mean {
        *m /= t_len as f64;
    }
    for m in &mut col_mean {
        *m /= n as f64;
    }
    grand /= (n * t_len) as f64;

    let mut num = 0.0;
    let mut den = 0.0;
    for (i, date) in panel.assignment().dates().iter().enumerate() {
        for t in 1..=t_max {
            let w = weights.g(t, *date);
            num += w * panel.outcome(i, t);
            den += w * w;
        }
    }
    let tau = num / den;

    let mut value = 0.0;
    for (i, date) in panel.assignment().dates().iter().enumerate() {
        let mut score = 0.0;
        for t in 1..=t_max {
            let w = weights.g(t, *date);
            let demeaned =
                panel.outcome(i, t) - row_mean[i] - col_mean[t as usize - 1] + grand;
            score += w * (demeaned - tau * w);
        }
        value += score * score;
    }
    Ok(value / (den * den))
}

/// Estimate of the DID point value from per-date group sums of resampled
/// outcomes.
fn tau_from_group_sums(
    weights: &WeightTable,
    sums: &[f64],
    counts: &[usize],
    t_max: u32,
) -> f64 {
    let n_dates = t_max as usize + 1;
    let mut tau = 0.0;
    for date in AdoptionDate::all(t_max) {
        let a_idx = date.index(t_max);
        if counts[a_idx] == 0 {
            continue;
        }
        for t in 1..=t_max {
            let mean = sums[(t as usize - 1) * n_dates + a_idx] / counts[a_idx] as f64;
            tau += weights.gamma(t, date) * mean;
        }
    }
    tau
}

/// Unit-level cluster bootstrap: resample whole units with replacement and
/// recompute the estimate, with the gamma weights rebuilt from each
/// resample's realized shares. Degenerate resamples (no exposure
/// variation left) are redrawn, up to [`BOOTSTRAP_REDRAW_CAP`] attempts.
///
/// Returns the empirical variance of the replicate estimates (denominator
/// `reps - 1`).
pub fn bootstrap_b1(panel: &Panel, reps: usize, stream: RngStream) -> Result<f64> {
    bootstrap_b1_with_cap(panel, reps, BOOTSTRAP_REDRAW_CAP, stream)
}

/// [`bootstrap_b1`] with an explicit redraw cap per replicate.
pub fn bootstrap_b1_with_cap(
    panel: &Panel,
    reps: usize,
    redraw_cap: usize,
    stream: RngStream,
) -> Result<f64> {
    if reps < 2 {
        return Err(Error::Invalid("bootstrap needs at least 2 replicates".into()));
    }
    if redraw_cap == 0 {
        return Err(Error::Invalid("redraw cap must be positive".into()));
    }
    let n = panel.n_units();
    let t_max = panel.n_periods();
    let n_dates = t_max as usize + 1;
    let dates = panel.assignment().dates();

    let mut estimates = Vec::with_capacity(reps);
    let mut sums = vec![0.0f64; t_max as usize * n_dates];
    let mut counts = vec![0usize; n_dates];
    for k in 0..reps {
        let mut rng = stream.child(k as u64).rng();
        let mut done = false;
        for _attempt in 0..redraw_cap {
            sums.iter_mut().for_each(|v| *v = 0.0);
            counts.iter_mut().for_each(|v| *v = 0);
            for _ in 0..n {
                let pick = rng.random_range(0..n);
                let a_idx = dates[pick].index(t_max);
                counts[a_idx] += 1;
                for t in 1..=t_max {
                    sums[(t as usize - 1) * n_dates + a_idx] += panel.outcome(pick, t);
                }
            }
            let mut pairs = Vec::with_capacity(n_dates);
            for date in AdoptionDate::all(t_max) {
                pairs.push((date, counts[date.index(t_max)]));
            }
            let resample_counts = DesignCounts::new(t_max, &pairs)?;
            match WeightTable::from_counts(&resample_counts) {
                Ok(weights) => {
                    estimates.push(tau_from_group_sums(&weights, &sums, &counts, t_max));
                    done = true;
                    break;
                }
                Err(Error::NoExposureVariation) => continue,
                Err(e) => return Err(e),
            }
        }
        if !done {
            return Err(Error::BootstrapDegenerate { replicate: k, attempts: redraw_cap });
        }
    }
    Ok(sample_variance(&estimates))
}

/// Draw a within-stratum resample: for each adoption date, `N_a` units are
/// drawn with replacement from that date's units, so every count is
/// preserved exactly.
pub(crate) fn resample_within_strata<R: Rng + ?Sized>(
    strata: &[Vec<usize>],
    rng: &mut R,
) -> Vec<usize> {
    let mut picks = Vec::new();
    for members in strata {
        for _ in 0..members.len() {
            picks.push(members[rng.random_range(0..members.len())]);
        }
    }
    picks
}

/// Stratified cluster bootstrap: resample with replacement independently
/// within each adoption-date group, preserving every `N_a`. The original
/// weights apply verbatim since the shares cannot change.
pub fn bootstrap_b2(panel: &Panel, reps: usize, stream: RngStream) -> Result<f64> {
    if reps < 2 {
        return Err(Error::Invalid("bootstrap needs at least 2 replicates".into()));
    }
    let weights = WeightTable::from_counts(panel.assignment().counts())?;
    let t_max = panel.n_periods();
    let n_dates = t_max as usize + 1;
    let dates = panel.assignment().dates();

    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); n_dates];
    for (i, d) in dates.iter().enumerate() {
        strata[d.index(t_max)].push(i);
    }
    let strata: Vec<Vec<usize>> = strata.into_iter().filter(|s| !s.is_empty()).collect();

    let mut counts = vec![0usize; n_dates];
    for d in dates {
        counts[d.index(t_max)] += 1;
    }

    let mut estimates = Vec::with_capacity(reps);
    let mut sums = vec![0.0f64; t_max as usize * n_dates];
    for k in 0..reps {
        let mut rng = stream.child(k as u64).rng();
        sums.iter_mut().for_each(|v| *v = 0.0);
        for pick in resample_within_strata(&strata, &mut rng) {
            let a_idx = dates[pick].index(t_max);
            for t in 1..=t_max {
                sums[(t as usize - 1) * n_dates + a_idx] += panel.outcome(pick, t);
            }
        }
        estimates.push(tau_from_group_sums(&weights, &sums, &counts, t_max));
    }
    Ok(sample_variance(&estimates))
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Normal-approximation 95% interval: the point estimate plus and minus
/// 1.96 standard errors.
pub fn confidence_interval(tau_hat: f64, variance: f64) -> Result<(f64, f64)> {
    if variance < 0.0 {
        return Err(Error::NegativeVariance(variance));
    }
    let half = 1.96 * variance.sqrt();
    Ok((tau_hat - half, tau_hat + half))
}

/// The variance estimates available for one panel. The exact variance
/// needs the full potential-outcome table, so it is only present when the
/// population is known.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub v_exact: Option<f64>,
    pub v_did: f64,
    pub v_lz: f64,
    pub v_b1: f64,
    pub v_b2: f64,
}

/// Compute the four estimable variances for an observed panel.
pub fn estimate_all_variances(
    panel: &Panel,
    boot_reps: usize,
    stream: RngStream,
) -> Result<VarianceReport> {
    Ok(VarianceReport {
        v_exact: None,
        v_did: conservative_estimator(panel)?,
        v_lz: lz_variance(panel)?,
        v_b1: bootstrap_b1(panel, boot_reps, stream.child(1))?,
        v_b2: bootstrap_b2(panel, boot_reps, stream.child(2))?,
    })
}
