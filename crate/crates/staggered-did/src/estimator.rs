//! The two-way fixed-effects DID estimator and its design-based anatomy:
//! adoption shares, the adjusted treatment indicator, the gamma weights that
//! express the estimator as a weighted average of group means, the
//! three-term decomposition, and the population estimands it targets.

use crate::design::DesignCounts;
use crate::error::{Error, Result};
use crate::numerics::{solve_linear_system, SquareMatrix};
use crate::panel::{
    exposure, population_mean, AdoptionAssignment, AdoptionDate, Panel, PotentialOutcomeTable,
};

/// Below this normalizer the exposure matrix has no two-way variation and
/// the estimator is undefined.
const DEGENERACY_TOL: f64 = 1e-12;

/// Adoption-date shares `pi_a = N_a / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdoptionShares {
    n_periods: u32,
    shares: Vec<f64>,
}

impl AdoptionShares {
    /// Shares from explicit values, one per adoption date (`Never` last).
    pub fn new(n_periods: u32, shares: Vec<f64>) -> Result<Self> {
        if shares.len() != n_periods as usize + 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} shares, got {}",
                n_periods + 1,
                shares.len()
            )));
        }
        if shares.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Invalid("shares must be nonnegative".into()));
        }
        let total: f64 = shares.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("shares sum to {total}, expected 1")));
        }
        Ok(AdoptionShares { n_periods, shares })
    }

    pub fn from_counts(counts: &DesignCounts) -> Self {
        let n = counts.n_units() as f64;
        let shares = AdoptionDate::all(counts.n_periods())
            .map(|a| counts.count(a) as f64 / n)
            .collect();
        AdoptionShares { n_periods: counts.n_periods(), shares }
    }

    pub fn n_periods(&self) -> u32 {
        self.n_periods
    }

    /// `pi_a`.
    #[inline]
    pub fn share(&self, date: AdoptionDate) -> f64 {
        self.shares[date.index(self.n_periods)]
    }
}

/// Shares realized by an assignment. The counts are fixed by design, so
/// these are non-stochastic quantities, not estimates.
pub fn adoption_shares(assignment: &AdoptionAssignment) -> AdoptionShares {
    AdoptionShares::from_counts(assignment.counts())
}

/// The adjusted treatment `g(t, a)`: the exposure indicator after removing
/// unit and period averages, written in closed form in the shares.
pub fn adjusted_treatment(shares: &AdoptionShares, period: u32, date: AdoptionDate) -> f64 {
    let t_max = shares.n_periods();
    let cum_share: f64 = (1..=period).map(|s| shares.share(AdoptionDate::At(s))).sum();
    let mean_date: f64 =
        (1..=t_max).map(|s| s as f64 * shares.share(AdoptionDate::At(s))).sum();
    let never_share = shares.share(AdoptionDate::Never);
    let t = t_max as f64;
    let (w, date_value, is_never) = match date {
        AdoptionDate::At(a) => (exposure(date, period), a as f64, 0.0),
        AdoptionDate::Never => (0.0, 0.0, 1.0),
    };
    (w - cum_share) + (date_value - mean_date) / t + (t + 1.0) / t * (is_never - never_share)
}

/// The non-stochastic weight system behind the DID estimator.
///
/// `gamma(t, a) = pi_a g(t, a) / sum pi g^2` expresses the estimator as
/// `sum gamma(t, a) * Ybar_{t,a}`. The rows and columns of gamma sum to
/// zero, the exposed aggregate `gamma_plus` sums to one over periods, and
/// the unexposed aggregate `gamma_minus` sums to minus one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    shares: AdoptionShares,
    // Period-major tables, adoption-date index within period.
    g: Vec<f64>,
    gamma: Vec<f64>,
    gamma_plus: Vec<f64>,
    gamma_minus: Vec<f64>,
    denom: f64,
}

impl WeightTable {
    pub fn from_shares(shares: &AdoptionShares) -> Result<Self> {
        let t_max = shares.n_periods();
        let n_dates = t_max as usize + 1;
        let mut g = vec![0.0; t_max as usize * n_dates];
        let mut denom = 0.0;
        for period in 1..=t_max {
            for date in AdoptionDate::all(t_max) {
                let v = adjusted_treatment(shares, period, date);
                g[(period as usize - 1) * n_dates + date.index(t_max)] = v;
                denom += shares.share(date) * v * v;
            }
        }
        if denom <= DEGENERACY_TOL {
            return Err(Error::NoExposureVariation);
        }
        let mut gamma = vec![0.0; g.len()];
        for period in 1..=t_max {
            for date in AdoptionDate::all(t_max) {
                let idx = (period as usize - 1) * n_dates + date.index(t_max);
                let v = shares.share(date) * g[idx] / denom;
                // Normalize the negative zeros that zero-share dates produce.
                gamma[idx] = if v == 0.0 { 0.0 } else { v };
            }
        }
        let mut gamma_plus = vec![0.0; t_max as usize];
        let mut gamma_minus = vec![0.0; t_max as usize];
        for period in 1..=t_max {
            let row = (period as usize - 1) * n_dates;
            for date in AdoptionDate::all(t_max) {
                let v = gamma[row + date.index(t_max)];
                if date.is_adopted_by(period) {
                    gamma_plus[period as usize - 1] += v;
                } else {
                    gamma_minus[period as usize - 1] += v;
                }
            }
        }
        Ok(WeightTable { shares: shares.clone(), g, gamma, gamma_plus, gamma_minus, denom })
    }

    pub fn from_counts(counts: &DesignCounts) -> Result<Self> {
        Self::from_shares(&AdoptionShares::from_counts(counts))
    }

    pub fn n_periods(&self) -> u32 {
        self.shares.n_periods()
    }

    pub fn shares(&self) -> &AdoptionShares {
        &self.shares
    }

    #[inline]
    fn idx(&self, period: u32, date: AdoptionDate) -> usize {
        let n_dates = self.n_periods() as usize + 1;
        (period as usize - 1) * n_dates + date.index(self.n_periods())
    }

    /// `g(t, a)`.
    #[inline]
    pub fn g(&self, period: u32, date: AdoptionDate) -> f64 {
        self.g[self.idx(period, date)]
    }

    /// `gamma_{t,a}`.
    #[inline]
    pub fn gamma(&self, period: u32, date: AdoptionDate) -> f64 {
        self.gamma[self.idx(period, date)]
    }

    /// `gamma_{t,+}`: total weight on dates adopted by `period`.
    pub fn gamma_plus(&self, period: u32) -> f64 {
        self.gamma_plus[period as usize - 1]
    }

    /// `gamma_{t,-}`: total weight on dates not yet adopted at `period`.
    pub fn gamma_minus(&self, period: u32) -> f64 {
        self.gamma_minus[period as usize - 1]
    }

    /// The normalizer `sum_{t,a} pi_a g(t,a)^2`.
    pub fn denom(&self) -> f64 {
        self.denom
    }
}

/// The DID point estimate in closed form: the ratio of the adjusted
/// treatment's inner products with the outcomes and with itself.
pub fn did_estimate(panel: &Panel) -> Result<f64> {
    let weights = WeightTable::from_counts(panel.assignment().counts())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, date) in panel.assignment().dates().iter().enumerate() {
        for t in 1..=panel.n_periods() {
            let w = weights.g(t, *date);
            num += w * panel.outcome(i, t);
            den += w * w;
        }
    }
    Ok(num / den)
}

/// The same estimate as the gamma-weighted combination of adoption-group
/// period means. Agrees with [`did_estimate`] on every panel.
pub fn did_estimate_via_weights(panel: &Panel) -> Result<f64> {
    let weights = WeightTable::from_counts(panel.assignment().counts())?;
    let means = group_mean_table(panel);
    let n_dates = panel.n_periods() as usize + 1;
    let mut tau = 0.0;
    for t in 1..=panel.n_periods() {
        for date in AdoptionDate::all(panel.n_periods()) {
            tau += weights.gamma(t, date)
                * means[(t as usize - 1) * n_dates + date.index(panel.n_periods())];
        }
    }
    Ok(tau)
}

fn group_mean_table(panel: &Panel) -> Vec<f64> {
    let t_max = panel.n_periods();
    let n_dates = t_max as usize + 1;
    let mut sums = vec![0.0f64; t_max as usize * n_dates];
    for (i, date) in panel.assignment().dates().iter().enumerate() {
        let a_idx = date.index(t_max);
        for t in 1..=t_max {
            sums[(t as usize - 1) * n_dates + a_idx] += panel.outcome(i, t);
        }
    }
    for date in AdoptionDate::all(t_max) {
        let count = panel.assignment().counts().count(date);
        let a_idx = date.index(t_max);
        for t in 1..=t_max {
            let cell = &mut sums[(t as usize - 1) * n_dates + a_idx];
            *cell = if count == 0 { 0.0 } else { *cell / count as f64 };
        }
    }
    sums
}

/// The estimate split into its three weighted averages of group contrasts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    /// Weighted average of never-versus-first-period contrasts; the term
    /// that compares exposed to unexposed outcomes. Its weights sum to one.
    pub term_current: f64,
    /// Weighted sum of contrasts between not-yet-adopted dates, none of
    /// which is exposed at the time.
    pub term_future: f64,
    /// Weighted sum (entering negatively) of contrasts between
    /// already-adopted dates, all of which are exposed at the time.
    pub term_past: f64,
    /// Sum of the three terms; equals the DID point estimate.
    pub total: f64,
}

/// Split the estimate into current, future-adoption, and past-adoption
/// contrast terms.
pub fn decompose(panel: &Panel) -> Result<Decomposition> {
    let weights = WeightTable::from_counts(panel.assignment().counts())?;
    let t_max = panel.n_periods();
    let never = AdoptionDate::Never;
    let first = AdoptionDate::At(1);

    let mut term_current = 0.0;
    let mut term_future = 0.0;
    let mut term_past = 0.0;
    for t in 1..=t_max {
        term_current += weights.gamma_plus(t) * crate::panel::tau_hat(panel, t, never, first);
        for a in (t + 1)..=t_max {
            let date = AdoptionDate::At(a);
            term_future += weights.gamma(t, date) * crate::panel::tau_hat(panel, t, never, date);
        }
        for a in 1..=t {
            let date = AdoptionDate::At(a);
            term_past -= weights.gamma(t, date) * crate::panel::tau_hat(panel, t, date, first);
        }
    }
    let total = term_current + term_future + term_past;
    Ok(Decomposition { term_current, term_future, term_past, total })
}

/// A fitted two-way fixed-effects regression.
#[derive(Debug, Clone)]
pub struct TwoWayOlsFit {
    /// Least-squares coefficient on the exposure indicator.
    pub tau: f64,
    /// Fitted residuals, unit-major `N x T`.
    pub residuals: Vec<f64>,
    pub(crate) theta: Vec<f64>,
    pub(crate) gram: SquareMatrix,
}

impl TwoWayOlsFit {
    /// Number of regression columns: intercept, `N - 1` unit dummies,
    /// `T - 1` period dummies, and the exposure indicator.
    pub(crate) fn n_columns(&self) -> usize {
        self.theta.len()
    }
}

/// Fit the two-way fixed-effects least-squares regression of outcomes on
/// unit dummies, period dummies, and the exposure indicator (last unit and
/// last period are the dropped references). The coefficient on exposure
/// equals the closed-form DID estimate.
pub fn did_estimate_via_ols(panel: &Panel) -> Result<TwoWayOlsFit> {
    // The only rank deficiency this fixed dummy design admits is exposure
    // collinearity; detect it up front for the clearer error.
    WeightTable::from_counts(panel.assignment().counts())?;

    let n = panel.n_units();
    let t_max = panel.n_periods() as usize;
    let p = n + t_max;
    let w_col = p - 1;
    let mut gram = SquareMatrix::zeros(p);
    let mut xty = vec![0.0f64; p];

    let mut cols: Vec<usize> = Vec::with_capacity(4);
    for (i, date) in panel.assignment().dates().iter().enumerate() {
        for t_idx in 0..t_max {
            let period = t_idx as u32 + 1;
            cols.clear();
            cols.push(0);
            if i < n - 1 {
                cols.push(1 + i);
            }
            if t_idx < t_max - 1 {
                cols.push(n + t_idx);
            }
            if date.is_adopted_by(period) {
                cols.push(w_col);
            }
            let y = panel.outcome(i, period);
            for &c in &cols {
                xty[c] += y;
                for &c2 in &cols {
                    gram.set(c, c2, gram.get(c, c2) + 1.0);
                }
            }
        }
    }

    let theta = match solve_linear_system(&gram, &xty) {
        Ok(theta) => theta,
        Err(Error::SingularSystem { .. }) => return Err(Error::CollinearDesign),
        Err(e) => return Err(e),
    };

    let mut residuals = Vec::with_capacity(n * t_max);
    for (i, date) in panel.assignment().dates().iter().enumerate() {
        for t_idx in 0..t_max {
            let period = t_idx as u32 + 1;
            let mut fitted = theta[0];
            if i < n - 1 {
                fitted += theta[1 + i];
            }
            if t_idx < t_max - 1 {
                fitted += theta[n + t_idx];
            }
            fitted += theta[w_col] * exposure(*date, period);
            residuals.push(panel.outcome(i, period) - fitted);
        }
    }

    Ok(TwoWayOlsFit { tau: theta[w_col], residuals, theta, gram })
}

/// Which causal interpretation of the estimand to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimandMode {
    /// The unconditional randomization expectation: a weighted combination
    /// of all three contrast families.
    Full,
    /// Under no anticipation: a weighted average of never-versus-adopted
    /// contrasts for already-adopted dates.
    NoAnticipation,
    /// Under both exclusion restrictions: a weighted average of the
    /// never-versus-first-period effects.
    Binary,
}

/// The population quantity the estimator targets under random adoption
/// dates, evaluated on a known potential-outcome table.
pub fn expected_estimand(
    pot: &PotentialOutcomeTable,
    shares: &AdoptionShares,
    mode: EstimandMode,
) -> Result<f64> {
    if shares.n_periods() != pot.n_periods() {
        return Err(Error::DimensionMismatch("shares and table disagree on T".into()));
    }
    let weights = WeightTable::from_shares(shares)?;
    let t_max = pot.n_periods();
    let never = AdoptionDate::Never;
    let first = AdoptionDate::At(1);
    let tau = |t: u32, from: AdoptionDate, to: AdoptionDate| {
        population_mean(pot, t, to) - population_mean(pot, t, from)
    };

    let value = match mode {
        EstimandMode::Full => {
            let mut v = 0.0;
            for t in 1..=t_max {
                v += weights.gamma_plus(t) * tau(t, never, first);
                for a in (t + 1)..=t_max {
                    v += weights.gamma(t, AdoptionDate::At(a)) * tau(t, never, AdoptionDate::At(a));
                }
                for a in 1..=t {
                    v -= weights.gamma(t, AdoptionDate::At(a)) * tau(t, AdoptionDate::At(a), first);
                }
            }
            v
        }
        EstimandMode::NoAnticipation => {
            let mut v = 0.0;
            for t in 1..=t_max {
                for a in 1..=t {
                    v += weights.gamma(t, AdoptionDate::At(a)) * tau(t, never, AdoptionDate::At(a));
                }
            }
            v
        }
        EstimandMode::Binary => {
            (1..=t_max).map(|t| weights.gamma_plus(t) * tau(t, never, first)).sum()
        }
    };
    Ok(value)
}
