//! The finite-population data model: potential outcomes indexed by adoption
//! date, realized panels, checkers for the identifying assumptions, and the
//! permutation pretest.
//!
//! The population is a fixed table of potential outcomes `Y_it(a)` for every
//! unit `i`, period `t`, and adoption date `a`. Only the assignment of
//! adoption dates is random; realized data are a pure lookup into the table.

use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rand::Rng;

use crate::design::DesignCounts;
use crate::error::{Error, Result};
use crate::numerics::shuffle_multiset;

/// Default tolerance for the exact-equality assumption checkers.
pub const DEFAULT_CHECK_TOL: f64 = 1e-12;

/// First period a unit is exposed to the treatment; `Never` means the unit
/// does not adopt within the observation window.
///
/// `Never` orders above every finite date, so `a > t` comparisons read the
/// way they are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AdoptionDate {
    /// Adoption in the given period (1-based, at most the panel length).
    At(u32),
    /// No adoption during the window.
    Never,
}

impl AdoptionDate {
    /// Whether a unit with this adoption date is exposed in `period`
    /// (adoption on or before the period).
    #[inline]
    pub fn is_adopted_by(self, period: u32) -> bool {
        match self {
            AdoptionDate::At(a) => a <= period,
            AdoptionDate::Never => false,
        }
    }

    /// Dense index used for table storage: finite dates map to `0..T`,
    /// `Never` to `T`.
    #[inline]
    pub fn index(self, n_periods: u32) -> usize {
        match self {
            AdoptionDate::At(a) => {
                debug_assert!(a >= 1 && a <= n_periods);
                (a - 1) as usize
            }
            AdoptionDate::Never => n_periods as usize,
        }
    }

    pub fn from_index(index: usize, n_periods: u32) -> AdoptionDate {
        if index == n_periods as usize {
            AdoptionDate::Never
        } else {
            AdoptionDate::At(index as u32 + 1)
        }
    }

    /// All adoption dates for a `T`-period panel: `1, ..., T, Never`.
    pub fn all(n_periods: u32) -> impl Iterator<Item = AdoptionDate> {
        (1..=n_periods).map(AdoptionDate::At).chain(std::iter::once(AdoptionDate::Never))
    }

    /// Parse the CSV literal form: a positive integer or `never`.
    pub fn parse(s: &str) -> Option<AdoptionDate> {
        if s == "never" {
            Some(AdoptionDate::Never)
        } else {
            s.parse::<u32>().ok().filter(|a| *a >= 1).map(AdoptionDate::At)
        }
    }
}

impl fmt::Display for AdoptionDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdoptionDate::At(a) => write!(f, "{a}"),
            AdoptionDate::Never => write!(f, "never"),
        }
    }
}

/// Exposure indicator `W(a, t)`: 1.0 when `a` is on or before `t`.
#[inline]
pub fn exposure(date: AdoptionDate, period: u32) -> f64 {
    if date.is_adopted_by(period) {
        1.0
    } else {
        0.0
    }
}

/// Fixed population of potential outcomes `Y_it(a)` for all units, periods,
/// and adoption dates (including `Never`).
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeTable {
    n_units: usize,
    n_periods: u32,
    // Layout: unit-major, then period, then adoption-date index.
    values: Vec<f64>,
}

impl PotentialOutcomeTable {
    /// Build from a closure giving `Y_it(a)`.
    pub fn from_fn<F>(n_units: usize, n_periods: u32, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, u32, AdoptionDate) -> f64,
    {
        if n_units < 2 {
            return Err(Error::Invalid("potential outcome table needs at least 2 units".into()));
        }
        if n_periods < 1 {
            return Err(Error::Invalid("potential outcome table needs at least 1 period".into()));
        }
        let t = n_periods as usize;
        let mut values = Vec::with_capacity(n_units * t * (t + 1));
        for i in 0..n_units {
            for period in 1..=n_periods {
                for a in AdoptionDate::all(n_periods) {
                    let v = f(i, period, a);
                    if !v.is_finite() {
                        return Err(Error::Invalid(format!(
                            "potential outcome Y[{i},{period},{a}] is not finite"
                        )));
                    }
                    values.push(v);
                }
            }
        }
        Ok(PotentialOutcomeTable { n_units, n_periods, values })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> u32 {
        self.n_periods
    }

    #[inline]
    fn offset(&self, unit: usize, period: u32, date: AdoptionDate) -> usize {
        let t = self.n_periods as usize;
        let stride = t + 1;
        unit * t * stride + (period as usize - 1) * stride + date.index(self.n_periods)
    }

    /// `Y_it(a)`.
    #[inline]
    pub fn value(&self, unit: usize, period: u32, date: AdoptionDate) -> f64 {
        self.values[self.offset(unit, period, date)]
    }

    /// Overwrite one entry; used to plant violations in tests and examples.
    pub fn set_value(&mut self, unit: usize, period: u32, date: AdoptionDate, value: f64) {
        let o = self.offset(unit, period, date);
        self.values[o] = value;
    }
}

/// A realized vector of adoption dates together with its per-date counts.
///
/// The counts are the fixed design quantities of the random-adoption
/// assumption: every admissible assignment shares them.
#[derive(Debug, Clone, PartialEq)]
pub struct AdoptionAssignment {
    dates: Vec<AdoptionDate>,
    counts: DesignCounts,
}

impl AdoptionAssignment {
    pub fn new(dates: Vec<AdoptionDate>, n_periods: u32) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::Invalid("assignment must cover at least one unit".into()));
        }
        for (i, d) in dates.iter().enumerate() {
            if let AdoptionDate::At(a) = d {
                if *a < 1 || *a > n_periods {
                    return Err(Error::Invalid(format!(
                        "unit {i}: adoption date {a} outside 1..={n_periods}"
                    )));
                }
            }
        }
        let counts = DesignCounts::from_dates(n_periods, &dates);
        Ok(AdoptionAssignment { dates, counts })
    }

    pub fn dates(&self) -> &[AdoptionDate] {
        &self.dates
    }

    pub fn counts(&self) -> &DesignCounts {
        &self.counts
    }

    pub fn n_units(&self) -> usize {
        self.dates.len()
    }

    pub fn n_periods(&self) -> u32 {
        self.counts.n_periods()
    }
}

/// Realized outcomes plus the assignment that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    // Unit-major N x T outcomes.
    y: Vec<f64>,
    assignment: AdoptionAssignment,
}

impl Panel {
    /// Build from unit-major realized outcomes (`n_units * n_periods` values).
    pub fn new(y: Vec<f64>, assignment: AdoptionAssignment) -> Result<Self> {
        let expected = assignment.n_units() * assignment.n_periods() as usize;
        if y.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "outcomes have {} entries, expected {expected}",
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("outcomes must be finite".into()));
        }
        Ok(Panel { y, assignment })
    }

    pub fn n_units(&self) -> usize {
        self.assignment.n_units()
    }

    pub fn n_periods(&self) -> u32 {
        self.assignment.n_periods()
    }

    pub fn assignment(&self) -> &AdoptionAssignment {
        &self.assignment
    }

    /// `Y_it`.
    #[inline]
    pub fn outcome(&self, unit: usize, period: u32) -> f64 {
        self.y[unit * self.n_periods() as usize + (period as usize - 1)]
    }
}

/// Realize a panel from a potential outcome table: `Y_it = Y_it(A_i)`.
pub fn realize(pot: &PotentialOutcomeTable, assignment: &AdoptionAssignment) -> Result<Panel> {
    if assignment.n_units() != pot.n_units() || assignment.n_periods() != pot.n_periods() {
        return Err(Error::DimensionMismatch(format!(
            "assignment is {}x{}, table is {}x{}",
            assignment.n_units(),
            assignment.n_periods(),
            pot.n_units(),
            pot.n_periods()
        )));
    }
    let t = pot.n_periods();
    let mut y = Vec::with_capacity(pot.n_units() * t as usize);
    for (i, date) in assignment.dates().iter().enumerate() {
        for period in 1..=t {
            y.push(pot.value(i, period, *date));
        }
    }
    Panel::new(y, assignment.clone())
}

/// Observed group mean of `Y_it` over units with adoption date `a`; zero by
/// convention when the group is empty.
pub fn group_mean(panel: &Panel, period: u32, date: AdoptionDate) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, d) in panel.assignment().dates().iter().enumerate() {
        if *d == date {
            sum += panel.outcome(i, period);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Population average of the potential outcome in `period` under adoption
/// date `date`.
pub fn population_mean(pot: &PotentialOutcomeTable, period: u32, date: AdoptionDate) -> f64 {
    let mut sum = 0.0;
    for i in 0..pot.n_units() {
        sum += pot.value(i, period, date);
    }
    sum / pot.n_units() as f64
}

/// Average causal effect of adoption date `to` relative to `from` on the
/// period-`period` outcome.
pub fn tau_population(
    pot: &PotentialOutcomeTable,
    period: u32,
    from: AdoptionDate,
    to: AdoptionDate,
) -> f64 {
    population_mean(pot, period, to) - population_mean(pot, period, from)
}

/// Difference of observed group means, the sample analogue of
/// [`tau_population`].
pub fn tau_hat(panel: &Panel, period: u32, from: AdoptionDate, to: AdoptionDate) -> f64 {
    group_mean(panel, period, to) - group_mean(panel, period, from)
}

/// An entry of the table that breaks one of the exclusion restrictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExclusionViolation {
    pub unit: usize,
    pub period: u32,
    pub date: AdoptionDate,
    pub deviation: f64,
}

/// No-anticipation check: for every `a > t`, `Y_it(a)` must equal
/// `Y_it(Never)` within `tol`. Returns all offending entries.
pub fn check_no_anticipation(pot: &PotentialOutcomeTable, tol: f64) -> Vec<ExclusionViolation> {
    let mut out = Vec::new();
    for i in 0..pot.n_units() {
        for t in 1..=pot.n_periods() {
            for a in (t + 1)..=pot.n_periods() {
                let date = AdoptionDate::At(a);
                let dev = pot.value(i, t, date) - pot.value(i, t, AdoptionDate::Never);
                if dev.abs() > tol {
                    out.push(ExclusionViolation { unit: i, period: t, date, deviation: dev });
                }
            }
        }
    }
    out
}

/// Invariance-to-history check: for every `a <= t`, `Y_it(a)` must equal
/// `Y_it(1)` within `tol`.
pub fn check_invariance_to_history(
    pot: &PotentialOutcomeTable,
    tol: f64,
) -> Vec<ExclusionViolation> {
    let mut out = Vec::new();
    for i in 0..pot.n_units() {
        for t in 1..=pot.n_periods() {
            for a in 1..=t {
                let date = AdoptionDate::At(a);
                let dev = pot.value(i, t, date) - pot.value(i, t, AdoptionDate::At(1));
                if dev.abs() > tol {
                    out.push(ExclusionViolation { unit: i, period: t, date, deviation: dev });
                }
            }
        }
    }
    out
}

/// A failure of the constant-treatment-effect assumptions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstantEffectViolation {
    /// `Y_it(a) - Y_it(a')` differs between `unit` and unit 0.
    AcrossUnits {
        unit: usize,
        period: u32,
        date: AdoptionDate,
        other_date: AdoptionDate,
        deviation: f64,
    },
    /// `Y_it(1) - Y_it(Never)` differs between `period` and period 1.
    OverTime { unit: usize, period: u32, deviation: f64 },
}

/// Check the two effect-homogeneity assumptions: date contrasts constant
/// across units, and the first-versus-never contrast constant over time.
pub fn check_constant_effects(
    pot: &PotentialOutcomeTable,
    tol: f64,
) -> Vec<ConstantEffectViolation> {
    let mut out = Vec::new();
    let t_max = pot.n_periods();
    let dates: Vec<AdoptionDate> = AdoptionDate::all(t_max).collect();
    for t in 1..=t_max {
        for (k, &a) in dates.iter().enumerate() {
            for &a2 in &dates[(k + 1)..] {
                let base = pot.value(0, t, a) - pot.value(0, t, a2);
                for i in 1..pot.n_units() {
                    let diff = pot.value(i, t, a) - pot.value(i, t, a2);
                    let dev = diff - base;
                    if dev.abs() > tol {
                        out.push(ConstantEffectViolation::AcrossUnits {
                            unit: i,
                            period: t,
                            date: a,
                            other_date: a2,
                            deviation: dev,
                        });
                    }
                }
            }
        }
    }
    for i in 0..pot.n_units() {
        let base = pot.value(i, 1, AdoptionDate::At(1)) - pot.value(i, 1, AdoptionDate::Never);
        for t in 2..=t_max {
            let diff = pot.value(i, t, AdoptionDate::At(1)) - pot.value(i, t, AdoptionDate::Never);
            let dev = diff - base;
            if dev.abs() > tol {
                out.push(ConstantEffectViolation::OverTime { unit: i, period: t, deviation: dev });
            }
        }
    }
    out
}

/// Permutation pretest of the testable restriction that first-period
/// outcomes are independent of the adoption label within the subsample of
/// period-2 adopters and never-adopters.
///
/// The statistic is the absolute difference of first-period group means;
/// labels are permuted within the restricted subsample. Returns the
/// add-one permutation p-value, which lies in `(0, 1]`.
pub fn pretest_independence<R: Rng + ?Sized>(
    panel: &Panel,
    n_perm: usize,
    rng: &mut R,
) -> Result<f64> {
    if panel.n_periods() < 2 {
        return Err(Error::PretestInapplicable("at least two periods are required".into()));
    }
    if n_perm == 0 {
        return Err(Error::Invalid("number of permutations must be positive".into()));
    }
    let mut pooled = Vec::new();
    let mut n_adopters = 0usize;
    let mut adopter_sum = 0.0;
    let mut never_sum = 0.0;
    for (i, d) in panel.assignment().dates().iter().enumerate() {
        let y = panel.outcome(i, 1);
        match d {
            AdoptionDate::At(2) => {
                n_adopters += 1;
                adopter_sum += y;
                pooled.push(y);
            }
            AdoptionDate::Never => {
                never_sum += y;
                pooled.push(y);
            }
            _ => {}
        }
    }
    let n_never = pooled.len() - n_adopters;
    if n_adopters == 0 || n_never == 0 {
        return Err(Error::PretestInapplicable(
            "both the period-2 adopter group and the never-adopter group must be nonempty".into(),
        ));
    }
    let observed = (adopter_sum / n_adopters as f64 - never_sum / n_never as f64).abs();

    let mut at_least_as_large = 0usize;
    for _ in 0..n_perm {
        let shuffled = shuffle_multiset(&pooled, rng);
        let sum2: f64 = shuffled[..n_adopters].iter().sum();
        let sum_inf: f64 = shuffled[n_adopters..].iter().sum();
        let stat = (sum2 / n_adopters as f64 - sum_inf / n_never as f64).abs();
        if stat >= observed {
            at_least_as_large += 1;
        }
    }
    Ok((1 + at_least_as_large) as f64 / (1 + n_perm) as f64)
}

/// A panel parsed from long-format CSV, with the original labels.
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: Panel,
    pub unit_labels: Vec<String>,
    pub time_labels: Vec<i64>,
}

/// Parse a long-format panel: header `unit,time,outcome,adoption`, one row
/// per unit-period cell.
///
/// Units are arbitrary labels; times are integers mapped to periods
/// `1..=T` in sorted order. The adoption column is either an observed
/// time or the literal `never`, and must be constant within a unit. The
/// rows must form a complete unit-by-time rectangle.
pub fn parse_panel_csv<R: BufRead>(reader: R) -> Result<LoadedPanel> {
    let mut unit_labels: Vec<String> = Vec::new();
    let mut unit_index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    // (unit, time) -> (outcome, line)
    let mut cells: std::collections::HashMap<(usize, i64), (f64, usize)> =
        std::collections::HashMap::new();
    // unit -> (raw adoption, line first seen)
    let mut adoption_raw: Vec<(Option<i64>, usize)> = Vec::new();
    let mut times: std::collections::BTreeSet<i64> = std::collections::BTreeSet::new();

    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::Csv { line: 1, message: e.to_string() })?,
        None => return Err(Error::Csv { line: 1, message: "empty input".into() }),
    };
    let header_fields: Vec<&str> = header.trim_end_matches(['\r', '\n']).split(',').collect();
    if header_fields.iter().map(|f| f.trim()).collect::<Vec<_>>()
        != ["unit", "time", "outcome", "adoption"]
    {
        return Err(Error::Csv {
            line: 1,
            message: format!("expected header 'unit,time,outcome,adoption', got '{header}'"),
        });
    }

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Csv { line: line_no, message: e.to_string() })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(|f| f.trim()).collect();
        if fields.len() != 4 {
            return Err(Error::Csv {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let unit_label = fields[0];
        if unit_label.is_empty() {
            return Err(Error::Csv { line: line_no, message: "empty unit label".into() });
        }
        let time: i64 = fields[1].parse().map_err(|_| Error::Csv {
            line: line_no,
            message: format!("time '{}' is not an integer", fields[1]),
        })?;
        let outcome: f64 = fields[2].parse().map_err(|_| Error::Csv {
            line: line_no,
            message: format!("outcome '{}' is not a number", fields[2]),
        })?;
        if !outcome.is_finite() {
            return Err(Error::Csv { line: line_no, message: "outcome is not finite".into() });
        }
        let adoption: Option<i64> = if fields[3] == "never" {
            None
        } else {
            let a: i64 = fields[3].parse().map_err(|_| Error::Csv {
                line: line_no,
                message: format!("adoption '{}' is not a positive integer or 'never'", fields[3]),
            })?;
            if a < 1 {
                return Err(Error::Csv {
                    line: line_no,
                    message: format!("adoption '{a}' is not positive"),
                });
            }
            Some(a)
        };

        let unit = match unit_index.get(unit_label) {
            Some(&u) => u,
            None => {
                let u = unit_labels.len();
                unit_labels.push(unit_label.to_string());
                unit_index.insert(unit_label.to_string(), u);
                adoption_raw.push((adoption, line_no));
                u
            }
        };
        if adoption_raw[unit].0 != adoption {
            return Err(Error::Csv {
                line: line_no,
                message: format!(
                    "unit {unit_label} has conflicting adoption dates (first declared on line {})",
                    adoption_raw[unit].1
                ),
            });
        }
        if cells.insert((unit, time), (outcome, line_no)).is_some() {
            return Err(Error::Csv {
                line: line_no,
                message: format!("duplicate cell for unit {unit_label}, time {time}"),
            });
        }
        times.insert(time);
    }

    if unit_labels.len() < 2 {
        return Err(Error::Invalid("panel needs at least 2 units".into()));
    }
    if times.is_empty() {
        return Err(Error::Invalid("panel has no observations".into()));
    }
    let time_labels: Vec<i64> = times.into_iter().collect();
    let n_periods = time_labels.len() as u32;

    // Complete rectangle, reported against the original labels.
    for (u, label) in unit_labels.iter().enumerate() {
        for &t in &time_labels {
            if !cells.contains_key(&(u, t)) {
                return Err(Error::IncompleteRectangle { unit: label.clone(), time: t });
            }
        }
    }

    let mut dates = Vec::with_capacity(unit_labels.len());
    for (u, &(raw, line)) in adoption_raw.iter().enumerate() {
        let date = match raw {
            None => AdoptionDate::Never,
            Some(a) => match time_labels.binary_search(&a) {
                Ok(pos) => AdoptionDate::At(pos as u32 + 1),
                Err(_) => {
                    return Err(Error::Csv {
                        line,
                        message: format!(
                            "unit {}: adoption date {a} is not one of the observed times",
                            unit_labels[u]
                        ),
                    });
                }
            },
        };
        dates.push(date);
    }

    let assignment = AdoptionAssignment::new(dates, n_periods)?;
    let mut y = Vec::with_capacity(unit_labels.len() * n_periods as usize);
    for u in 0..unit_labels.len() {
        for &t in &time_labels {
            y.push(cells[&(u, t)].0);
        }
    }
    let panel = Panel::new(y, assignment)?;
    Ok(LoadedPanel { panel, unit_labels, time_labels })
}

/// [`parse_panel_csv`] over a file path.
pub fn load_panel_csv(path: &Path) -> Result<LoadedPanel> {
    let file = std::fs::File::open(path).map_err(|e| Error::Invalid(format!(
        "cannot open {}: {e}",
        path.display()
    )))?;
    parse_panel_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{standard_normal, RngStream};

    fn never() -> AdoptionDate {
        AdoptionDate::Never
    }

    fn additive_table(n: usize, t: u32, tau: f64) -> PotentialOutcomeTable {
        PotentialOutcomeTable::from_fn(n, t, |i, period, a| {
            0.3 * i as f64 + 1.5 * period as f64 + tau * exposure(a, period)
        })
        .unwrap()
    }

    fn random_table(n: usize, t: u32, seed: u64) -> PotentialOutcomeTable {
        let mut rng = RngStream::new(seed, 0).rng();
        PotentialOutcomeTable::from_fn(n, t, |_, _, _| standard_normal(&mut rng)).unwrap()
    }

    #[test]
    fn exposure_indicator() {
        assert_eq!(exposure(AdoptionDate::At(2), 3), 1.0);
        assert_eq!(exposure(never(), 5), 0.0);
        assert_eq!(exposure(AdoptionDate::At(3), 2), 0.0);
    }

    #[test]
    fn never_orders_above_finite_dates() {
        assert!(never() > AdoptionDate::At(1_000_000));
        assert!(AdoptionDate::At(2) < AdoptionDate::At(3));
    }

    #[test]
    fn realize_is_a_lookup() {
        let pot = random_table(6, 3, 1);
        let dates = vec![
            AdoptionDate::At(1),
            AdoptionDate::At(2),
            AdoptionDate::At(3),
            never(),
            AdoptionDate::At(2),
            never(),
        ];
        let asg = AdoptionAssignment::new(dates.clone(), 3).unwrap();
        let panel = realize(&pot, &asg).unwrap();
        let mut rng = RngStream::new(2, 0).rng();
        for _ in 0..10 {
            let i = rng.random_range(0..6usize);
            let t = rng.random_range(1..=3u32);
            assert_eq!(panel.outcome(i, t), pot.value(i, t, dates[i]));
        }
        // Purity: realizing twice gives identical panels.
        assert_eq!(panel, realize(&pot, &asg).unwrap());
    }

    #[test]
    fn realize_all_never_matches_never_slice() {
        let pot = random_table(4, 2, 3);
        let asg = AdoptionAssignment::new(vec![never(); 4], 2).unwrap();
        let panel = realize(&pot, &asg).unwrap();
        for i in 0..4 {
            for t in 1..=2 {
                assert_eq!(panel.outcome(i, t), pot.value(i, t, never()));
            }
        }
    }

    #[test]
    fn realize_dimension_mismatch() {
        let pot = random_table(4, 2, 3);
        let asg = AdoptionAssignment::new(vec![never(); 5], 2).unwrap();
        assert!(matches!(realize(&pot, &asg), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn group_mean_conventions() {
        let pot = PotentialOutcomeTable::from_fn(2, 1, |i, _, _| 1.0 + 2.0 * i as f64).unwrap();
        let asg = AdoptionAssignment::new(vec![AdoptionDate::At(1), never()], 1).unwrap();
        let panel = realize(&pot, &asg).unwrap();
        // Singleton groups return the unit's outcome.
        assert_eq!(group_mean(&panel, 1, AdoptionDate::At(1)), 1.0);
        assert_eq!(group_mean(&panel, 1, never()), 3.0);
        // Empty group: zero by convention.
        let asg2 = AdoptionAssignment::new(vec![never(), never()], 1).unwrap();
        let panel2 = realize(&pot, &asg2).unwrap();
        assert_eq!(group_mean(&panel2, 1, AdoptionDate::At(1)), 0.0);
        // Two units with outcomes 1 and 3 average to 2.
        assert_eq!(group_mean(&panel2, 1, never()), 2.0);
    }

    #[test]
    fn population_mean_basics() {
        let pot = PotentialOutcomeTable::from_fn(2, 1, |i, _, _| 4.0 * i as f64).unwrap();
        assert_eq!(population_mean(&pot, 1, never()), 2.0);
        let c = PotentialOutcomeTable::from_fn(3, 2, |_, _, _| 2.5).unwrap();
        assert_eq!(population_mean(&c, 2, AdoptionDate::At(1)), 2.5);
    }

    #[test]
    fn population_mean_matches_degenerate_realization() {
        let pot = random_table(5, 2, 9);
        for a in AdoptionDate::all(2) {
            let asg = AdoptionAssignment::new(vec![a; 5], 2).unwrap();
            let panel = realize(&pot, &asg).unwrap();
            for t in 1..=2 {
                assert!((population_mean(&pot, t, a) - group_mean(&panel, t, a)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tau_population_properties() {
        let pot = random_table(6, 3, 4);
        let a = AdoptionDate::At(2);
        let b = never();
        assert_eq!(tau_population(&pot, 2, a, a), 0.0);
        assert!(
            (tau_population(&pot, 2, a, b) + tau_population(&pot, 2, b, a)).abs() < 1e-15
        );
        // Telescoping through the never date.
        for t in 1..=3 {
            for x in AdoptionDate::all(3) {
                for y in AdoptionDate::all(3) {
                    let lhs = tau_population(&pot, t, x, y);
                    let rhs = tau_population(&pot, t, never(), y) - tau_population(&pot, t, never(), x);
                    assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tau_hat_singleton_groups() {
        let pot = PotentialOutcomeTable::from_fn(2, 1, |i, _, _| 5.0 - 3.0 * i as f64).unwrap();
        let asg = AdoptionAssignment::new(vec![AdoptionDate::At(1), never()], 1).unwrap();
        let panel = realize(&pot, &asg).unwrap();
        assert_eq!(tau_hat(&panel, 1, never(), AdoptionDate::At(1)), 3.0);
        assert_eq!(tau_hat(&panel, 1, AdoptionDate::At(1), never()), -3.0);
        assert_eq!(tau_hat(&panel, 1, never(), never()), 0.0);
    }

    #[test]
    fn group_means_aggregate_to_grand_sum() {
        let pot = random_table(7, 3, 5);
        let dates = vec![
            AdoptionDate::At(1),
            AdoptionDate::At(2),
            AdoptionDate::At(2),
            AdoptionDate::At(3),
            never(),
            never(),
            never(),
        ];
        let asg = AdoptionAssignment::new(dates, 3).unwrap();
        let panel = realize(&pot, &asg).unwrap();
        for t in 1..=3 {
            let total: f64 = (0..7).map(|i| panel.outcome(i, t)).sum();
            let mut grouped = 0.0;
            for a in AdoptionDate::all(3) {
                grouped += asg.counts().count(a) as f64 * group_mean(&panel, t, a);
            }
            assert!((total - grouped).abs() < 1e-12);
        }
    }

    #[test]
    fn no_anticipation_checker() {
        let mut pot = additive_table(4, 3, 1.0);
        assert!(check_no_anticipation(&pot, DEFAULT_CHECK_TOL).is_empty());
        pot.set_value(2, 1, AdoptionDate::At(3), pot.value(2, 1, never()) + 1.0);
        let v = check_no_anticipation(&pot, DEFAULT_CHECK_TOL);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].unit, v[0].period, v[0].date), (2, 1, AdoptionDate::At(3)));
    }

    #[test]
    fn invariance_checker() {
        let mut pot = additive_table(4, 3, 1.0);
        assert!(check_invariance_to_history(&pot, DEFAULT_CHECK_TOL).is_empty());
        pot.set_value(1, 3, AdoptionDate::At(2), pot.value(1, 3, AdoptionDate::At(1)) + 0.5);
        let v = check_invariance_to_history(&pot, DEFAULT_CHECK_TOL);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].unit, v[0].period, v[0].date), (1, 3, AdoptionDate::At(2)));
    }

    #[test]
    fn binary_reduction_when_both_exclusions_hold() {
        let pot = additive_table(5, 3, 2.0);
        assert!(check_no_anticipation(&pot, DEFAULT_CHECK_TOL).is_empty());
        assert!(check_invariance_to_history(&pot, DEFAULT_CHECK_TOL).is_empty());
        for i in 0..5 {
            for t in 1..=3 {
                for a in AdoptionDate::all(3) {
                    let w = exposure(a, t);
                    let reduced = w * pot.value(i, t, AdoptionDate::At(1))
                        + (1.0 - w) * pot.value(i, t, never());
                    assert!((pot.value(i, t, a) - reduced).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_effect_checker() {
        let pot = additive_table(4, 3, 1.0);
        assert!(check_constant_effects(&pot, DEFAULT_CHECK_TOL).is_empty());
        let mut perturbed = pot.clone();
        perturbed.set_value(3, 2, AdoptionDate::At(2), perturbed.value(3, 2, AdoptionDate::At(2)) + 1.0);
        assert!(!check_constant_effects(&perturbed, DEFAULT_CHECK_TOL).is_empty());
    }

    #[test]
    fn pretest_identical_groups_gives_p_one() {
        let pot = PotentialOutcomeTable::from_fn(6, 2, |_, _, _| 1.5).unwrap();
        let dates = vec![
            AdoptionDate::At(2),
            AdoptionDate::At(2),
            AdoptionDate::At(2),
            never(),
            never(),
            never(),
        ];
        let panel = realize(&pot, &AdoptionAssignment::new(dates, 2).unwrap()).unwrap();
        let mut rng = RngStream::new(1, 0).rng();
        let p = pretest_independence(&panel, 500, &mut rng).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn pretest_detects_planted_shift() {
        // Group means differ by ten standard deviations.
        let mut rng = RngStream::new(8, 0).rng();
        let n = 40;
        let pot = PotentialOutcomeTable::from_fn(n, 2, |i, t, _| {
            let noise = standard_normal(&mut rng);
            if t == 1 && i < 20 {
                10.0 + noise
            } else {
                noise
            }
        })
        .unwrap();
        let mut dates = vec![AdoptionDate::At(2); 20];
        dates.extend(vec![never(); 20]);
        let panel = realize(&pot, &AdoptionAssignment::new(dates, 2).unwrap()).unwrap();
        let mut prng = RngStream::new(9, 0).rng();
        let p = pretest_independence(&panel, 999, &mut prng).unwrap();
        assert!(p < 0.01, "p = {p}");
    }

    #[test]
    fn pretest_requires_both_groups() {
        let pot = random_table(4, 2, 2);
        let panel =
            realize(&pot, &AdoptionAssignment::new(vec![never(); 4], 2).unwrap()).unwrap();
        let mut rng = RngStream::new(1, 0).rng();
        assert!(matches!(
            pretest_independence(&panel, 10, &mut rng),
            Err(Error::PretestInapplicable(_))
        ));
    }

    #[test]
    fn pretest_null_calibration() {
        // Under random assignment with no anticipation the p-value is
        // uniform; the 5% rejection rate should sit near 5%. The table must
        // satisfy the exclusion restrictions: first-period outcomes cannot
        // depend on the (future) adoption date.
        let pot = {
            let mut rng = RngStream::new(31, 0).rng();
            let base: Vec<f64> = (0..24).map(|_| standard_normal(&mut rng)).collect();
            PotentialOutcomeTable::from_fn(24, 2, |i, t, a| {
                if t == 1 {
                    base[i]
                } else {
                    base[i] + exposure(a, t) + 0.1 * (i as f64)
                }
            })
            .unwrap()
        };
        let counts = DesignCounts::new(2, &[(AdoptionDate::At(2), 12), (never(), 12)]).unwrap();
        let n_panels = 10_000;
        let n_perm = 199;
        let mut rejections = 0usize;
        for r in 0..n_panels {
            let stream = RngStream::new(77, r as u64);
            let mut rng = stream.rng();
            let asg = crate::design::sample_assignment(&counts, &mut rng);
            let panel = realize(&pot, &asg).unwrap();
            let p = pretest_independence(&panel, n_perm, &mut rng).unwrap();
            if p <= 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / n_panels as f64;
        assert!((rate - 0.05).abs() < 0.01, "rejection rate {rate}");
    }

    #[test]
    fn csv_round_trip() {
        let csv = "unit,time,outcome,adoption\n\
                   a,1,0.5,2\n\
                   a,2,1.5,2\n\
                   b,1,0.25,never\n\
                   b,2,0.75,never\n";
        let loaded = parse_panel_csv(csv.as_bytes()).unwrap();
        assert_eq!(loaded.unit_labels, vec!["a", "b"]);
        assert_eq!(loaded.time_labels, vec![1, 2]);
        assert_eq!(loaded.panel.outcome(0, 2), 1.5);
        assert_eq!(
            loaded.panel.assignment().dates(),
            &[AdoptionDate::At(2), never()]
        );
    }

    #[test]
    fn csv_year_labels_are_remapped() {
        let csv = "unit,time,outcome,adoption\n\
                   x,2001,1.0,2002\n\
                   x,2002,2.0,2002\n\
                   y,2001,3.0,never\n\
                   y,2002,4.0,never\n";
        let loaded = parse_panel_csv(csv.as_bytes()).unwrap();
        assert_eq!(loaded.time_labels, vec![2001, 2002]);
        assert_eq!(
            loaded.panel.assignment().dates(),
            &[AdoptionDate::At(2), never()]
        );
    }

    #[test]
    fn csv_missing_cell_names_the_pair() {
        let csv = "unit,time,outcome,adoption\n\
                   a,1,0.5,never\n\
                   a,2,1.5,never\n\
                   b,1,0.25,never\n";
        match parse_panel_csv(csv.as_bytes()) {
            Err(Error::IncompleteRectangle { unit, time }) => {
                assert_eq!(unit, "b");
                assert_eq!(time, 2);
            }
            other => panic!("expected rectangle error, got {other:?}"),
        }
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let csv = "unit,time,outcome,adoption\n\
                   a,1,0.5,never\n\
                   a,2,oops,never\n";
        match parse_panel_csv(csv.as_bytes()) {
            Err(Error::Csv { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("expected csv error, got {other:?}"),
        }
        let bad_adoption = "unit,time,outcome,adoption\n\
                            a,1,0.5,7\n\
                            a,2,0.5,7\n\
                            b,1,0.1,never\n\
                            b,2,0.2,never\n";
        match parse_panel_csv(bad_adoption.as_bytes()) {
            Err(Error::Csv { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("observed times"), "{message}");
            }
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    #[test]
    fn csv_conflicting_adoption_is_rejected() {
        let csv = "unit,time,outcome,adoption\n\
                   a,1,0.5,1\n\
                   a,2,1.5,2\n";
        match parse_panel_csv(csv.as_bytes()) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected csv error, got {other:?}"),
        }
    }
}
