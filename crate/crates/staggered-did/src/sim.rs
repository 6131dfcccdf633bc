//! Monte Carlo study of the five variances: fixed populations drawn from
//! four data-generating designs, repeated random assignment of adoption
//! dates, and per-method mean variances and coverage rates.
//!
//! The population is drawn once per configuration and held fixed; only the
//! assignment is redrawn across replications, so the reported coverage is
//! coverage of the design-based estimand.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{sample_assignment, DesignCounts};
use crate::error::{Error, Result};
use crate::estimator::{did_estimate, expected_estimand, AdoptionShares, EstimandMode};
use crate::numerics::{cholesky_factor, derive_seed, multivariate_normal, RngStream, SquareMatrix};
use crate::panel::{realize, AdoptionDate, PotentialOutcomeTable};
use crate::variance::{
    bootstrap_b1, bootstrap_b2, confidence_interval, conservative_estimator, exact_variance,
    lz_variance,
};

/// Containment slack for coverage checks, relative to the estimand scale.
/// Zero-variance intervals in exact-arithmetic cases (for example a
/// noiseless constant-effect population) must still read as covering.
const COVERAGE_SLACK: f64 = 1e-9;

/// The four outcome-generating designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Design {
    /// Constant unit effect, independent slots.
    A,
    /// Effect varies with the adoption date; one high-variance slot.
    B,
    /// Design B means with strong positive within-period correlation.
    C,
    /// Design B means with negative within-period correlation.
    D,
}

impl Design {
    pub const ALL: [Design; 4] = [Design::A, Design::B, Design::C, Design::D];

    pub fn parse(s: &str) -> Option<Design> {
        match s {
            "A" | "a" => Some(Design::A),
            "B" | "b" => Some(Design::B),
            "C" | "c" => Some(Design::C),
            "D" | "d" => Some(Design::D),
            _ => None,
        }
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Design::A => "A",
            Design::B => "B",
            Design::C => "C",
            Design::D => "D",
        };
        write!(f, "{s}")
    }
}

/// The two adoption-share profiles of the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PiVariant {
    /// Shares (0, 2/3, 0, 1/3) over dates (1, 2, 3, never).
    I,
    /// Shares (0, 1/2, 2/5, 1/10).
    II,
}

impl PiVariant {
    pub const ALL: [PiVariant; 2] = [PiVariant::I, PiVariant::II];

    pub fn parse(s: &str) -> Option<PiVariant> {
        match s {
            "I" | "i" | "1" => Some(PiVariant::I),
            "II" | "ii" | "2" => Some(PiVariant::II),
            _ => None,
        }
    }
}

impl std::fmt::Display for PiVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", match self {
            PiVariant::I => "I",
            PiVariant::II => "II",
        })
    }
}

/// Number of periods the study designs are defined for.
pub const STUDY_PERIODS: u32 = 3;
const SLOTS: usize = 9;

/// Mean vector and covariance of the 9 potential-outcome slots
/// `(Y_1(2), Y_1(3), Y_1(inf), Y_2(2), ..., Y_3(inf))` for one design.
pub fn design_moments(design: Design, sigma: f64) -> (Vec<f64>, SquareMatrix) {
    let mu: Vec<f64> = match design {
        Design::A => vec![0.0, 0.0, 0.0, 4.0, 3.0, 3.0, 2.0, 2.0, 1.0],
        Design::B | Design::C | Design::D => vec![0.0, 0.0, 0.0, 2.0, 1.0, 1.0, 2.0, 11.0, 1.0],
    };
    let s2 = sigma * sigma;
    let mut cov = SquareMatrix::zeros(SLOTS);
    match design {
        Design::A => {
            for i in 0..SLOTS {
                cov.set(i, i, s2);
            }
        }
        Design::B => {
            for i in 0..SLOTS {
                let scale = if i == 1 { 10.0 } else { 1.0 };
                cov.set(i, i, s2 * scale);
            }
        }
        Design::C | Design::D => {
            let off = if design == Design::C { 0.9 } else { -0.4 };
            for block in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let v = if i == j { 1.0 } else { off };
                        cov.set(block * 3 + i, block * 3 + j, s2 * v);
                    }
                }
            }
        }
    }
    (mu, cov)
}

/// Draw one fixed population for a design: per unit, a 9-slot multivariate
/// normal mapped to `(t, a)` cells for `a` in `{2, 3, never}`. Slots for
/// `a = 1` are zero; both share profiles put no units there.
pub fn generate_population<R: rand::Rng + ?Sized>(
    design: Design,
    n_units: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<PotentialOutcomeTable> {
    let (mu, cov) = design_moments(design, sigma);
    let chol = cholesky_factor(&cov)?;
    let mut draws = Vec::with_capacity(n_units);
    for _ in 0..n_units {
        draws.push(multivariate_normal(&mu, &chol, rng)?);
    }
    PotentialOutcomeTable::from_fn(n_units, STUDY_PERIODS, |i, t, a| {
        let slot = match a {
            AdoptionDate::At(1) => return 0.0,
            AdoptionDate::At(2) => 0,
            AdoptionDate::At(3) => 1,
            AdoptionDate::Never => 2,
            AdoptionDate::At(_) => unreachable!("study has three periods"),
        };
        draws[i][(t as usize - 1) * 3 + slot]
    })
}

/// Integer per-date counts for a share profile; errors when the shares do
/// not divide `n` evenly.
pub fn counts_from_pi(variant: PiVariant, n: usize) -> Result<DesignCounts> {
    let pairs: Vec<(AdoptionDate, usize)> = match variant {
        PiVariant::I => {
            if !n.is_multiple_of(3) {
                return Err(Error::Invalid(format!(
                    "profile I needs N divisible by 3, got {n}"
                )));
            }
            vec![(AdoptionDate::At(2), 2 * n / 3), (AdoptionDate::Never, n / 3)]
        }
        PiVariant::II => {
            if !n.is_multiple_of(10) {
                return Err(Error::Invalid(format!(
                    "profile II needs N divisible by 10, got {n}"
                )));
            }
            vec![
                (AdoptionDate::At(2), n / 2),
                (AdoptionDate::At(3), 2 * n / 5),
                (AdoptionDate::Never, n / 10),
            ]
        }
    };
    DesignCounts::new(STUDY_PERIODS, &pairs)
}

fn default_periods() -> u32 {
    STUDY_PERIODS
}
fn default_sigma() -> f64 {
    1.0
}
fn default_boot() -> usize {
    1000
}
fn default_level() -> f64 {
    0.95
}

/// One simulation configuration; deserializable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub design: Design,
    pub pi: PiVariant,
    pub n: usize,
    #[serde(default = "default_periods")]
    pub t: u32,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub n_sims: usize,
    #[serde(default = "default_boot")]
    pub n_boot: usize,
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t != STUDY_PERIODS {
            return Err(Error::Invalid(format!(
                "the study designs are defined for t = {STUDY_PERIODS}, got {}",
                self.t
            )));
        }
        if self.n < 2 {
            return Err(Error::Invalid("n must be at least 2".into()));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::Invalid("sigma must be finite and nonnegative".into()));
        }
        if self.n_sims < 1 {
            return Err(Error::Invalid("n_sims must be at least 1".into()));
        }
        if self.n_boot < 2 {
            return Err(Error::Invalid("n_boot must be at least 2".into()));
        }
        if (self.level - 0.95).abs() > 1e-12 {
            return Err(Error::Invalid(
                "only level = 0.95 is supported; intervals use the 1.96 normal rule".into(),
            ));
        }
        Ok(())
    }
}

/// Per-configuration study output: the estimand, the exact variance, and
/// mean variance plus coverage for each method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub design: Design,
    pub pi: PiVariant,
    pub n: usize,
    pub n_sims: usize,
    pub estimand: f64,
    pub v_exact: f64,
    pub cov_exact: f64,
    pub v_did_hat: f64,
    pub cov_did_hat: f64,
    pub v_lz: f64,
    pub cov_lz: f64,
    pub v_b1: f64,
    pub cov_b1: f64,
    pub v_b2: f64,
    pub cov_b2: f64,
}

struct Replication {
    variances: [f64; 4],
    covered: [bool; 5],
}

fn covers(tau: f64, variance: f64, estimand: f64) -> Result<bool> {
    let (lo, hi) = confidence_interval(tau, variance)?;
    let slack = COVERAGE_SLACK * (1.0 + estimand.abs());
    Ok(lo - slack <= estimand && estimand <= hi + slack)
}

/// Run one configuration: draw the population from stream 0, then for each
/// replication `r` (stream `r`) draw an assignment, estimate, compute the
/// four variance estimates, and record whether each method's interval
/// covers the estimand. The exact-variance column uses the known
/// randomization variance in its intervals.
pub fn run_simulation(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let counts = counts_from_pi(config.pi, config.n)?;
    let mut pop_rng = RngStream::new(config.seed, 0).rng();
    let pot = generate_population(config.design, config.n, config.sigma, &mut pop_rng)?;

    let shares = AdoptionShares::from_counts(&counts);
    let estimand = expected_estimand(&pot, &shares, EstimandMode::Full)?;
    let v_exact = exact_variance(&pot, &counts)?;

    let replications: Vec<Result<Replication>> = (1..=config.n_sims as u64)
        .into_par_iter()
        .map(|r| {
            let stream = RngStream::new(config.seed, r);
            let mut rng = stream.rng();
            let assignment = sample_assignment(&counts, &mut rng);
            let panel = realize(&pot, &assignment)?;
            let tau = did_estimate(&panel)?;
            let v_did = conservative_estimator(&panel)?;
            let v_lz = lz_variance(&panel)?;
            let v_b1 = bootstrap_b1(&panel, config.n_boot, stream.child(1))?;
            let v_b2 = bootstrap_b2(&panel, config.n_boot, stream.child(2))?;
            Ok(Replication {
                variances: [v_did, v_lz, v_b1, v_b2],
                covered: [
                    covers(tau, v_exact, estimand)?,
                    covers(tau, v_did, estimand)?,
                    covers(tau, v_lz, estimand)?,
                    covers(tau, v_b1, estimand)?,
                    covers(tau, v_b2, estimand)?,
                ],
            })
        })
        .collect();

    let mut mean_v = [0.0f64; 4];
    let mut cov = [0usize; 5];
    for rep in replications {
        let rep = rep?;
        for (acc, v) in mean_v.iter_mut().zip(rep.variances) {
            *acc += v;
        }
        for (acc, c) in cov.iter_mut().zip(rep.covered) {
            *acc += c as usize;
        }
    }
    let m = config.n_sims as f64;
    for v in &mut mean_v {
        *v /= m;
    }
    let rate = |c: usize| c as f64 / m;

    Ok(SimReport {
        design: config.design,
        pi: config.pi,
        n: config.n,
        n_sims: config.n_sims,
        estimand,
        v_exact,
        cov_exact: rate(cov[0]),
        v_did_hat: mean_v[0],
        cov_did_hat: rate(cov[1]),
        v_lz: mean_v[1],
        cov_lz: rate(cov[2]),
        v_b1: mean_v[2],
        cov_b1: rate(cov[3]),
        v_b2: mean_v[3],
        cov_b2: rate(cov[4]),
    })
}

/// All sixteen study configurations (designs x share profiles x population
/// sizes), in the standard row order: N = 30 first, profile I before II,
/// designs A through D within each block.
pub fn table1(base_seed: u64, n_sims: usize, n_boot: usize) -> Result<Vec<SimReport>> {
    let mut reports = Vec::with_capacity(16);
    let mut row = 0u64;
    for n in [30usize, 150] {
        for pi in PiVariant::ALL {
            for design in Design::ALL {
                let config = SimConfig {
                    design,
                    pi,
                    n,
                    t: STUDY_PERIODS,
                    sigma: 1.0,
                    n_sims,
                    n_boot,
                    seed: derive_seed(base_seed, row),
                    level: 0.95,
                };
                reports.push(run_simulation(&config)?);
                row += 1;
            }
        }
    }
    Ok(reports)
}

/// Fixed-column CSV rendering of study reports.
pub fn reports_to_csv(reports: &[SimReport]) -> String {
    let mut out = String::from(
        "design,pi,N,v_exact,cov_exact,v_did_hat,cov_did_hat,v_lz,cov_lz,v_b1,cov_b1,v_b2,cov_b2\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.design,
            r.pi,
            r.n,
            r.v_exact,
            r.cov_exact,
            r.v_did_hat,
            r.cov_did_hat,
            r.v_lz,
            r.cov_lz,
            r.v_b1,
            r.cov_b1,
            r.v_b2,
            r.cov_b2
        ));
    }
    out
}
