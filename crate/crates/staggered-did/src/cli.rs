//! Implementations behind the `staggered-did` binary's subcommands.
//!
//! Each command returns its rendered output as a string so it can be
//! tested directly; the binary is a thin argument-parsing shell. JSON is
//! the canonical machine format, and the human table and key/value CSV are
//! derived from the same report structs.

use std::path::Path;

use serde::Serialize;

use crate::design::{enumerate_assignments, oracle_moments, DesignCounts};
use crate::error::{Error, Result};
use crate::estimator::{
    decompose, did_estimate, expected_estimand, AdoptionShares, EstimandMode, WeightTable,
};
use crate::numerics::{standard_normal, RngStream};
use crate::panel::{
    exposure, load_panel_csv, pretest_independence, AdoptionDate, LoadedPanel,
    PotentialOutcomeTable,
};
use crate::sim::{reports_to_csv, run_simulation, table1, SimConfig, SimReport};
use crate::variance::{
    bootstrap_b1, bootstrap_b2, confidence_interval, conservative_estimator, exact_variance,
    lz_variance,
};

/// Output rendering for report-producing commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Table,
    Csv,
}

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub boot_reps: usize,
    pub seed: u64,
    pub skip_bootstrap: bool,
    pub format: OutputFormat,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            boot_reps: 1000,
            seed: 0,
            skip_bootstrap: false,
            format: OutputFormat::Table,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupEntry {
    pub date: String,
    pub count: usize,
    pub share: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionEntry {
    pub current: f64,
    pub future: f64,
    pub past: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodVariance {
    pub method: String,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightRow {
    pub period: u32,
    pub date: String,
    pub g: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightsEntry {
    pub denom: f64,
    pub gamma_plus: Vec<f64>,
    pub gamma_minus: Vec<f64>,
    pub rows: Vec<WeightRow>,
}

/// Everything `estimate` reports for one panel.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub n_units: usize,
    pub n_periods: u32,
    pub groups: Vec<GroupEntry>,
    pub tau_hat: f64,
    pub decomposition: DecompositionEntry,
    pub variances: Vec<MethodVariance>,
    pub weights: WeightsEntry,
    pub seed: u64,
    pub boot_reps: usize,
}

/// Estimate from a CSV panel and render per the requested format.
pub fn run_estimate(path: &Path, opts: &EstimateOptions) -> Result<String> {
    let loaded = load_panel_csv(path)?;
    let report = build_estimate_report(&loaded, opts)?;
    Ok(match opts.format {
        OutputFormat::Json => to_json(&report),
        OutputFormat::Table => render_estimate_table(&report),
        OutputFormat::Csv => render_estimate_csv(&report),
    })
}

pub fn build_estimate_report(
    loaded: &LoadedPanel,
    opts: &EstimateOptions,
) -> Result<EstimateReport> {
    let panel = &loaded.panel;
    let t_max = panel.n_periods();
    let weights = WeightTable::from_counts(panel.assignment().counts())?;
    let tau = did_estimate(panel)?;
    let parts = decompose(panel)?;

    let mut variances = Vec::new();
    let mut push = |method: &str, v: f64| -> Result<()> {
        let (lo, hi) = confidence_interval(tau, v)?;
        variances.push(MethodVariance {
            method: method.to_string(),
            variance: v,
            ci_low: lo,
            ci_high: hi,
        });
        Ok(())
    };
    push("did", conservative_estimator(panel)?)?;
    push("lz", lz_variance(panel)?)?;
    if !opts.skip_bootstrap {
        let stream = RngStream::new(opts.seed, 0);
        push("b1", bootstrap_b1(panel, opts.boot_reps, stream.child(1))?)?;
        push("b2", bootstrap_b2(panel, opts.boot_reps, stream.child(2))?)?;
    }

    let counts = panel.assignment().counts();
    let shares = AdoptionShares::from_counts(counts);
    let groups = AdoptionDate::all(t_max)
        .map(|a| GroupEntry {
            date: a.to_string(),
            count: counts.count(a),
            share: shares.share(a),
        })
        .collect();

    let mut rows = Vec::new();
    for period in 1..=t_max {
        for date in AdoptionDate::all(t_max) {
            rows.push(WeightRow {
                period,
                date: date.to_string(),
                g: weights.g(period, date),
                gamma: weights.gamma(period, date),
            });
        }
    }

    Ok(EstimateReport {
        n_units: panel.n_units(),
        n_periods: t_max,
        groups,
        tau_hat: tau,
        decomposition: DecompositionEntry {
            current: parts.term_current,
            future: parts.term_future,
            past: parts.term_past,
            total: parts.total,
        },
        variances,
        weights: WeightsEntry {
            denom: weights.denom(),
            gamma_plus: (1..=t_max).map(|t| weights.gamma_plus(t)).collect(),
            gamma_minus: (1..=t_max).map(|t| weights.gamma_minus(t)).collect(),
            rows,
        },
        seed: opts.seed,
        boot_reps: opts.boot_reps,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn render_estimate_table(r: &EstimateReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Panel: {} units x {} periods\n",
        r.n_units, r.n_periods
    ));
    out.push_str("Groups:\n");
    for g in &r.groups {
        out.push_str(&format!(
            "  adoption {:>6}  n = {:<4} share = {:.6}\n",
            g.date, g.count, g.share
        ));
    }
    out.push_str(&format!("\nDID estimate: {:.6}\n", r.tau_hat));
    out.push_str(&format!(
        "Decomposition: current = {:.6}, future = {:.6}, past = {:.6}, total = {:.6}\n",
        r.decomposition.current, r.decomposition.future, r.decomposition.past, r.decomposition.total
    ));
    out.push_str("\nVariance estimates (95% CI):\n");
    for m in &r.variances {
        out.push_str(&format!(
            "  {:<4} {:>12.6}  [{:.6}, {:.6}]\n",
            m.method, m.variance, m.ci_low, m.ci_high
        ));
    }
    out.push_str(&format!("\nWeights (denom = {:.6}):\n", r.weights.denom));
    for row in &r.weights.rows {
        out.push_str(&format!(
            "  t = {} a = {:>6}  g = {:>10.6}  gamma = {:>10.6}\n",
            row.period, row.date, row.g, row.gamma
        ));
    }
    out
}

fn render_estimate_csv(r: &EstimateReport) -> String {
    let mut out = String::from("key,value\n");
    out.push_str(&format!("n_units,{}\n", r.n_units));
    out.push_str(&format!("n_periods,{}\n", r.n_periods));
    for g in &r.groups {
        out.push_str(&format!("count.{},{}\n", g.date, g.count));
        out.push_str(&format!("share.{},{}\n", g.date, g.share));
    }
    out.push_str(&format!("tau_hat,{}\n", r.tau_hat));
    out.push_str(&format!("decomposition.current,{}\n", r.decomposition.current));
    out.push_str(&format!("decomposition.future,{}\n", r.decomposition.future));
    out.push_str(&format!("decomposition.past,{}\n", r.decomposition.past));
    out.push_str(&format!("decomposition.total,{}\n", r.decomposition.total));
    for m in &r.variances {
        out.push_str(&format!("variance.{},{}\n", m.method, m.variance));
        out.push_str(&format!("ci.{}.low,{}\n", m.method, m.ci_low));
        out.push_str(&format!("ci.{}.high,{}\n", m.method, m.ci_high));
    }
    out.push_str(&format!("weights.denom,{}\n", r.weights.denom));
    for (t, (p, m)) in r.weights.gamma_plus.iter().zip(&r.weights.gamma_minus).enumerate() {
        out.push_str(&format!("gamma_plus.{},{}\n", t + 1, p));
        out.push_str(&format!("gamma_minus.{},{}\n", t + 1, m));
    }
    for row in &r.weights.rows {
        out.push_str(&format!("g.{}.{},{}\n", row.period, row.date, row.g));
        out.push_str(&format!("gamma.{}.{},{}\n", row.period, row.date, row.gamma));
    }
    out
}

/// What `simulate` should run.
#[derive(Debug, Clone)]
pub enum SimulateRequest {
    /// All sixteen study configurations.
    All { seed: u64, n_sims: usize, n_boot: usize },
    /// A single configuration.
    One(SimConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimFormat {
    Csv,
    Json,
}

pub fn run_simulate(request: &SimulateRequest, format: SimFormat) -> Result<String> {
    let reports: Vec<SimReport> = match request {
        SimulateRequest::All { seed, n_sims, n_boot } => table1(*seed, *n_sims, *n_boot)?,
        SimulateRequest::One(config) => vec![run_simulation(config)?],
    };
    Ok(match format {
        SimFormat::Csv => reports_to_csv(&reports),
        SimFormat::Json => to_json(&reports),
    })
}

#[derive(Debug, Clone)]
pub struct OracleOptions {
    pub n: usize,
    pub t: u32,
    /// Counts for adoption dates `1..=K` (and `never` when the list has
    /// `t + 1` entries); unmentioned dates get zero.
    pub counts: Vec<usize>,
    pub seed: u64,
    pub sigma: f64,
    pub effect: f64,
}

/// Outcome of one oracle check.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub status: String,
    pub detail: String,
}

/// Build a seeded population, enumerate the whole assignment support, and
/// verify the closed-form estimand and variance against brute force, plus
/// the conservative direction of the variance estimator.
///
/// Returns the rendered report and whether every applicable check passed.
pub fn run_oracle(opts: &OracleOptions) -> Result<(String, bool)> {
    if opts.counts.len() > opts.t as usize + 1 {
        return Err(Error::Invalid(format!(
            "got {} counts for {} adoption dates",
            opts.counts.len(),
            opts.t + 1
        )));
    }
    let mut pairs = Vec::new();
    for (k, &c) in opts.counts.iter().enumerate() {
        let date = if k == opts.t as usize {
            AdoptionDate::Never
        } else {
            AdoptionDate::At(k as u32 + 1)
        };
        pairs.push((date, c));
    }
    let counts = DesignCounts::new(opts.t, &pairs)?;
    if counts.n_units() != opts.n {
        return Err(Error::Invalid(format!(
            "counts sum to {}, but --n is {}",
            counts.n_units(),
            opts.n
        )));
    }

    // A seeded additive population with a constant effect plus noise; with
    // sigma = 0 every check holds exactly.
    let mut rng = RngStream::new(opts.seed, 0).rng();
    let pot = PotentialOutcomeTable::from_fn(opts.n, opts.t, |i, t, a| {
        0.5 * i as f64 + t as f64 + opts.effect * exposure(a, t)
            + opts.sigma * standard_normal(&mut rng)
    })?;

    let moments = oracle_moments(&pot, &counts)?;
    let shares = AdoptionShares::from_counts(&counts);
    let estimand = expected_estimand(&pot, &shares, EstimandMode::Full)?;
    let v_exact = exact_variance(&pot, &counts)?;

    let tol = 1e-9;
    let mut checks = Vec::new();
    let mut all_pass = true;

    let mean_ok = (moments.mean - estimand).abs() <= tol;
    all_pass &= mean_ok;
    checks.push(OracleCheck {
        name: "estimand".into(),
        status: if mean_ok { "PASS" } else { "FAIL" }.into(),
        detail: format!("enumerated mean {} vs closed form {}", moments.mean, estimand),
    });

    let var_ok = (moments.variance - v_exact).abs() <= tol;
    all_pass &= var_ok;
    checks.push(OracleCheck {
        name: "exact-variance".into(),
        status: if var_ok { "PASS" } else { "FAIL" }.into(),
        detail: format!("enumerated variance {} vs closed form {}", moments.variance, v_exact),
    });

    // Mean of the conservative estimator over the support, when every
    // weighted group has at least two units.
    let mut vdid_sum = 0.0;
    let mut m = 0usize;
    let mut degenerate: Option<Error> = None;
    for assignment in enumerate_assignments(&counts)? {
        let panel = crate::panel::realize(&pot, &assignment)?;
        match conservative_estimator(&panel) {
            Ok(v) => {
                vdid_sum += v;
                m += 1;
            }
            Err(e @ Error::DegenerateGroup { .. }) => {
                degenerate = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    match degenerate {
        Some(e) => {
            checks.push(OracleCheck {
                name: "conservative".into(),
                status: "SKIP".into(),
                detail: format!("{e}"),
            });
        }
        None => {
            let mean_vdid = vdid_sum / m as f64;
            let ok = mean_vdid >= v_exact - tol;
            all_pass &= ok;
            checks.push(OracleCheck {
                name: "conservative".into(),
                status: if ok { "PASS" } else { "FAIL" }.into(),
                detail: format!("enumerated mean {} vs exact variance {}", mean_vdid, v_exact),
            });
        }
    }

    let mut out = format!(
        "oracle: N = {}, T = {}, {} assignments\n",
        opts.n,
        opts.t,
        crate::design::arrangement_count(&counts)
    );
    for c in &checks {
        out.push_str(&format!("{:<16} {:<4} {}\n", c.name, c.status, c.detail));
    }
    Ok((out, all_pass))
}

#[derive(Debug, Clone, Serialize)]
pub struct PretestReport {
    pub p_value: f64,
    pub n_period2: usize,
    pub n_never: usize,
    pub permutations: usize,
    pub seed: u64,
}

pub fn run_pretest(
    path: &Path,
    permutations: usize,
    seed: u64,
    format: OutputFormat,
) -> Result<String> {
    let loaded = load_panel_csv(path)?;
    let mut rng = RngStream::new(seed, 0).rng();
    let p = pretest_independence(&loaded.panel, permutations, &mut rng)?;
    let dates = loaded.panel.assignment().dates();
    let report = PretestReport {
        p_value: p,
        n_period2: dates.iter().filter(|d| **d == AdoptionDate::At(2)).count(),
        n_never: dates.iter().filter(|d| **d == AdoptionDate::Never).count(),
        permutations,
        seed,
    };
    Ok(match format {
        OutputFormat::Json => to_json(&report),
        OutputFormat::Csv => format!(
            "key,value\np_value,{}\nn_period2,{}\nn_never,{}\npermutations,{}\nseed,{}\n",
            report.p_value, report.n_period2, report.n_never, report.permutations, report.seed
        ),
        OutputFormat::Table => format!(
            "Pretest of first-period balance between period-2 adopters and never-adopters\n\
             groups: n_period2 = {}, n_never = {}\n\
             permutations: {}\n\
             p-value: {:.6}\n",
            report.n_period2, report.n_never, report.permutations, report.p_value
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy_csv() -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(
            f,
            "unit,time,outcome,adoption\n\
             a,1,0,2\na,2,3,2\n\
             b,1,0,2\nb,2,5,2\n\
             c,1,0,never\nc,2,1,never\n\
             d,1,0,never\nd,2,1,never\n"
        )
        .unwrap();
        f
    }

    #[test]
    fn estimate_matches_hand_computation() {
        let f = toy_csv();
        let opts = EstimateOptions {
            boot_reps: 50,
            seed: 1,
            skip_bootstrap: false,
            format: OutputFormat::Json,
        };
        let loaded = load_panel_csv(f.path()).unwrap();
        let report = build_estimate_report(&loaded, &opts).unwrap();
        // Difference in second-period means: (3+5)/2 - (1+1)/2 = 3.
        assert!((report.tau_hat - 3.0).abs() < 1e-12);
        assert!((report.decomposition.total - report.tau_hat).abs() < 1e-10);
        assert_eq!(report.variances.len(), 4);
        for m in &report.variances {
            assert!(m.ci_low <= m.ci_high);
        }
    }

    #[test]
    fn estimate_json_round_trips() {
        let f = toy_csv();
        let opts = EstimateOptions {
            boot_reps: 20,
            seed: 1,
            skip_bootstrap: true,
            format: OutputFormat::Json,
        };
        let out = run_estimate(f.path(), &opts).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(parsed["n_units"], 4);
        assert_eq!(parsed["variances"].as_array().unwrap().len(), 2);
        assert!((parsed["tau_hat"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn estimate_formats_are_deterministic() {
        let f = toy_csv();
        for format in [OutputFormat::Json, OutputFormat::Table, OutputFormat::Csv] {
            let opts = EstimateOptions { boot_reps: 30, seed: 9, skip_bootstrap: false, format };
            let a = run_estimate(f.path(), &opts).unwrap();
            let b = run_estimate(f.path(), &opts).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn oracle_small_case_passes() {
        let opts = OracleOptions {
            n: 6,
            t: 2,
            counts: vec![0, 3, 3],
            seed: 1,
            sigma: 1.0,
            effect: 1.0,
        };
        let (out, pass) = run_oracle(&opts).unwrap();
        assert!(pass, "{out}");
        assert!(out.contains("estimand         PASS"));
        assert!(out.contains("conservative     PASS"));
    }

    #[test]
    fn oracle_sigma_zero_exact() {
        let opts = OracleOptions {
            n: 6,
            t: 3,
            counts: vec![0, 2, 2, 2],
            seed: 1,
            sigma: 0.0,
            effect: 1.0,
        };
        let (out, pass) = run_oracle(&opts).unwrap();
        assert!(pass, "{out}");
    }

    #[test]
    fn oracle_singleton_group_skips_conservative_check() {
        let opts = OracleOptions {
            n: 6,
            t: 3,
            counts: vec![3, 2, 1],
            seed: 1,
            sigma: 1.0,
            effect: 1.0,
        };
        let (out, pass) = run_oracle(&opts).unwrap();
        assert!(pass, "{out}");
        assert!(out.contains("SKIP"));
    }

    #[test]
    fn oracle_guard_propagates() {
        let opts = OracleOptions {
            n: 30,
            t: 2,
            counts: vec![0, 15, 15],
            seed: 1,
            sigma: 1.0,
            effect: 1.0,
        };
        assert!(matches!(run_oracle(&opts), Err(Error::SupportTooLarge { .. })));
    }

    #[test]
    fn pretest_command_reports() {
        let f = toy_csv();
        let out = run_pretest(f.path(), 99, 3, OutputFormat::Json).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&out).unwrap();
        let p = parsed["p_value"].as_f64().unwrap();
        assert!(p > 0.0 && p <= 1.0);
        assert_eq!(parsed["n_period2"], 2);
        assert_eq!(parsed["n_never"], 2);
    }
}
