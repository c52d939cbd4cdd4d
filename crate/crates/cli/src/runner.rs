//! Executes scenarios: simulates secure bit windows, scores every
//! configured attack on each, runs the requested self-checks, and writes
//! the report files.
//!
//! Output layout under `--out`:
//!
//! ```text
//! out/
//!   trials.csv        one row per (secure bit, attack)
//!   summary.json      aggregated reports; written last, so its presence
//!                     marks a complete run
//!   plots/*.csv       plot data (histograms, sweep fit, tap levels)
//!   plots/plot.py     self-contained matplotlib renderer
//! ```
//!
//! Reproducibility contract: identical (scenario, master_seed, trials) →
//! byte-identical trials.csv and summary.json, independent of `--threads`.
//! Every random stream is derived from the master seed by counter, trials
//! are collected in index order, and all maps are ordered.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use kljn_core::attacks::{
    dc_mains_attack, gaa_derivative_attack, mean_square_attack, separator_reconstruct,
    single_time_compare, DcMainsConfig, DcMainsMode, GaaCalibration, GaaConfig, GeneratorEnd,
    LevelRule, Verdict,
};
use kljn_core::channel::{
    decimate_trace, ladder_vs_lumped_check, simulate_exchange, Arrangement, CableVariant,
    ExchangeSpec, ProtocolSpec, Trace, STREAM_CHECK,
};
use kljn_core::noise::{
    clipped_moment2, clipped_moment4, derivative, derive_seed, gaussianity, generate,
    johnson_variance, mean, variance, NoiseKind, NoiseSpec,
};
use kljn_core::stats::{
    analytic_end_moments, orthogonality_stat, pearson, scaling_fit, signflip_variance_gap,
    AttackTally, Z_95,
};
use kljn_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::plots;
use crate::scenario::{ArtifactComponent, AttackConfig, CheckKind, Scenario};

/// Seed stream for per-sweep-point master seeds; continues the core's
/// stream numbering without colliding with it.
const STREAM_SWEEP: u64 = 5;

/// Disjoint index bases inside STREAM_CHECK, one block per check kind.
const CHECK_ORTHO: u64 = 0;
const CHECK_SEPARATOR: u64 = 1 << 20;
const CHECK_ORACLE: u64 = 2 << 20;
const CHECK_LADDER: u64 = 3 << 20;
const CHECK_NONGAUSS: u64 = 4 << 20;

/// Windows per arrangement for the oracle-moments check.
const ORACLE_WINDOWS: usize = 200;
/// Sample count for the noise-forensics check. Sized so the moment
/// estimates stay sharp even at heavy oversampling (few effective samples
/// per recorded one).
const NONGAUSS_SAMPLES: usize = 1 << 19;

pub const TRIALS_HEADER: &str =
    "scenario,trial,arrangement,attack,truth,guess,abstain,statistic,correct";
pub const LEVELS_HEADER: &str = "scenario,trial,truth,level";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// 0 = let the thread pool pick.
    pub threads: usize,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub trials: u64,
    pub correct: u64,
    pub abstained: u64,
    /// Success probability with abstentions scored as coin flips.
    pub p_hat: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub leak_bits: f64,
}

impl AttackReport {
    fn from_tally(t: &AttackTally) -> Self {
        let (lo, hi) = t.wilson(Z_95);
        AttackReport {
            trials: t.trials,
            correct: t.correct,
            abstained: t.abstained,
            p_hat: t.p_hat(),
            ci95_low: lo,
            ci95_high: hi,
            leak_bits: t.leak_bits(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Attack whose success curve was fitted.
    pub attack: String,
    /// Slope of (p − 1/2) against r_c², in Ω⁻².
    pub theta_prime: f64,
    /// Dimensionless: theta_prime · low_ohm · high_ohm.
    pub theta: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPointReport {
    pub value: f64,
    pub attacks: BTreeMap<String, AttackReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: String,
    pub points: Vec<SweepPointReport>,
    pub fit: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub description: String,
    pub trials_per_point: u64,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attacks: BTreeMap<String, AttackReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub checks: BTreeMap<String, Value>,
}

// ---------------------------------------------------------------------------
// Attack instantiation
// ---------------------------------------------------------------------------

enum BuiltAttack {
    MeanSquare {
        r_low: f64,
        r_high: f64,
    },
    Gaa(Box<GaaCalibration>),
    DcMains(DcMainsConfig),
    SingleTime {
        levels: [f64; 2],
        spread: f64,
        halfwidth: usize,
    },
}

impl BuiltAttack {
    fn name(&self) -> &'static str {
        match self {
            BuiltAttack::MeanSquare { .. } => "mean_square_attack",
            BuiltAttack::Gaa(_) => "gaa_derivative_attack",
            BuiltAttack::DcMains(_) => "dc_mains_attack",
            BuiltAttack::SingleTime { .. } => "single_time_compare",
        }
    }

    fn run(&self, eve: &Trace) -> Verdict {
        match self {
            BuiltAttack::MeanSquare { r_low, r_high } => mean_square_attack(eve, *r_low, *r_high),
            BuiltAttack::Gaa(calib) => gaa_derivative_attack(eve, calib),
            BuiltAttack::DcMains(cfg) => dc_mains_attack(eve, cfg),
            BuiltAttack::SingleTime {
                levels,
                spread,
                halfwidth,
            } => single_time_compare(eve, *levels, *spread, eve.len() / 2, *halfwidth),
        }
    }
}

/// Predicted DC level of the tap voltage u_2 for each hypothesis, from the
/// configured parasitics: a standing current I = (dcA − dcB)/R_Σ puts
/// dcB + I·R_B on Bob's end.
fn dc_levels(p: &ProtocolSpec) -> [f64; 2] {
    let dca = p.parasitic_alice.dc_offset_v;
    let dcb = p.parasitic_bob.dc_offset_v;
    let r_sum = p.low_ohm + p.high_ohm + p.cable.total_resistance_ohm();
    let i_dc = (dca - dcb) / r_sum;
    [dcb + i_dc * p.low_ohm, dcb + i_dc * p.high_ohm]
}

/// Expected standard deviation of the boxcar-smoothed tap sample: the raw
/// tap noise, reduced by the number of correlation times the smoother
/// spans. An abstention threshold, not a precision claim.
fn smoothed_spread(p: &ProtocolSpec, halfwidth: usize, eve_dt: f64) -> f64 {
    let r_c = p.cable.total_resistance_ohm();
    let lh = analytic_end_moments(p.kappa, p.bandwidth_hz, p.low_ohm, p.high_ohm, r_c);
    let hl = analytic_end_moments(p.kappa, p.bandwidth_hz, p.high_ohm, p.low_ohm, r_c);
    let var_u2 = 0.5 * (lh.u2_sq + hl.u2_sq);
    let k = (2 * halfwidth + 1) as f64;
    let samples_per_tau = 1.0 / (2.0 * p.bandwidth_hz * eve_dt);
    (var_u2 * (samples_per_tau / k).min(1.0)).sqrt()
}

fn build_attacks(sc: &Scenario, proto: &ProtocolSpec) -> Result<Vec<BuiltAttack>> {
    let eve_dt = sc.protocol.eve_decimate as f64 / proto.sample_rate_hz;
    sc.attacks
        .iter()
        .map(|a| -> Result<BuiltAttack> {
            Ok(match a {
                AttackConfig::MeanSquareAttack => BuiltAttack::MeanSquare {
                    r_low: proto.low_ohm,
                    r_high: proto.high_ohm,
                },
                AttackConfig::GaaDerivativeAttack {
                    velocity,
                    decision,
                    calibration_windows,
                    eve_seed,
                    check_dc_consistency,
                } => {
                    let cfg = GaaConfig {
                        velocity: *velocity,
                        decision: *decision,
                        calibration_windows: *calibration_windows,
                        eve_seed: *eve_seed,
                        check_dc_consistency: *check_dc_consistency,
                        decimate: sc.protocol.eve_decimate,
                        ..GaaConfig::default()
                    };
                    BuiltAttack::Gaa(Box::new(GaaCalibration::build(proto, cfg)?))
                }
                AttackConfig::DcMainsAttack {
                    component,
                    freq_hz,
                    assumed_source_v,
                    floor_mult,
                } => {
                    let mode = match component {
                        ArtifactComponent::Dc => DcMainsMode::Dc,
                        ArtifactComponent::Mains => DcMainsMode::Mains {
                            freq_hz: freq_hz.ok_or_else(|| {
                                Error::invalid("dc_mains_attack", "mains needs freq_hz")
                            })?,
                        },
                    };
                    let rule = match assumed_source_v {
                        Some(v) => LevelRule::AbsoluteLevel {
                            assumed_source_v: *v,
                        },
                        None => LevelRule::Ratio,
                    };
                    BuiltAttack::DcMains(DcMainsConfig {
                        mode,
                        r_low: proto.low_ohm,
                        r_high: proto.high_ohm,
                        r_c: proto.cable.total_resistance_ohm(),
                        rule,
                        floor_mult: *floor_mult,
                    })
                }
                AttackConfig::SingleTimeCompare { smooth_halfwidth } => BuiltAttack::SingleTime {
                    levels: dc_levels(proto),
                    spread: smoothed_spread(proto, *smooth_halfwidth, eve_dt),
                    halfwidth: *smooth_halfwidth,
                },
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Trial execution
// ---------------------------------------------------------------------------

struct TrialOutcome {
    trial: u64,
    arrangement: &'static str,
    truth: bool,
    verdicts: Vec<Verdict>,
    u2_level: f64,
}

struct PointData {
    reports: BTreeMap<String, AttackReport>,
    trial_rows: Vec<String>,
    level_rows: Vec<String>,
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn run_point(
    label: &str,
    proto: &ProtocolSpec,
    attacks: &[BuiltAttack],
    decimate: usize,
    trials: u64,
) -> Result<PointData> {
    let indices = proto.secure_bit_indices(trials as usize);
    let outcomes: Vec<TrialOutcome> = indices
        .par_iter()
        .enumerate()
        .map(|(k, &idx)| -> Result<TrialOutcome> {
            let arr = proto.arrangement_for(idx);
            let full = simulate_exchange(&proto.exchange_for(idx))?;
            let eve_owned;
            let eve: &Trace = if decimate > 1 {
                eve_owned = decimate_trace(&full, decimate)?;
                &eve_owned
            } else {
                &full
            };
            Ok(TrialOutcome {
                trial: k as u64,
                arrangement: arr.label(),
                truth: arr.bob_is_high(),
                verdicts: attacks.iter().map(|a| a.run(eve)).collect(),
                u2_level: mean(&eve.u_2),
            })
        })
        .collect::<Result<_>>()?;

    let mut tallies: Vec<AttackTally> =
        attacks.iter().map(|a| AttackTally::new(a.name())).collect();
    let mut trial_rows = Vec::with_capacity(outcomes.len() * attacks.len());
    let mut level_rows = Vec::with_capacity(outcomes.len());
    for out in &outcomes {
        for (a, v) in out.verdicts.iter().enumerate() {
            let correct = v.is_correct(out.truth);
            tallies[a].record(correct == Some(true), v.guess.is_none());
            trial_rows.push(format!(
                "{label},{trial},{arr},{attack},{truth},{guess},{abstain},{stat},{correct}",
                trial = out.trial,
                arr = out.arrangement,
                attack = attacks[a].name(),
                truth = fmt_bool(out.truth),
                guess = v.guess.map(fmt_bool).unwrap_or(""),
                abstain = fmt_bool(v.guess.is_none()),
                stat = v.statistic,
                correct = correct.map(fmt_bool).unwrap_or(""),
            ));
        }
        level_rows.push(format!(
            "{label},{},{},{}",
            out.trial,
            fmt_bool(out.truth),
            out.u2_level
        ));
    }
    let reports = tallies
        .iter()
        .map(|t| (t.name.clone(), AttackReport::from_tally(t)))
        .collect();
    Ok(PointData {
        reports,
        trial_rows,
        level_rows,
    })
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

/// Exchange with explicit seeds on the check stream (index block `base`),
/// alternating secure arrangements.
fn check_exchange(proto: &ProtocolSpec, base: u64, t: usize) -> ExchangeSpec {
    let arr = if t % 2 == 0 {
        Arrangement::LowHigh
    } else {
        Arrangement::HighLow
    };
    let (r_alice, r_bob) = proto.resistors_for(arr);
    ExchangeSpec {
        r_alice_ohm: r_alice,
        r_bob_ohm: r_bob,
        cable: proto.cable.clone(),
        kind: proto.kind.clone(),
        bandwidth_hz: proto.bandwidth_hz,
        kappa: proto.kappa,
        sample_rate_hz: proto.sample_rate_hz,
        n_samples: proto.window_samples(),
        seed_alice: derive_seed(proto.master_seed, STREAM_CHECK, base + 2 * t as u64),
        seed_bob: derive_seed(proto.master_seed, STREAM_CHECK, base + 2 * t as u64 + 1),
        parasitic_alice: proto.parasitic_alice,
        parasitic_bob: proto.parasitic_bob,
    }
}

fn check_orthogonality(proto: &ProtocolSpec, traces: usize) -> Result<Value> {
    let n_eff = proto.n_oc;
    let rho_bound = 3.0 / n_eff.sqrt();
    let gap_bound = 6.0 / n_eff.sqrt();
    let (mut rho_ok, mut gap_ok) = (0usize, 0usize);
    let (mut worst_rho, mut worst_gap) = (0.0f64, 0.0f64);
    for t in 0..traces {
        let trace = simulate_exchange(&check_exchange(proto, CHECK_ORTHO, t))?;
        let rho = orthogonality_stat(&trace.u_2, &trace.i)?.abs();
        let gap = signflip_variance_gap(&trace.u_2, &trace.i, proto.low_ohm)?;
        worst_rho = worst_rho.max(rho);
        worst_gap = worst_gap.max(gap);
        rho_ok += usize::from(rho < rho_bound);
        gap_ok += usize::from(gap < gap_bound);
    }
    let needed = (0.95 * traces as f64).ceil() as usize;
    Ok(json!({
        "traces": traces,
        "n_eff": n_eff,
        "rho_bound": rho_bound,
        "rho_within": rho_ok,
        "worst_rho": worst_rho,
        "signflip_r_ohm": proto.low_ohm,
        "gap_bound": gap_bound,
        "gap_within": gap_ok,
        "worst_gap": worst_gap,
        "required": needed,
        "pass": rho_ok >= needed && gap_ok >= needed,
    }))
}

fn check_separator(proto: &ProtocolSpec, traces: usize) -> Result<Value> {
    let mut corr_ok = 0usize;
    let mut min_corr = 1.0f64;
    let mut ratios = Vec::with_capacity(traces);
    for t in 0..traces {
        let ex = check_exchange(proto, CHECK_SEPARATOR, t);
        let trace = simulate_exchange(&ex)?;
        let right = separator_reconstruct(&trace, ex.r_bob_ohm, GeneratorEnd::Bob);
        let corr = pearson(&right.samples, &trace.u_b)?;
        min_corr = min_corr.min(corr);
        corr_ok += usize::from(corr > 0.999);

        // The wrong guess is the other catalogue resistor.
        let r_wrong = if ex.r_bob_ohm == proto.high_ohm {
            proto.low_ohm
        } else {
            proto.high_ohm
        };
        let wrong = separator_reconstruct(&trace, r_wrong, GeneratorEnd::Bob);
        ratios.push(wrong.variance() / johnson_variance(proto.kappa, r_wrong, proto.bandwidth_hz));
    }
    let n = ratios.len() as f64;
    let mean_ratio = ratios.iter().sum::<f64>() / n;
    let sd = (ratios.iter().map(|r| (r - mean_ratio).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let tol = 3.0 * sd / n.sqrt();
    let pass = corr_ok == traces && (mean_ratio - 1.0).abs() < tol;
    Ok(json!({
        "traces": traces,
        "min_correct_corr": min_corr,
        "corr_above_0999": corr_ok,
        "wrong_var_mean_ratio": mean_ratio,
        "wrong_var_tolerance": tol,
        "pass": pass,
    }))
}

fn check_oracle_moments(proto: &ProtocolSpec) -> Result<Value> {
    if !matches!(proto.cable.variant, CableVariant::Resistive { .. }) {
        return Err(Error::invalid(
            "checks.oracle_moments",
            "needs a resistive cable",
        ));
    }
    if !proto.parasitic_alice.is_none() || !proto.parasitic_bob.is_none() {
        return Err(Error::invalid(
            "checks.oracle_moments",
            "closed forms assume artifact-free generators",
        ));
    }
    let r_c = proto.cable.total_resistance_ohm();
    let mut per = BTreeMap::new();
    let mut max_z = 0.0f64;
    for (arr_idx, arr) in [Arrangement::LowHigh, Arrangement::HighLow]
        .iter()
        .enumerate()
    {
        let (r_a, r_b) = proto.resistors_for(*arr);
        let oracle = analytic_end_moments(proto.kappa, proto.bandwidth_hz, r_a, r_b, r_c);
        let mut got: [Vec<f64>; 3] = Default::default();
        for w in 0..ORACLE_WINDOWS {
            // Interleave arrangements inside the shared index block.
            let t = 2 * w + arr_idx;
            let trace = simulate_exchange(&check_exchange(proto, CHECK_ORACLE, t))?;
            got[0].push(variance(&trace.u_1));
            got[1].push(variance(&trace.u_2));
            got[2].push(variance(&trace.i));
        }
        for (name, samples, want) in [
            ("u1_sq", &got[0], oracle.u1_sq),
            ("u2_sq", &got[1], oracle.u2_sq),
            ("i_sq", &got[2], oracle.i_sq),
        ] {
            let n = samples.len() as f64;
            let m = samples.iter().sum::<f64>() / n;
            let sd = (samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let z = (m - want) / (sd / n.sqrt());
            max_z = max_z.max(z.abs());
            per.insert(format!("{}_{}", arr.label(), name), json!({ "z": z }));
        }
    }
    Ok(json!({
        "windows_per_arrangement": ORACLE_WINDOWS,
        "per_statistic": per,
        "max_abs_z": max_z,
        "pass": max_z < 3.0,
    }))
}

fn check_ladder_lumped(proto: &ProtocolSpec) -> Result<Value> {
    let CableVariant::Ladder { segments, .. } = proto.cable.variant else {
        return Err(Error::invalid(
            "checks.ladder_lumped",
            "needs a ladder cable",
        ));
    };
    let ex = check_exchange(proto, CHECK_LADDER, 0);
    let base = ladder_vs_lumped_check(&ex)?;
    let mut fine = ex.clone();
    if let CableVariant::Ladder { segments: s, .. } = &mut fine.cable.variant {
        *s = segments * 2;
    }
    let doubled = ladder_vs_lumped_check(&fine)?;
    Ok(json!({
        "segments": segments,
        "deviation": base.deviation,
        "deviation_doubled_segments": doubled.deviation,
        "tolerance": 1e-3,
        "pass": base.deviation < 1e-3 && doubled.deviation < 1e-3,
    }))
}

fn check_nongaussian(proto: &ProtocolSpec) -> Result<Value> {
    let spec = NoiseSpec {
        kind: proto.kind.clone(),
        bandwidth_hz: proto.bandwidth_hz,
        kappa: proto.kappa,
        sample_rate_hz: proto.sample_rate_hz,
        seed: derive_seed(proto.master_seed, STREAM_CHECK, CHECK_NONGAUSS),
    };
    let sig = generate(&spec, NONGAUSS_SAMPLES)?;
    let sig_report = gaussianity(&sig)?;
    let deriv_report = gaussianity(&derivative(&sig)?)?;
    let expected = match proto.kind {
        NoiseKind::ClippedGaussian { clip_sigma } => {
            let m2 = clipped_moment2(clip_sigma);
            clipped_moment4(clip_sigma) / (m2 * m2) - 3.0
        }
        _ => 0.0,
    };
    // Var(excess kurtosis) ≈ 24/n for near-Gaussian data; n_effective
    // accounts for the filter's autocorrelation.
    let tol = 3.0 * (24.0 / sig_report.n_effective).sqrt();
    let shape_ok = (sig_report.excess_kurtosis - expected).abs() < tol;
    let deriv_clause =
        expected == 0.0 || deriv_report.excess_kurtosis.abs() > sig_report.excess_kurtosis.abs();
    Ok(json!({
        "n": NONGAUSS_SAMPLES,
        "n_effective": sig_report.n_effective,
        "signal_skewness": sig_report.skewness,
        "signal_excess_kurtosis": sig_report.excess_kurtosis,
        "expected_excess_kurtosis": expected,
        "tolerance": tol,
        "derivative_excess_kurtosis": deriv_report.excess_kurtosis,
        "derivative_more_nongaussian": deriv_report.excess_kurtosis.abs()
            > sig_report.excess_kurtosis.abs(),
        "pass": shape_ok && deriv_clause,
    }))
}

fn run_checks(sc: &Scenario, proto: &ProtocolSpec) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    for check in &sc.checks {
        let value = match check {
            CheckKind::Orthogonality => check_orthogonality(proto, sc.trials as usize)?,
            CheckKind::SeparatorFidelity => check_separator(proto, sc.trials as usize)?,
            CheckKind::OracleMoments => check_oracle_moments(proto)?,
            CheckKind::LadderLumped => check_ladder_lumped(proto)?,
            CheckKind::NongaussianForensics => check_nongaussian(proto)?,
        };
        out.insert(check.name().to_string(), value);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

fn csv_text(header: &str, rows: &[String]) -> String {
    let mut text =
        String::with_capacity(header.len() + 1 + rows.iter().map(|r| r.len() + 1).sum::<usize>());
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    text
}

/// Run a validated scenario and write all report files. Returns the summary
/// that was written.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<Summary> {
    let mut sc = sc.clone();
    if let Some(t) = opts.trials {
        sc.trials = t;
    }
    if let Some(s) = opts.seed {
        sc.master_seed = s;
    }
    sc.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;

    let mut trial_rows: Vec<String> = Vec::new();
    let mut level_rows: Vec<String> = Vec::new();
    let mut attacks_report = BTreeMap::new();
    let mut sweep_report = None;

    match &sc.sweep {
        // Checks-only scenarios skip trial simulation entirely; the CSVs
        // keep their headers so downstream parsing stays uniform.
        None if sc.attacks.is_empty() => {}
        None => {
            let proto = sc.base_protocol();
            let attacks = build_attacks(&sc, &proto)?;
            let data = pool.install(|| {
                run_point(
                    &sc.name,
                    &proto,
                    &attacks,
                    sc.protocol.eve_decimate,
                    sc.trials,
                )
            })?;
            attacks_report = data.reports;
            trial_rows = data.trial_rows;
            level_rows = data.level_rows;
        }
        Some(sweep) => {
            let mut points = Vec::with_capacity(sweep.values.len());
            for (pi, &value) in sweep.values.iter().enumerate() {
                let sub = sc.with_sweep_value(value);
                let mut proto = sub.base_protocol();
                proto.master_seed = derive_seed(sc.master_seed, STREAM_SWEEP, pi as u64);
                let attacks = build_attacks(&sub, &proto)?;
                let label = sc.point_label(value);
                let data = pool.install(|| {
                    run_point(
                        &label,
                        &proto,
                        &attacks,
                        sub.protocol.eve_decimate,
                        sub.trials,
                    )
                })?;
                trial_rows.extend(data.trial_rows);
                level_rows.extend(data.level_rows);
                points.push(SweepPointReport {
                    value,
                    attacks: data.reports,
                });
            }
            // Fit the first configured attack's success curve.
            let fit_attack = sc.attacks[0].name();
            let xs: Vec<f64> = points.iter().map(|p| p.value).collect();
            let ps: Vec<f64> = points.iter().map(|p| p.attacks[fit_attack].p_hat).collect();
            let fit = scaling_fit(&xs, &ps, sc.protocol.low_ohm, sc.protocol.high_ohm)?;
            sweep_report = Some(SweepReport {
                parameter: sweep.parameter.name().to_string(),
                points,
                fit: FitReport {
                    attack: fit_attack.to_string(),
                    theta_prime: fit.theta_prime,
                    theta: fit.theta,
                    r_squared: fit.r_squared,
                },
            });
        }
    }

    let checks = run_checks(&sc, &sc.base_protocol())?;

    let summary = Summary {
        scenario: sc.name.clone(),
        description: sc.description.clone(),
        trials_per_point: sc.trials,
        master_seed: sc.master_seed,
        attacks: attacks_report,
        sweep: sweep_report,
        checks,
    };

    let out = &opts.out_dir;
    let plots_dir = out.join("plots");
    fs::create_dir_all(&plots_dir)?;
    let trials_text = csv_text(TRIALS_HEADER, &trial_rows);
    fs::write(out.join("trials.csv"), &trials_text)?;
    let levels_text = csv_text(LEVELS_HEADER, &level_rows);
    fs::write(plots_dir.join("u2_levels.csv"), &levels_text)?;
    plots::render(out, &summary, &trials_text, Some(&levels_text))?;

    // summary.json goes last: its presence marks a complete run.
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Parse(format!("summary serialization: {e}")))?;
    fs::write(out.join("summary.json"), json + "\n")?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    fn tiny_scenario() -> Scenario {
        Scenario::from_toml_str(
            r#"
name = "tiny"
trials = 6
master_seed = 42
[loop]
low_ohm = 2000.0
high_ohm = 9000.0
n_oc = 10.0
[loop.cable]
variant = "resistive"
resistance_ohm = 200.0
length_m = 2.0
[[attacks]]
op = "mean_square_attack"
"#,
        )
        .unwrap()
    }

    #[test]
    fn run_writes_the_full_report_layout() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out_dir: dir.path().to_path_buf(),
            threads: 1,
            trials: None,
            seed: None,
        };
        let summary = run_scenario(&tiny_scenario(), &opts).unwrap();
        assert_eq!(summary.trials_per_point, 6);
        let rep = &summary.attacks["mean_square_attack"];
        assert_eq!(rep.trials, 6);
        assert!(rep.p_hat >= 0.0 && rep.p_hat <= 1.0);

        let trials = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
        let mut lines = trials.lines();
        assert_eq!(lines.next().unwrap(), TRIALS_HEADER);
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 6);
        for row in &rows {
            assert!(row.starts_with("tiny,"), "row: {row}");
            assert_eq!(row.split(',').count(), 9, "row: {row}");
        }
        assert!(dir.path().join("summary.json").exists());
        assert!(dir.path().join("plots/u2_levels.csv").exists());
        assert!(dir.path().join("plots/plot.py").exists());

        // Reload the summary through serde to pin the schema.
        let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let back: Summary = serde_json::from_str(&text).unwrap();
        assert_eq!(back, summary);
    }

    #[test]
    fn thread_count_does_not_change_any_output_byte() {
        let run = |threads: usize| {
            let dir = tempfile::tempdir().unwrap();
            let opts = RunOptions {
                out_dir: dir.path().to_path_buf(),
                threads,
                trials: None,
                seed: None,
            };
            run_scenario(&tiny_scenario(), &opts).unwrap();
            (
                std::fs::read(dir.path().join("trials.csv")).unwrap(),
                std::fs::read(dir.path().join("summary.json")).unwrap(),
            )
        };
        let (t1, s1) = run(1);
        let (t4, s4) = run(4);
        assert_eq!(t1, t4, "trials.csv must not depend on the thread count");
        assert_eq!(s1, s4, "summary.json must not depend on the thread count");
    }

    #[test]
    fn overrides_change_trials_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out_dir: dir.path().to_path_buf(),
            threads: 1,
            trials: Some(3),
            seed: Some(7),
        };
        let summary = run_scenario(&tiny_scenario(), &opts).unwrap();
        assert_eq!(summary.trials_per_point, 3);
        assert_eq!(summary.master_seed, 7);
    }

    #[test]
    fn sweep_runs_emit_per_point_reports_and_a_fit() {
        let mut sc = tiny_scenario();
        sc.sweep = Some(crate::scenario::Sweep {
            parameter: crate::scenario::SweepParameter::CableResistanceOhm,
            values: vec![100.0, 400.0],
        });
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out_dir: dir.path().to_path_buf(),
            threads: 1,
            trials: None,
            seed: None,
        };
        let summary = run_scenario(&sc, &opts).unwrap();
        assert!(summary.attacks.is_empty());
        let sweep = summary.sweep.expect("sweep report");
        assert_eq!(sweep.points.len(), 2);
        assert_eq!(sweep.fit.attack, "mean_square_attack");
        assert!(sweep.fit.theta_prime.is_finite());

        let trials = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
        assert!(
            trials.contains("tiny@100,"),
            "sweep rows carry point labels"
        );
        assert!(trials.contains("tiny@400,"));
        assert!(dir.path().join("plots/sweep_fit.csv").exists());
    }

    #[test]
    fn dc_level_prediction_matches_the_divider() {
        let sc = Scenario::from_toml_str(
            r#"
name = "lv"
trials = 1
master_seed = 1
[loop]
low_ohm = 1000.0
high_ohm = 10000.0
[loop.cable]
variant = "series_rl"
resistance_ohm = 200.0
inductance_h = 2e-6
length_m = 2.0
[loop.parasitic_alice]
dc_offset_v = 1.07
[[attacks]]
op = "single_time_compare"
"#,
        )
        .unwrap();
        let proto = sc.base_protocol();
        let levels = dc_levels(&proto);
        let i_dc = 1.07 / 11_200.0;
        assert!((levels[0] - i_dc * 1000.0).abs() < 1e-12);
        assert!((levels[1] - i_dc * 10_000.0).abs() < 1e-12);
        // Spread shrinks when the smoother widens.
        let narrow = smoothed_spread(&proto, 5, 1e-5);
        let wide = smoothed_spread(&proto, 200, 1e-5);
        assert!(wide < narrow);
    }
}
