//! Eavesdropping strategies against recorded exchange windows.
//!
//! Every attack here is a pure function of a [`Trace`] plus public loop
//! parameters (resistor catalogue, cable model): Eve sees the wire, never
//! the generators. Hypotheses are indexed `0` = "Bob holds the low
//! resistor", `1` = "Bob holds the high resistor", and a guess of
//! `Some(true)` claims Bob is high. Abstention is an explicit outcome and
//! is scored as half a success by the tally layer, so an attack gains
//! nothing by refusing hard windows.

use serde::{Deserialize, Serialize};

use crate::channel::{
    decimate_trace, simulate_exchange, Arrangement, EveTap, ExchangeSpec, ProtocolSpec, Trace,
    STREAM_EVE,
};
use crate::noise::{derivative, derive_seed, mean, variance, ParasiticSpec, Signal};
use crate::{Error, Result};

/// Default seed for Eve's private calibration ensembles.
pub const DEFAULT_EVE_SEED: u64 = 0x0DD_BA11;

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

/// Outcome of one attack on one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// `Some(true)` = Eve claims Bob holds the high resistor; `None` = abstain.
    pub guess: Option<bool>,
    /// Signed decision statistic. For discrepancy-based attacks this is
    /// `scores[0] - scores[1]`, so positive favours "Bob is high";
    /// `mean_square_attack` instead keeps its documented moment-difference
    /// sign (negative when Bob's end carries the larger mean square).
    pub statistic: f64,
    /// Raw pair backing the decision: per-hypothesis discrepancies for the
    /// calibrated attacks, per-end moments or levels for the direct ones.
    pub scores: [f64; 2],
}

impl Verdict {
    fn abstain(scores: [f64; 2]) -> Self {
        Verdict {
            guess: None,
            statistic: 0.0,
            scores,
        }
    }

    /// Argmin rule over per-hypothesis discrepancies `[bob_low, bob_high]`.
    /// Exact ties and non-finite inputs abstain.
    fn from_discrepancies(d: [f64; 2]) -> Self {
        let stat = d[0] - d[1];
        if !stat.is_finite() || stat == 0.0 {
            return Verdict::abstain(d);
        }
        Verdict {
            guess: Some(stat > 0.0),
            statistic: stat,
            scores: d,
        }
    }

    /// `None` while abstaining, otherwise whether the guess matched.
    pub fn is_correct(&self, truth_bob_high: bool) -> Option<bool> {
        self.guess.map(|g| g == truth_bob_high)
    }
}

// ---------------------------------------------------------------------------
// Mean-square (wire resistance) attack
// ---------------------------------------------------------------------------

/// Compare the raw mean-square voltages of the two ends and guess that the
/// end with the larger one hosts the high resistor. With a resistive cable
/// the difference ⟨u_1²⟩ − ⟨u_2²⟩ has closed form κB·R_c²(R_A − R_B)/R_Σ²,
/// so the rule reads the sign of the divider imbalance; with R_c = 0 both
/// ends see the same statistics and the guess is a coin flip.
///
/// The statistic is the difference normalised by ⟨u_1²⟩.
pub fn mean_square_attack(t: &Trace, r_low: f64, r_high: f64) -> Verdict {
    debug_assert!(r_low < r_high, "resistor catalogue must be ordered");
    let n = t.len();
    if n == 0 {
        return Verdict::abstain([0.0; 2]);
    }
    let ms1 = t.u_1.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let ms2 = t.u_2.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if ms1 <= 0.0 || ms2 <= 0.0 {
        return Verdict::abstain([ms1, ms2]);
    }
    let statistic = (ms1 - ms2) / ms1;
    if !statistic.is_finite() || statistic == 0.0 {
        return Verdict::abstain([ms1, ms2]);
    }
    Verdict {
        guess: Some(ms2 > ms1),
        statistic,
        scores: [ms1, ms2],
    }
}

// ---------------------------------------------------------------------------
// Generator reconstruction (the "separator")
// ---------------------------------------------------------------------------

/// Which generator a reconstruction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorEnd {
    Alice,
    Bob,
}

/// Reconstruct one generator's EMF from its end voltage and the loop
/// current. Current is positive flowing Alice → Bob, so the into-end sign
/// differs between the ends:
///
/// ```text
///   Alice:  U_A = u_1 + R_guess·i          Bob:  U_B = u_2 − R_guess·i
/// ```
///
/// With the true resistor value this recovers the generator waveform up to
/// the end-to-end cable drop. With a wrong value Eve synthesises a waveform
/// whose variance matches the resistor she assumed — the reconstruction
/// always looks self-consistent, which is exactly why it carries no bit
/// information on an ideal loop.
pub fn separator_reconstruct(t: &Trace, r_guess: f64, end: GeneratorEnd) -> Signal {
    let samples: Vec<f64> = match end {
        GeneratorEnd::Alice => t
            .u_1
            .iter()
            .zip(&t.i)
            .map(|(u, i)| u + r_guess * i)
            .collect(),
        GeneratorEnd::Bob => t
            .u_2
            .iter()
            .zip(&t.i)
            .map(|(u, i)| u - r_guess * i)
            .collect(),
    };
    Signal::new(samples, t.dt)
}

/// Cumulative trapezoidal integral with zero initial condition.
fn cumtrapz(xs: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for (k, x) in xs.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * dt * (xs[k - 1] + x);
        }
        out.push(acc);
    }
    out
}

/// Current-probe-free reconstruction: estimate the loop current by
/// integrating the end-to-end voltage across the cable inductance,
/// `i_est = ∫u_12 dt / L_c` (zero initial condition), then form
/// `tap + (R_guess/L_c)·∫u_12` — the Alice-end sign convention of
/// [`separator_reconstruct`]. The integral term is statistically orthogonal
/// to the tap voltage, so the output carries no usable arrangement
/// information; the op exists to demonstrate exactly that.
pub fn lossy_integral_reconstruct(
    t: &Trace,
    r_guess: f64,
    l_c: f64,
    tap: EveTap,
) -> Result<Signal> {
    if !(l_c > 0.0) {
        return Err(Error::invalid(
            "lossy_integral_reconstruct",
            "cable inductance must be positive",
        ));
    }
    let u = tap.extract(t);
    let integral = cumtrapz(&t.u_12(), t.dt);
    let g = r_guess / l_c;
    let samples = u.iter().zip(&integral).map(|(u, c)| u + g * c).collect();
    Ok(Signal::new(samples, t.dt))
}

// ---------------------------------------------------------------------------
// Derivative-reconstruction attack
// ---------------------------------------------------------------------------

/// How Eve models the directional propagation velocities that turn the
/// spatial gradient into resistor-dependent reconstruction coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityModel {
    /// Hypothesis-dependent velocities v± = D·R_end/L_c — the two wave
    /// speeds the loop actually supports, one per propagation direction.
    FromResistors,
    /// A single caller-supplied velocity (m/s) shared by both directions:
    /// the original one-wave reading of the attack.
    Fixed(f64),
}

/// Decision rule applied to the reconstructed derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Compare empirical variances against calibrated references — the
    /// efficient test when everything is Gaussian.
    Variance,
    /// Two-sample Kolmogorov–Smirnov distance against calibrated reference
    /// samples, standardised per window. Deliberately variance-blind: it
    /// scores distribution *shape*, which is the channel that matters when
    /// the noise is non-Gaussian.
    KolmogorovSmirnov,
}

/// Tuning for the derivative-reconstruction attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaaConfig {
    pub velocity: VelocityModel,
    pub decision: DecisionRule,
    /// Reference windows Eve simulates per hypothesis.
    pub calibration_windows: usize,
    /// Seed of Eve's private reference ensemble.
    pub eve_seed: u64,
    /// Which voltage Eve's single probe records.
    pub tap: EveTap,
    /// Additionally score the DC consistency of the reconstructed
    /// generators when the cable has series resistance: a standing loop
    /// current is visible as mean(u_12)/R_c, and thermal generators have no
    /// DC of their own, so unexplained reconstruction offsets punish a
    /// hypothesis. With a lossless cable there is nothing to estimate and
    /// the terms are skipped.
    pub check_dc_consistency: bool,
    /// Subsample factor of Eve's capture pipeline (1 = full rate). The
    /// reference ensembles are decimated by the same factor, so pass the
    /// attack windows through [`decimate_trace`](crate::channel::decimate_trace)
    /// with a matching factor.
    pub decimate: usize,
}

impl Default for GaaConfig {
    fn default() -> Self {
        GaaConfig {
            velocity: VelocityModel::FromResistors,
            decision: DecisionRule::Variance,
            calibration_windows: 200,
            eve_seed: DEFAULT_EVE_SEED,
            tap: EveTap::End2,
            check_dc_consistency: true,
            decimate: 1,
        }
    }
}

/// Eve's precomputed reference ensemble for one loop configuration.
/// Build once per scenario, share across windows (the attack itself only
/// reads it).
#[derive(Debug, Clone)]
pub struct GaaCalibration {
    cfg: GaaConfig,
    /// `[hypothesis][end]`: resistor assumed at (Alice, Bob).
    r_pair: [[f64; 2]; 2],
    /// `[hypothesis][end]`: u_12 multiplier of the (Alice, Bob)
    /// reconstructions; Alice adds, Bob subtracts.
    coeff: [[f64; 2]; 2],
    /// `[hypothesis][end]`: (mean, std) of the reconstructed-derivative
    /// variance across the reference ensemble.
    var_ref: [[(f64, f64); 2]; 2],
    /// `[hypothesis][end]`: sorted standardised reference samples for the
    /// Kolmogorov–Smirnov rule (empty unless that rule is selected).
    ks_ref: [[Vec<f64>; 2]; 2],
    /// Std of window means across references: (u_1, u_2, u_12).
    mean_sigma: [f64; 3],
    /// Series resistance of the published cable model.
    r_c: f64,
}

/// Samples per (hypothesis, end) kept for the Kolmogorov–Smirnov reference.
const KS_POOL_TARGET: usize = 4096;

impl GaaCalibration {
    /// Simulate Eve's reference ensembles for both hypotheses under the
    /// published protocol parameters (no parasitics — Eve models the
    /// nominal system). Fails if the cable has no series inductance, since
    /// the reconstruction coefficient R/L_c is then undefined.
    pub fn build(proto: &ProtocolSpec, cfg: GaaConfig) -> Result<Self> {
        proto.cable.validate()?;
        let l_c = proto.cable.total_inductance_h();
        if !(l_c > 0.0) {
            return Err(Error::invalid(
                "gaa_calibration",
                "reconstruction needs an inductive cable model (L_c > 0)",
            ));
        }
        if cfg.calibration_windows < 8 {
            return Err(Error::invalid(
                "gaa_calibration",
                "need at least 8 reference windows",
            ));
        }
        if cfg.decimate == 0 || cfg.decimate > 64 {
            return Err(Error::invalid(
                "gaa_calibration",
                "decimate factor must be in 1..=64",
            ));
        }
        let d = proto.cable.length_m;
        let r_pair = [
            [proto.high_ohm, proto.low_ohm], // hypothesis 0: Bob low
            [proto.low_ohm, proto.high_ohm], // hypothesis 1: Bob high
        ];
        let coeff = match cfg.velocity {
            VelocityModel::FromResistors => [
                [r_pair[0][0] / l_c, r_pair[0][1] / l_c],
                [r_pair[1][0] / l_c, r_pair[1][1] / l_c],
            ],
            VelocityModel::Fixed(v) => {
                if !(v > 0.0) || !(d > 0.0) {
                    return Err(Error::invalid(
                        "gaa_calibration",
                        "fixed velocity and cable length must be positive",
                    ));
                }
                [[v / d; 2]; 2]
            }
        };

        let w = cfg.calibration_windows;
        let mut var_ref = [[(0.0, 0.0); 2]; 2];
        let mut ks_ref: [[Vec<f64>; 2]; 2] = Default::default();
        let mut win_means: [Vec<f64>; 3] = Default::default();
        // Per-window KS contribution so the pool stays near its target size.
        let n_samples = proto.window_samples();
        let stride = ((n_samples * w) / KS_POOL_TARGET).max(1);

        for h in 0..2 {
            let arr = if h == 0 {
                Arrangement::HighLow
            } else {
                Arrangement::LowHigh
            };
            debug_assert_eq!(arr.bob_is_high(), h == 1);
            let mut va = Vec::with_capacity(w);
            let mut vb = Vec::with_capacity(w);
            for k in 0..w {
                let idx = (h * w + k) as u64;
                let ex = ExchangeSpec {
                    r_alice_ohm: r_pair[h][0],
                    r_bob_ohm: r_pair[h][1],
                    cable: proto.cable.clone(),
                    kind: proto.kind.clone(),
                    bandwidth_hz: proto.bandwidth_hz,
                    kappa: proto.kappa,
                    sample_rate_hz: proto.sample_rate_hz,
                    n_samples,
                    seed_alice: derive_seed(cfg.eve_seed, STREAM_EVE, 2 * idx),
                    seed_bob: derive_seed(cfg.eve_seed, STREAM_EVE, 2 * idx + 1),
                    parasitic_alice: ParasiticSpec::default(),
                    parasitic_bob: ParasiticSpec::default(),
                };
                let mut trace = simulate_exchange(&ex)?;
                if cfg.decimate > 1 {
                    trace = decimate_trace(&trace, cfg.decimate)?;
                }
                let (du, u12) = derivative_base(&trace, cfg.tap)?;
                let (ya, yb) = combine(&du, &u12, coeff[h][0], coeff[h][1]);
                va.push(variance(&ya));
                vb.push(variance(&yb));
                win_means[0].push(mean(&trace.u_1));
                win_means[1].push(mean(&trace.u_2));
                win_means[2].push(mean(&u12));
                if cfg.decision == DecisionRule::KolmogorovSmirnov {
                    pool_standardised(&mut ks_ref[h][0], &ya, stride);
                    pool_standardised(&mut ks_ref[h][1], &yb, stride);
                }
            }
            var_ref[h][0] = mean_std(&va)?;
            var_ref[h][1] = mean_std(&vb)?;
            ks_ref[h][0].sort_by(|a, b| a.total_cmp(b));
            ks_ref[h][1].sort_by(|a, b| a.total_cmp(b));
        }

        let mut mean_sigma = [0.0; 3];
        for (slot, col) in mean_sigma.iter_mut().zip(&win_means) {
            *slot = mean_std(col)?.1;
        }

        Ok(GaaCalibration {
            cfg,
            r_pair,
            coeff,
            var_ref,
            ks_ref,
            mean_sigma,
            r_c: proto.cable.total_resistance_ohm(),
        })
    }

    pub fn config(&self) -> &GaaConfig {
        &self.cfg
    }
}

/// Shared front half of the reconstruction: derivative of the tap voltage
/// plus the end-to-end cable voltage.
fn derivative_base(trace: &Trace, tap: EveTap) -> Result<(Vec<f64>, Vec<f64>)> {
    let u = Signal::new(tap.extract(trace), trace.dt);
    let du = derivative(&u)?;
    Ok((du.samples, trace.u_12()))
}

/// The two directional reconstructions:
///   d̂U_A/dt = dU/dt + c_alice·u_12      d̂U_B/dt = dU/dt − c_bob·u_12
fn combine(du: &[f64], u12: &[f64], c_alice: f64, c_bob: f64) -> (Vec<f64>, Vec<f64>) {
    let ya = du.iter().zip(u12).map(|(d, w)| d + c_alice * w).collect();
    let yb = du.iter().zip(u12).map(|(d, w)| d - c_bob * w).collect();
    (ya, yb)
}

/// Sample mean and sample standard deviation (n − 1), with a floor so a
/// pathological zero-spread reference cannot divide by zero downstream.
fn mean_std(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::DegenerateSignal(
            "reference ensemble too small for a spread estimate".into(),
        ));
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let s = (ss / (xs.len() - 1) as f64).sqrt();
    Ok((m, s.max(f64::MIN_POSITIVE)))
}

/// Push every `stride`-th standardised sample into a KS reference pool.
fn pool_standardised(pool: &mut Vec<f64>, ys: &[f64], stride: usize) {
    let m = mean(ys);
    let s = variance(ys).sqrt();
    if s <= 0.0 {
        return;
    }
    pool.extend(ys.iter().step_by(stride).map(|y| (y - m) / s));
}

/// Two-sample Kolmogorov–Smirnov distance between two *sorted* samples.
fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (mut ia, mut ib, mut d) = (0usize, 0usize, 0.0f64);
    while ia < a.len() && ib < b.len() {
        if a[ia] <= b[ib] {
            ia += 1;
        } else {
            ib += 1;
        }
        let gap = (ia as f64 / a.len() as f64 - ib as f64 / b.len() as f64).abs();
        if gap > d {
            d = gap;
        }
    }
    d
}

/// Derivative-reconstruction attack: for each hypothesis, rebuild both
/// directional generator derivatives from the tap voltage and u_12, then
/// score how consistent the window is with Eve's calibrated reference for
/// that hypothesis. The total discrepancy per hypothesis sums
///
/// * variance (or KS) consistency of both reconstructions, and
/// * when the cable is resistive and DC checking is enabled, the
///   standardised DC residuals of the reconstructed generators, using
///   mean(u_12)/R_c as the standing-current estimate.
///
/// Guess = argmin of the total discrepancy; statistic = discrepancy gap.
/// On an ideal loop the two hypotheses are exchangeable by construction
/// and the attack degenerates to a coin flip.
pub fn gaa_derivative_attack(t: &Trace, calib: &GaaCalibration) -> Verdict {
    if t.len() < 4 {
        return Verdict::abstain([0.0; 2]);
    }
    let tap_samples = calib.cfg.tap.extract(t);
    if variance(&tap_samples) <= 0.0 {
        // Zero-noise window: nothing to reconstruct.
        return Verdict::abstain([0.0; 2]);
    }
    let (du, u12) = match derivative_base(t, calib.cfg.tap) {
        Ok(v) => v,
        Err(_) => return Verdict::abstain([0.0; 2]),
    };

    let dc_active = calib.cfg.check_dc_consistency
        && calib.r_c > 0.0
        && calib.mean_sigma.iter().all(|s| *s > 0.0);
    let i_dc = if dc_active {
        mean(&u12) / calib.r_c
    } else {
        0.0
    };
    let m1 = mean(&t.u_1);
    let m2 = mean(&t.u_2);

    let mut totals = [0.0f64; 2];
    for h in 0..2 {
        let (ya, yb) = combine(&du, &u12, calib.coeff[h][0], calib.coeff[h][1]);
        let mut d = match calib.cfg.decision {
            DecisionRule::Variance => {
                let (ma, sa) = calib.var_ref[h][0];
                let (mb, sb) = calib.var_ref[h][1];
                (variance(&ya) - ma).abs() / sa + (variance(&yb) - mb).abs() / sb
            }
            DecisionRule::KolmogorovSmirnov => {
                let mut da = standardise(ya);
                let mut db = standardise(yb);
                da.sort_by(|a, b| a.total_cmp(b));
                db.sort_by(|a, b| a.total_cmp(b));
                ks_distance(&da, &calib.ks_ref[h][0]) + ks_distance(&db, &calib.ks_ref[h][1])
            }
        };
        if dc_active {
            // Reconstructed generator DC under this hypothesis; thermal
            // generators are DC-free, so any residual is evidence against.
            let (r_a, r_b) = (calib.r_pair[h][0], calib.r_pair[h][1]);
            let sig_i = calib.mean_sigma[2] / calib.r_c;
            let sa = (calib.mean_sigma[0].powi(2) + (r_a * sig_i).powi(2)).sqrt();
            let sb = (calib.mean_sigma[1].powi(2) + (r_b * sig_i).powi(2)).sqrt();
            d += (m1 + r_a * i_dc).abs() / sa + (m2 - r_b * i_dc).abs() / sb;
        }
        totals[h] = d;
    }
    Verdict::from_discrepancies(totals)
}

fn standardise(mut ys: Vec<f64>) -> Vec<f64> {
    let m = mean(&ys);
    let s = variance(&ys).sqrt();
    if s > 0.0 {
        for y in &mut ys {
            *y = (*y - m) / s;
        }
    }
    ys
}

// ---------------------------------------------------------------------------
// DC / mains artifact attack
// ---------------------------------------------------------------------------

/// Which spectral component the attack extracts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "component")]
pub enum DcMainsMode {
    /// Window means.
    Dc,
    /// Complex Fourier coefficient magnitude at a mains frequency.
    Mains { freq_hz: f64 },
}

/// How the extracted component pair is turned into a guess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum LevelRule {
    /// Ratio |c_2|/|c_1| against the two divider targets R/(R + R_c).
    /// Needs no knowledge of the artifact amplitude.
    Ratio,
    /// Compare |c_2| against absolute levels U_p·R/R_Σ predicted from an
    /// assumed artifact amplitude. Stronger, but presumes knowledge Eve may
    /// not have; excluded from the shipped scenarios.
    AbsoluteLevel { assumed_source_v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcMainsConfig {
    pub mode: DcMainsMode,
    pub r_low: f64,
    pub r_high: f64,
    /// Series resistance of the cable. With R_c = 0 the two ratio targets
    /// coincide and the attack abstains — a lossless loop shows no divider.
    pub r_c: f64,
    pub rule: LevelRule,
    /// Abstain when an extracted component sits below this multiple of the
    /// estimated coefficient noise floor (no artifact present).
    pub floor_mult: f64,
}

impl DcMainsConfig {
    pub fn dc_ratio(r_low: f64, r_high: f64, r_c: f64) -> Self {
        DcMainsConfig {
            mode: DcMainsMode::Dc,
            r_low,
            r_high,
            r_c,
            rule: LevelRule::Ratio,
            floor_mult: 3.0,
        }
    }
}

/// Magnitude of the (2/n)-normalised Fourier coefficient at `f_hz`, so a
/// pure sinusoid of amplitude A reports ≈ A.
fn fourier_component(xs: &[f64], dt: f64, f_hz: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let w = -2.0 * std::f64::consts::PI * f_hz * dt;
    let (mut re, mut im) = (0.0f64, 0.0f64);
    for (k, x) in xs.iter().enumerate() {
        let ph = w * k as f64;
        re += x * ph.cos();
        im += x * ph.sin();
    }
    2.0 * (re * re + im * im).sqrt() / xs.len() as f64
}

/// Component magnitude plus an estimated noise floor for it.
fn component_and_floor(xs: &[f64], dt: f64, mode: &DcMainsMode) -> (f64, f64) {
    match mode {
        DcMainsMode::Dc => {
            let sig = Signal::new(xs.to_vec(), dt);
            let n_eff = crate::stats::effective_sample_count(&sig).max(1.0);
            // Mean-removed spread: the component itself must not inflate
            // its own floor.
            (mean(xs).abs(), (variance(xs) / n_eff).sqrt())
        }
        DcMainsMode::Mains { freq_hz } => {
            let c = fourier_component(xs, dt, *freq_hz);
            // Probe well-separated nearby bins for the local noise level.
            let t_window = xs.len() as f64 * dt;
            let df = 4.0 / t_window.max(f64::MIN_POSITIVE);
            let nyquist = 0.45 / dt;
            let mut acc = 0.0;
            let mut used = 0usize;
            for k in [3.0, 5.0, 7.0, 9.0, 11.0, 13.0] {
                let f = freq_hz + k * df;
                if f < nyquist {
                    let p = fourier_component(xs, dt, f);
                    acc += p * p;
                    used += 1;
                }
            }
            let floor = if used > 0 {
                (acc / used as f64).sqrt()
            } else {
                // Degenerate short window: fall back on a white-noise bound.
                (2.0 * variance(xs) / xs.len() as f64).sqrt()
            };
            (c, floor)
        }
    }
}

/// Exploit a non-thermal artifact (ground-loop DC or mains pickup) riding
/// on the loop: with a resistive cable the artifact's standing current
/// makes the two end components a resistor divider, so their ratio reads
/// the arrangement directly. If the measured ratio exceeds 1 the artifact
/// sits at Bob's side and the matched target labels Alice's resistor
/// instead, flipping the guess.
pub fn dc_mains_attack(t: &Trace, cfg: &DcMainsConfig) -> Verdict {
    if t.is_empty() {
        return Verdict::abstain([0.0; 2]);
    }
    let (c1, floor1) = component_and_floor(&t.u_1, t.dt, &cfg.mode);
    let (c2, floor2) = component_and_floor(&t.u_2, t.dt, &cfg.mode);
    if c1 < cfg.floor_mult * floor1 || c2 < cfg.floor_mult * floor2 {
        // Components indistinguishable from estimator noise: no artifact.
        return Verdict::abstain([c1, c2]);
    }
    match cfg.rule {
        LevelRule::Ratio => {
            if cfg.r_c <= 0.0 {
                // Both targets degenerate to 1: nothing to compare.
                return Verdict::abstain([c1, c2]);
            }
            if c1 <= 0.0 || c2 <= 0.0 {
                return Verdict::abstain([c1, c2]);
            }
            let t_low = cfg.r_low / (cfg.r_low + cfg.r_c);
            let t_high = cfg.r_high / (cfg.r_high + cfg.r_c);
            let mut r = c2 / c1;
            let inverted = r > 1.0;
            if inverted {
                r = 1.0 / r;
            }
            let d_low = (r.ln() - t_low.ln()).abs();
            let d_high = (r.ln() - t_high.ln()).abs();
            // Matched target names Bob's resistor, or Alice's when the
            // ratio had to be inverted (exactly one end is high on a
            // secure bit).
            let d = if inverted {
                [d_high, d_low]
            } else {
                [d_low, d_high]
            };
            Verdict::from_discrepancies(d)
        }
        LevelRule::AbsoluteLevel { assumed_source_v } => {
            let r_sum = cfg.r_low + cfg.r_high + cfg.r_c;
            let lvl_low = (assumed_source_v * cfg.r_low / r_sum).abs();
            let lvl_high = (assumed_source_v * cfg.r_high / r_sum).abs();
            if lvl_low <= 0.0 || lvl_high <= 0.0 || c2 <= 0.0 {
                return Verdict::abstain([c1, c2]);
            }
            let d = [(c2 / lvl_low).ln().abs(), (c2 / lvl_high).ln().abs()];
            Verdict::from_discrepancies(d)
        }
    }
}

// ---------------------------------------------------------------------------
// Single-sample level comparison
// ---------------------------------------------------------------------------

/// Classify one window from a single smoothed sample of u_2 against two
/// precomputed DC levels (`levels[0]` = Bob-low, `levels[1]` = Bob-high,
/// both including any artifact the attacker modelled). `spread` is the
/// post-smoothing noise standard deviation; when the level gap is smaller
/// than the spread the classes overlap too much and the attack abstains.
/// The smoother is a centred boxcar of `2·smooth_halfwidth + 1` samples,
/// clipped at the window edges.
pub fn single_time_compare(
    t: &Trace,
    levels: [f64; 2],
    spread: f64,
    at: usize,
    smooth_halfwidth: usize,
) -> Verdict {
    if t.is_empty() || !(spread > 0.0) {
        return Verdict::abstain(levels);
    }
    if (levels[1] - levels[0]).abs() < spread {
        return Verdict::abstain(levels);
    }
    let at = at.min(t.len() - 1);
    let lo = at.saturating_sub(smooth_halfwidth);
    let hi = (at + smooth_halfwidth + 1).min(t.len());
    let x = mean(&t.u_2[lo..hi]);
    let d = [
        (x - levels[0]).abs() / spread,
        (x - levels[1]).abs() / spread,
    ];
    Verdict::from_discrepancies(d)
}
