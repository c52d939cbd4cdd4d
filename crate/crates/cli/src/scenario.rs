//! Scenario files: one TOML document describing the loop, the session size,
//! the attacks to score against every secure bit, optional self-checks, and
//! an optional parameter sweep.
//!
//! Everything a run produces is a pure function of the scenario file plus
//! the command-line overrides, so configs are meant to be committed next to
//! the results they generated.

use std::fmt::Write as _;
use std::path::Path;

use kljn_core::attacks::{DecisionRule, VelocityModel, DEFAULT_EVE_SEED};
use kljn_core::channel::ProtocolSpec;
use kljn_core::channel::{CableModel, CableVariant};
use kljn_core::noise::{NoiseKind, ParasiticSpec};
use kljn_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Short identifier; becomes the `scenario` column of trials.csv.
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Secure bits per session (per sweep point when sweeping).
    pub trials: u64,
    pub master_seed: u64,
    #[serde(rename = "loop")]
    pub protocol: LoopConfig,
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
    #[serde(default)]
    pub checks: Vec<CheckKind>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

/// The physical loop template. Defaults reproduce the canonical parameter
/// set used throughout: 5 kHz noise bandwidth, kappa = 1e-9, 100 kS/s,
/// 50 correlation times per bit window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub low_ohm: f64,
    pub high_ohm: f64,
    pub cable: CableModel,
    #[serde(default = "default_noise")]
    pub noise: NoiseKind,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    /// Bit-window length in correlation times tau = 1/(2B).
    #[serde(default = "default_n_oc")]
    pub n_oc: f64,
    #[serde(default)]
    pub parasitic_alice: ParasiticSpec,
    #[serde(default)]
    pub parasitic_bob: ParasiticSpec,
    /// Subsample factor of the eavesdropper's capture pipeline
    /// (1 = records at the loop's own sample rate).
    #[serde(default = "default_one")]
    pub eve_decimate: usize,
}

fn default_noise() -> NoiseKind {
    NoiseKind::Gaussian
}
fn default_bandwidth() -> f64 {
    5e3
}
fn default_kappa() -> f64 {
    1e-9
}
fn default_sample_rate() -> f64 {
    1e5
}
fn default_n_oc() -> f64 {
    50.0
}
fn default_one() -> usize {
    1
}
fn default_velocity() -> VelocityModel {
    VelocityModel::FromResistors
}
fn default_decision() -> DecisionRule {
    DecisionRule::Variance
}
fn default_windows() -> usize {
    200
}
fn default_eve_seed() -> u64 {
    DEFAULT_EVE_SEED
}
fn default_true() -> bool {
    true
}
fn default_floor_mult() -> f64 {
    3.0
}
fn default_halfwidth() -> usize {
    50
}

/// One attack entry. The `op` tag doubles as the attack's name in
/// trials.csv and summary.json, so each op may appear at most once per
/// scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AttackConfig {
    /// Compare the two end-voltage mean squares against the divider
    /// asymmetry of a lossy cable.
    MeanSquareAttack,
    /// Derivative-based generator reconstruction with a simulated
    /// calibration ensemble per hypothesis.
    GaaDerivativeAttack {
        #[serde(default = "default_velocity")]
        velocity: VelocityModel,
        #[serde(default = "default_decision")]
        decision: DecisionRule,
        #[serde(default = "default_windows")]
        calibration_windows: usize,
        #[serde(default = "default_eve_seed")]
        eve_seed: u64,
        #[serde(default = "default_true")]
        check_dc_consistency: bool,
    },
    /// Read the resistive divider from a DC or mains artifact riding on a
    /// generator.
    DcMainsAttack {
        component: ArtifactComponent,
        /// Required when `component = "mains"`.
        #[serde(default)]
        freq_hz: Option<f64>,
        /// When set, compare against absolute predicted levels instead of
        /// the amplitude-free ratio rule.
        #[serde(default)]
        assumed_source_v: Option<f64>,
        #[serde(default = "default_floor_mult")]
        floor_mult: f64,
    },
    /// Nearest-level classification of one smoothed sample of the tap
    /// voltage (only informative with a DC artifact present).
    SingleTimeCompare {
        #[serde(default = "default_halfwidth")]
        smooth_halfwidth: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactComponent {
    Dc,
    Mains,
}

impl AttackConfig {
    /// Canonical name used in trials.csv and summary.json.
    pub fn name(&self) -> &'static str {
        match self {
            AttackConfig::MeanSquareAttack => "mean_square_attack",
            AttackConfig::GaaDerivativeAttack { .. } => "gaa_derivative_attack",
            AttackConfig::DcMainsAttack { .. } => "dc_mains_attack",
            AttackConfig::SingleTimeCompare { .. } => "single_time_compare",
        }
    }
}

/// Loop self-checks that run alongside (or instead of) the attacks and
/// land under `"checks"` in summary.json.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Tap voltage and loop current are uncorrelated on secure bits.
    Orthogonality,
    /// Generator separation: right resistor → faithful waveform, wrong
    /// resistor → the variance the guess implies.
    SeparatorFidelity,
    /// Monte-Carlo second moments vs the closed-form loop moments
    /// (resistive cable only).
    OracleMoments,
    /// Distributed-ladder cable vs its lumped equivalent (ladder only).
    LadderLumped,
    /// Marginal-shape forensics of the generator noise and its derivative.
    NongaussianForensics,
}

impl CheckKind {
    pub fn name(&self) -> &'static str {
        match self {
            CheckKind::Orthogonality => "orthogonality",
            CheckKind::SeparatorFidelity => "separator_fidelity",
            CheckKind::OracleMoments => "oracle_moments",
            CheckKind::LadderLumped => "ladder_lumped",
            CheckKind::NongaussianForensics => "nongaussian_forensics",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    CableResistanceOhm,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::CableResistanceOhm => "cable_resistance_ohm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Scenario> {
        toml::from_str(s).map_err(|e| Error::Parse(format!("scenario: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("serialize: {e}")))
    }

    /// Every physical and structural invariant that can be checked without
    /// simulating. Errors carry the offending key and a remedy where one is
    /// obvious.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains([',', '\n', ' ']) {
            return Err(Error::invalid(
                "name",
                "must be non-empty without commas or whitespace (it becomes a CSV field)",
            ));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be >= 1"));
        }
        let p = &self.protocol;
        if !(p.low_ohm > 0.0) || !(p.high_ohm > 0.0) {
            return Err(Error::invalid("loop.low_ohm/high_ohm", "must be > 0"));
        }
        if !(p.low_ohm < p.high_ohm) {
            return Err(Error::invalid(
                "loop.low_ohm",
                "must be strictly below high_ohm — equal resistors leave no bit to agree on",
            ));
        }
        if !(p.kappa > 0.0) {
            return Err(Error::invalid("loop.kappa", "must be > 0"));
        }
        if !(p.bandwidth_hz > 0.0) {
            return Err(Error::invalid("loop.bandwidth_hz", "must be > 0"));
        }
        if p.sample_rate_hz < 10.0 * p.bandwidth_hz {
            return Err(Error::invalid(
                "loop.sample_rate_hz",
                format!(
                    "band-limit synthesis needs >= 10x oversampling; raise sample_rate_hz to \
                     at least {} or lower bandwidth_hz",
                    10.0 * p.bandwidth_hz
                ),
            ));
        }
        if !(p.n_oc >= 1.0) {
            return Err(Error::invalid("loop.n_oc", "must be >= 1 correlation time"));
        }
        p.cable.validate()?;
        let window = self.base_protocol().window_samples();
        if window < 8 {
            return Err(Error::invalid(
                "loop.n_oc",
                "bit window shorter than 8 samples; raise n_oc or sample_rate_hz",
            ));
        }
        if p.eve_decimate == 0 || p.eve_decimate > 64 {
            return Err(Error::invalid("loop.eve_decimate", "must be in 1..=64"));
        }
        if window / p.eve_decimate < 4 {
            return Err(Error::invalid(
                "loop.eve_decimate",
                "leaves fewer than 4 samples per captured window",
            ));
        }
        for par in [
            ("parasitic_alice", &p.parasitic_alice),
            ("parasitic_bob", &p.parasitic_bob),
        ] {
            if par.1.mains_amplitude_v != 0.0 && !(par.1.mains_freq_hz > 0.0) {
                return Err(Error::invalid(
                    "loop.parasitic",
                    format!("{}: mains pickup needs mains_freq_hz > 0", par.0),
                ));
            }
        }

        if self.attacks.is_empty() && self.checks.is_empty() {
            return Err(Error::invalid(
                "attacks",
                "scenario lists no attacks and no checks — nothing to run",
            ));
        }
        let mut seen: Vec<&str> = Vec::new();
        for a in &self.attacks {
            if seen.contains(&a.name()) {
                return Err(Error::invalid(
                    "attacks",
                    format!("duplicate op {:?} — each attack may appear once", a.name()),
                ));
            }
            seen.push(a.name());
            match a {
                AttackConfig::GaaDerivativeAttack {
                    velocity,
                    calibration_windows,
                    ..
                } => {
                    if !(p.cable.total_inductance_h() > 0.0) {
                        return Err(Error::invalid(
                            "attacks.gaa_derivative_attack",
                            "needs an inductive cable model (lossless or series_rl)",
                        ));
                    }
                    if *calibration_windows < 8 {
                        return Err(Error::invalid(
                            "attacks.gaa_derivative_attack.calibration_windows",
                            "must be >= 8",
                        ));
                    }
                    if let VelocityModel::Fixed(v) = velocity {
                        if !(*v > 0.0) {
                            return Err(Error::invalid(
                                "attacks.gaa_derivative_attack.velocity",
                                "fixed velocity must be > 0",
                            ));
                        }
                    }
                }
                AttackConfig::DcMainsAttack {
                    component,
                    freq_hz,
                    floor_mult,
                    ..
                } => {
                    match (component, freq_hz) {
                        (ArtifactComponent::Mains, None) => {
                            return Err(Error::invalid(
                                "attacks.dc_mains_attack",
                                "component = \"mains\" needs freq_hz",
                            ));
                        }
                        (ArtifactComponent::Mains, Some(f)) if !(*f > 0.0) => {
                            return Err(Error::invalid(
                                "attacks.dc_mains_attack.freq_hz",
                                "must be > 0",
                            ));
                        }
                        (ArtifactComponent::Dc, Some(_)) => {
                            return Err(Error::invalid(
                                "attacks.dc_mains_attack.freq_hz",
                                "only applies to component = \"mains\"",
                            ));
                        }
                        _ => {}
                    }
                    if !(*floor_mult > 0.0) {
                        return Err(Error::invalid(
                            "attacks.dc_mains_attack.floor_mult",
                            "must be > 0",
                        ));
                    }
                }
                AttackConfig::SingleTimeCompare { smooth_halfwidth } => {
                    if *smooth_halfwidth > window / 2 {
                        return Err(Error::invalid(
                            "attacks.single_time_compare.smooth_halfwidth",
                            "smoother wider than half the bit window",
                        ));
                    }
                }
                AttackConfig::MeanSquareAttack => {}
            }
        }

        if let Some(sweep) = &self.sweep {
            if self.attacks.is_empty() {
                return Err(Error::invalid(
                    "sweep",
                    "a sweep fits attack success against the parameter; add at least one attack",
                ));
            }
            if sweep.values.is_empty() {
                return Err(Error::invalid("sweep.values", "must be non-empty"));
            }
            if sweep.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid("sweep.values", "must be finite and >= 0"));
            }
            match sweep.parameter {
                SweepParameter::CableResistanceOhm => match p.cable.variant {
                    CableVariant::Resistive { .. } | CableVariant::SeriesRl { .. } => {}
                    _ => {
                        return Err(Error::invalid(
                            "sweep.parameter",
                            "cable_resistance_ohm sweep needs a resistive or series_rl cable",
                        ));
                    }
                },
            }
        }
        Ok(())
    }

    /// The protocol run for a non-sweep scenario (or the sweep template).
    pub fn base_protocol(&self) -> ProtocolSpec {
        let p = &self.protocol;
        ProtocolSpec {
            low_ohm: p.low_ohm,
            high_ohm: p.high_ohm,
            cable: p.cable.clone(),
            kind: p.noise.clone(),
            bandwidth_hz: p.bandwidth_hz,
            kappa: p.kappa,
            sample_rate_hz: p.sample_rate_hz,
            n_oc: p.n_oc,
            parasitic_alice: p.parasitic_alice,
            parasitic_bob: p.parasitic_bob,
            master_seed: self.master_seed,
        }
    }

    /// Clone with the swept parameter replaced.
    pub fn with_sweep_value(&self, value: f64) -> Scenario {
        let mut sc = self.clone();
        match self.sweep.as_ref().map(|s| s.parameter) {
            Some(SweepParameter::CableResistanceOhm) => {
                sc.protocol.cable.variant = match sc.protocol.cable.variant {
                    CableVariant::SeriesRl { inductance_h, .. } => CableVariant::SeriesRl {
                        resistance_ohm: value,
                        inductance_h,
                    },
                    _ => CableVariant::Resistive {
                        resistance_ohm: value,
                    },
                };
            }
            None => {}
        }
        sc
    }

    /// Label for one sweep point, e.g. `rc-sweep@200`.
    pub fn point_label(&self, value: f64) -> String {
        let mut s = self.name.clone();
        let _ = write!(s, "@{value}");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
name = "everything"
description = "exercises every field"
trials = 12
master_seed = 99
checks = ["orthogonality", "oracle_moments"]

[loop]
low_ohm = 2000.0
high_ohm = 9000.0
bandwidth_hz = 5000.0
kappa = 1e-9
sample_rate_hz = 100000.0
n_oc = 50.0
eve_decimate = 2

[loop.cable]
variant = "series_rl"
resistance_ohm = 200.0
inductance_h = 2e-6
length_m = 2.0

[loop.noise]
kind = "clipped_gaussian"
clip_sigma = 1.0

[loop.parasitic_alice]
dc_offset_v = 1.07

[[attacks]]
op = "mean_square_attack"

[[attacks]]
op = "gaa_derivative_attack"
decision = "kolmogorov_smirnov"
calibration_windows = 16
eve_seed = 7

[[attacks]]
op = "dc_mains_attack"
component = "dc"
floor_mult = 2.5

[[attacks]]
op = "single_time_compare"
smooth_halfwidth = 25

[sweep]
parameter = "cable_resistance_ohm"
values = [50.0, 100.0]
"#;

    #[test]
    fn full_scenario_round_trips() {
        let sc = Scenario::from_toml_str(FULL).unwrap();
        sc.validate().unwrap();
        assert_eq!(sc.attacks.len(), 4);
        assert_eq!(sc.attacks[1].name(), "gaa_derivative_attack");
        assert_eq!(sc.protocol.eve_decimate, 2);
        assert_eq!(sc.protocol.parasitic_alice.dc_offset_v, 1.07);
        assert_eq!(
            sc.checks,
            vec![CheckKind::Orthogonality, CheckKind::OracleMoments]
        );

        let emitted = sc.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&emitted).unwrap();
        assert_eq!(back, sc);
    }

    #[test]
    fn defaults_fill_the_gaps() {
        let sc = Scenario::from_toml_str(
            r#"
name = "tiny"
trials = 3
master_seed = 1
[loop]
low_ohm = 1000.0
high_ohm = 10000.0
[loop.cable]
variant = "lossless"
inductance_h = 2e-6
length_m = 2.0
[[attacks]]
op = "gaa_derivative_attack"
"#,
        )
        .unwrap();
        sc.validate().unwrap();
        assert_eq!(sc.protocol.bandwidth_hz, 5e3);
        assert_eq!(sc.protocol.sample_rate_hz, 1e5);
        assert_eq!(sc.protocol.n_oc, 50.0);
        assert_eq!(sc.protocol.noise, NoiseKind::Gaussian);
        assert_eq!(sc.protocol.eve_decimate, 1);
        assert!(sc.protocol.parasitic_alice.is_none());
        match &sc.attacks[0] {
            AttackConfig::GaaDerivativeAttack {
                velocity,
                decision,
                calibration_windows,
                eve_seed,
                check_dc_consistency,
            } => {
                assert_eq!(*velocity, VelocityModel::FromResistors);
                assert_eq!(*decision, DecisionRule::Variance);
                assert_eq!(*calibration_windows, 200);
                assert_eq!(*eve_seed, DEFAULT_EVE_SEED);
                assert!(check_dc_consistency);
            }
            other => panic!("unexpected parse: {other:?}"),
        }
    }

    fn base() -> Scenario {
        Scenario::from_toml_str(
            r#"
name = "v"
trials = 3
master_seed = 1
[loop]
low_ohm = 2000.0
high_ohm = 9000.0
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
    fn validation_rejects_bad_configs() {
        let mut sc = base();
        sc.protocol.low_ohm = 9000.0;
        assert!(sc.validate().is_err(), "low == high must fail");

        let mut sc = base();
        sc.protocol.sample_rate_hz = 2e4;
        let err = sc.validate().unwrap_err().to_string();
        assert!(err.contains("sample_rate_hz"), "got: {err}");
        assert!(err.contains("50000"), "remedy should name the floor: {err}");

        let mut sc = base();
        sc.trials = 0;
        assert!(sc.validate().is_err());

        let mut sc = base();
        sc.attacks.clear();
        assert!(sc.validate().is_err(), "no attacks and no checks");
        sc.checks.push(CheckKind::OracleMoments);
        sc.validate().unwrap();

        let mut sc = base();
        sc.attacks.push(AttackConfig::MeanSquareAttack);
        assert!(sc.validate().is_err(), "duplicate op");

        // gaa on a purely resistive cable has no reconstruction coefficient.
        let mut sc = base();
        sc.attacks = vec![AttackConfig::GaaDerivativeAttack {
            velocity: VelocityModel::FromResistors,
            decision: DecisionRule::Variance,
            calibration_windows: 200,
            eve_seed: 1,
            check_dc_consistency: true,
        }];
        assert!(sc.validate().is_err());

        let mut sc = base();
        sc.attacks = vec![AttackConfig::DcMainsAttack {
            component: ArtifactComponent::Mains,
            freq_hz: None,
            assumed_source_v: None,
            floor_mult: 3.0,
        }];
        assert!(sc.validate().is_err(), "mains needs freq_hz");

        let mut sc = base();
        sc.sweep = Some(Sweep {
            parameter: SweepParameter::CableResistanceOhm,
            values: vec![],
        });
        assert!(sc.validate().is_err(), "empty sweep");

        let mut sc = base();
        sc.protocol.cable = CableModel::lossless(2e-6, 2.0);
        sc.sweep = Some(Sweep {
            parameter: SweepParameter::CableResistanceOhm,
            values: vec![50.0],
        });
        assert!(sc.validate().is_err(), "resistance sweep on lossless cable");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Scenario::from_toml_str(
            r#"
name = "typo"
trails = 3
master_seed = 1
[loop]
low_ohm = 2000.0
high_ohm = 9000.0
[loop.cable]
variant = "resistive"
resistance_ohm = 200.0
length_m = 2.0
"#,
        )
        .unwrap_err()
        .to_string();
        assert!(
            err.contains("trails") || err.contains("unknown"),
            "got: {err}"
        );
    }

    #[test]
    fn sweep_substitution_touches_only_the_cable() {
        let mut sc = base();
        sc.sweep = Some(Sweep {
            parameter: SweepParameter::CableResistanceOhm,
            values: vec![50.0, 400.0],
        });
        let at50 = sc.with_sweep_value(50.0);
        assert_eq!(at50.protocol.cable.total_resistance_ohm(), 50.0);
        assert_eq!(at50.master_seed, sc.master_seed);
        assert_eq!(sc.point_label(50.0), "v@50");

        // A series_rl cable keeps its inductance.
        let mut sc = base();
        sc.protocol.cable = CableModel::series_rl(200.0, 2e-6, 2.0);
        sc.sweep = Some(Sweep {
            parameter: SweepParameter::CableResistanceOhm,
            values: vec![100.0],
        });
        let at100 = sc.with_sweep_value(100.0);
        assert_eq!(at100.protocol.cable.total_resistance_ohm(), 100.0);
        assert_eq!(at100.protocol.cable.total_inductance_h(), 2e-6);
    }
}
