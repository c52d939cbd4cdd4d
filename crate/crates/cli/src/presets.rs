//! Built-in scenarios, embedded at compile time so the binary is
//! self-sufficient. `--scenario` accepts either one of these names or a
//! path to a TOML file on disk.

use std::path::Path;

use kljn_core::{Error, Result};

use crate::scenario::Scenario;

pub const PRESETS: &[(&str, &str)] = &[
    ("mingesz2008", include_str!("../presets/mingesz2008.toml")),
    ("gaa-ideal", include_str!("../presets/gaa-ideal.toml")),
    (
        "gaa-dc-artifact",
        include_str!("../presets/gaa-dc-artifact.toml"),
    ),
    (
        "gaa-dc-artifact-lossless",
        include_str!("../presets/gaa-dc-artifact-lossless.toml"),
    ),
    (
        "gaa-nongaussian",
        include_str!("../presets/gaa-nongaussian.toml"),
    ),
    (
        "noise-forensics",
        include_str!("../presets/noise-forensics.toml"),
    ),
    ("gaa-aliasing", include_str!("../presets/gaa-aliasing.toml")),
    ("rc-sweep", include_str!("../presets/rc-sweep.toml")),
    (
        "info-ordering",
        include_str!("../presets/info-ordering.toml"),
    ),
    (
        "orthogonality-check",
        include_str!("../presets/orthogonality-check.toml"),
    ),
    (
        "separator-fidelity",
        include_str!("../presets/separator-fidelity.toml"),
    ),
    (
        "oracle-equivalence",
        include_str!("../presets/oracle-equivalence.toml"),
    ),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn toml_for(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn load(name: &str) -> Result<Scenario> {
    let text = toml_for(name).ok_or_else(|| {
        Error::invalid(
            "scenario",
            format!("unknown preset {name:?}; available: {}", names().join(", ")),
        )
    })?;
    Scenario::from_toml_str(text)
}

/// Resolve a `--scenario` argument: preset name first, then a file path.
pub fn resolve(arg: &str) -> Result<Scenario> {
    if toml_for(arg).is_some() {
        return load(arg);
    }
    let path = Path::new(arg);
    if path.exists() {
        return Scenario::from_path(path);
    }
    Err(Error::invalid(
        "scenario",
        format!(
            "{arg:?} is neither a preset nor an existing file; presets: {}",
            names().join(", ")
        ),
    ))
}

/// One-line listing for the `list-presets` subcommand.
pub fn listing() -> Result<String> {
    let mut out = String::new();
    for (name, text) in PRESETS {
        let sc = Scenario::from_toml_str(text)?;
        out.push_str(&format!("{name:<26} {}\n", sc.description));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_validates_and_round_trips() {
        for (name, text) in PRESETS {
            let sc = Scenario::from_toml_str(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&sc.name, name, "preset file name must match its key");
            sc.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let emitted = sc.to_toml_string().unwrap();
            let back = Scenario::from_toml_str(&emitted)
                .unwrap_or_else(|e| panic!("{name} re-parse: {e}"));
            assert_eq!(back, sc, "{name} must round-trip");
        }
    }

    #[test]
    fn resolve_prefers_presets_and_reports_unknowns() {
        assert_eq!(resolve("gaa-ideal").unwrap().name, "gaa-ideal");
        let err = resolve("no-such-thing").unwrap_err().to_string();
        assert!(
            err.contains("mingesz2008"),
            "error should list presets: {err}"
        );
    }

    #[test]
    fn listing_mentions_every_preset() {
        let text = listing().unwrap();
        for (name, _) in PRESETS {
            assert!(text.contains(name), "listing missing {name}");
        }
    }
}
