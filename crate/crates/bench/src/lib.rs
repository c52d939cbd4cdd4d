//! Shared fixtures for the criterion benches: two reference loops sized like
//! the presets so the numbers track what `kljn run` actually spends time on.

use kljn_core::channel::{CableModel, ExchangeSpec, ProtocolSpec};
use kljn_core::noise::{NoiseKind, ParasiticSpec};

/// 2 kΩ / 9 kΩ loop over 200 Ω of wire — the tabletop configuration.
/// One bit window at the default rates is 500 samples.
pub fn tabletop_protocol() -> ProtocolSpec {
    ProtocolSpec {
        low_ohm: 2_000.0,
        high_ohm: 9_000.0,
        cable: CableModel::resistive(200.0, 1_000.0),
        kind: NoiseKind::Gaussian,
        bandwidth_hz: 5e3,
        kappa: 1e-9,
        sample_rate_hz: 1e5,
        n_oc: 50.0,
        parasitic_alice: ParasiticSpec::default(),
        parasitic_bob: ParasiticSpec::default(),
        master_seed: 42,
    }
}

/// 1 kΩ / 10 kΩ loop on a short lossless (inductive) cable — the
/// configuration the derivative attack calibrates against.
pub fn inductive_protocol() -> ProtocolSpec {
    ProtocolSpec {
        low_ohm: 1_000.0,
        high_ohm: 10_000.0,
        cable: CableModel::lossless(2e-6, 2.0),
        kind: NoiseKind::Gaussian,
        bandwidth_hz: 5e3,
        kappa: 1e-9,
        sample_rate_hz: 1e5,
        n_oc: 50.0,
        parasitic_alice: ParasiticSpec::default(),
        parasitic_bob: ParasiticSpec::default(),
        master_seed: 42,
    }
}

/// A fully resolved window of the tabletop loop with `n_samples` samples.
pub fn tabletop_exchange(n_samples: usize) -> ExchangeSpec {
    let mut x = tabletop_protocol().exchange_for(1);
    x.n_samples = n_samples;
    x
}
