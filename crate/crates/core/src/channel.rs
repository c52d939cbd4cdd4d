//! The two-party noise loop: cable models, single-exchange simulation, and
//! deterministic protocol bookkeeping.
//!
//! Sign and naming conventions, used everywhere downstream:
//!
//! * Current `i` is positive flowing from the `u_a` end toward the `u_b`
//!   end (Alice → Bob).
//! * `u_1` is the cable voltage at Alice's end, `u_2` at Bob's end, so
//!   `u_1 = u_a − R_A·i` and `u_2 = u_b + R_B·i` hold exactly for lumped
//!   cables (for the ladder, `i` is the Bob-end branch current and only the
//!   `u_2` identity is exact — the ends carry different currents once the
//!   cable stores charge).
//! * Generator amplitudes follow Johnson scaling: each source is unit
//!   `kappa·B` noise scaled by `sqrt(R)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{
    self, derive_seed, generate, inject_parasitic, NoiseKind, NoiseSpec, ParasiticSpec, Signal,
};

// Seed sub-stream labels. One master seed plus (stream, bit index) reaches
// every random draw in a run, which is what makes reruns byte-identical.
pub const STREAM_ARRANGEMENT: u64 = 0;
pub const STREAM_ALICE: u64 = 1;
pub const STREAM_BOB: u64 = 2;
pub const STREAM_EVE: u64 = 3;
pub const STREAM_CHECK: u64 = 4;

// ---------------------------------------------------------------------------
// Cable models
// ---------------------------------------------------------------------------

/// Electrical model of the wire joining the two ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum CableVariant {
    /// Zero series resistance; the stated inductance is what makes the
    /// end-to-end difference voltage observable at all.
    Lossless { inductance_h: f64 },
    /// Series resistance plus inductance, still lumped.
    SeriesRl {
        resistance_ohm: f64,
        inductance_h: f64,
    },
    /// Purely resistive lump — the classic wire-resistance leak model.
    Resistive { resistance_ohm: f64 },
    /// RLC ladder with `segments` series R–L sections and a shunt
    /// capacitor at each internal node and at the far end.
    Ladder {
        segments: usize,
        resistance_ohm_per_m: f64,
        inductance_h_per_m: f64,
        capacitance_f_per_m: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableModel {
    #[serde(flatten)]
    pub variant: CableVariant,
    pub length_m: f64,
}

impl CableModel {
    pub fn lossless(inductance_h: f64, length_m: f64) -> Self {
        CableModel {
            variant: CableVariant::Lossless { inductance_h },
            length_m,
        }
    }

    pub fn resistive(resistance_ohm: f64, length_m: f64) -> Self {
        CableModel {
            variant: CableVariant::Resistive { resistance_ohm },
            length_m,
        }
    }

    pub fn series_rl(resistance_ohm: f64, inductance_h: f64, length_m: f64) -> Self {
        CableModel {
            variant: CableVariant::SeriesRl {
                resistance_ohm,
                inductance_h,
            },
            length_m,
        }
    }

    pub fn total_resistance_ohm(&self) -> f64 {
        match self.variant {
            CableVariant::Lossless { .. } => 0.0,
            CableVariant::SeriesRl { resistance_ohm, .. } => resistance_ohm,
            CableVariant::Resistive { resistance_ohm } => resistance_ohm,
            CableVariant::Ladder {
                resistance_ohm_per_m,
                ..
            } => resistance_ohm_per_m * self.length_m,
        }
    }

    pub fn total_inductance_h(&self) -> f64 {
        match self.variant {
            CableVariant::Lossless { inductance_h } => inductance_h,
            CableVariant::SeriesRl { inductance_h, .. } => inductance_h,
            CableVariant::Resistive { .. } => 0.0,
            CableVariant::Ladder {
                inductance_h_per_m, ..
            } => inductance_h_per_m * self.length_m,
        }
    }

    pub fn total_capacitance_f(&self) -> f64 {
        match self.variant {
            CableVariant::Ladder {
                capacitance_f_per_m,
                ..
            } => capacitance_f_per_m * self.length_m,
            _ => 0.0,
        }
    }

    pub fn is_lossless(&self) -> bool {
        self.total_resistance_ohm() == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0) {
            return Err(Error::invalid("length_m", "must be > 0"));
        }
        match self.variant {
            CableVariant::Lossless { inductance_h } => {
                if !(inductance_h > 0.0) {
                    return Err(Error::invalid("inductance_h", "must be > 0"));
                }
            }
            CableVariant::SeriesRl {
                resistance_ohm,
                inductance_h,
            } => {
                if resistance_ohm < 0.0 || !(inductance_h > 0.0) {
                    return Err(Error::invalid("series_rl", "need r >= 0 and l > 0"));
                }
            }
            CableVariant::Resistive { resistance_ohm } => {
                if resistance_ohm < 0.0 {
                    return Err(Error::invalid("resistance_ohm", "must be >= 0"));
                }
            }
            CableVariant::Ladder {
                segments,
                resistance_ohm_per_m,
                inductance_h_per_m,
                capacitance_f_per_m,
            } => {
                if segments == 0 || segments > 4096 {
                    return Err(Error::invalid("segments", "must be in 1..=4096"));
                }
                if resistance_ohm_per_m < 0.0
                    || !(inductance_h_per_m > 0.0)
                    || capacitance_f_per_m < 0.0
                {
                    return Err(Error::invalid("ladder", "need r/m >= 0, l/m > 0, c/m >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// Direction-dependent effective propagation constants of the reconstruction
/// algebra: (length · R_bob / L_cable, length · R_alice / L_cable). These are
/// bookkeeping constants, not wave speeds — superluminal values are expected.
pub fn phase_velocities(r_alice: f64, r_bob: f64, cable: &CableModel) -> (f64, f64) {
    let l = cable.total_inductance_h();
    (cable.length_m * r_bob / l, cable.length_m * r_alice / l)
}

// ---------------------------------------------------------------------------
// Arrangements
// ---------------------------------------------------------------------------

/// Which resistor each end connected for one bit window (Alice, Bob).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrangement {
    LowLow,
    LowHigh,
    HighLow,
    HighHigh,
}

impl Arrangement {
    /// Secure bits are the mixed arrangements.
    pub fn is_secure(&self) -> bool {
        matches!(self, Arrangement::LowHigh | Arrangement::HighLow)
    }

    pub fn bob_is_high(&self) -> bool {
        matches!(self, Arrangement::LowHigh | Arrangement::HighHigh)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Arrangement::LowLow => "LL",
            Arrangement::LowHigh => "LH",
            Arrangement::HighLow => "HL",
            Arrangement::HighHigh => "HH",
        }
    }
}

// ---------------------------------------------------------------------------
// One exchange window
// ---------------------------------------------------------------------------

/// Fully resolved description of a single bit-exchange window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeSpec {
    pub r_alice_ohm: f64,
    pub r_bob_ohm: f64,
    pub cable: CableModel,
    pub kind: NoiseKind,
    pub bandwidth_hz: f64,
    pub kappa: f64,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    pub seed_alice: u64,
    pub seed_bob: u64,
    pub parasitic_alice: ParasiticSpec,
    pub parasitic_bob: ParasiticSpec,
}

/// Recorded waveforms of one exchange window. `u_a`/`u_b` are the generator
/// EMFs (with any parasitic injection included) — Eve never sees those; the
/// attack surface is `u_1`, `u_2`, and `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub dt: f64,
    pub u_a: Vec<f64>,
    pub u_b: Vec<f64>,
    pub u_1: Vec<f64>,
    pub u_2: Vec<f64>,
    pub i: Vec<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.u_1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_1.is_empty()
    }

    /// End-to-end cable voltage u_1 − u_2.
    pub fn u_12(&self) -> Vec<f64> {
        self.u_1.iter().zip(&self.u_2).map(|(a, b)| a - b).collect()
    }

    pub fn signal(&self, channel: TraceChannel) -> Signal {
        let data = match channel {
            TraceChannel::UA => self.u_a.clone(),
            TraceChannel::UB => self.u_b.clone(),
            TraceChannel::U1 => self.u_1.clone(),
            TraceChannel::U2 => self.u_2.clone(),
            TraceChannel::I => self.i.clone(),
            TraceChannel::U12 => self.u_12(),
        };
        Signal::new(data, self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceChannel {
    UA,
    UB,
    U1,
    U2,
    I,
    U12,
}

/// Where Eve's voltage probe sits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveTap {
    End1,
    #[default]
    End2,
    MidpointAverage,
}

impl EveTap {
    pub fn extract(&self, trace: &Trace) -> Vec<f64> {
        match self {
            EveTap::End1 => trace.u_1.clone(),
            EveTap::End2 => trace.u_2.clone(),
            EveTap::MidpointAverage => trace
                .u_1
                .iter()
                .zip(&trace.u_2)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        }
    }
}

/// Subsample every channel by `factor` with no anti-alias filtering —
/// deliberately so: this models a cheap capture pipeline that digitises
/// below the simulation rate. `dt` scales accordingly.
pub fn decimate_trace(t: &Trace, factor: usize) -> Result<Trace> {
    if factor == 0 || factor > 64 {
        return Err(Error::invalid("decimate_trace", "factor must be in 1..=64"));
    }
    if factor == 1 {
        return Ok(t.clone());
    }
    let pick = |xs: &[f64]| xs.iter().step_by(factor).copied().collect::<Vec<f64>>();
    Ok(Trace {
        dt: t.dt * factor as f64,
        u_a: pick(&t.u_a),
        u_b: pick(&t.u_b),
        u_1: pick(&t.u_1),
        u_2: pick(&t.u_2),
        i: pick(&t.i),
    })
}

/// Ratio RMS(u_12) / RMS(tap voltage): how small the end-to-end drop is
/// compared with what Eve actually probes.
pub fn cable_drop_ratio(trace: &Trace, tap: EveTap) -> Result<f64> {
    let u12 = Signal::new(trace.u_12(), trace.dt);
    let u = Signal::new(tap.extract(trace), trace.dt);
    let denom = u.rms();
    if denom == 0.0 {
        return Err(Error::DegenerateSignal("zero tap voltage".into()));
    }
    Ok(u12.rms() / denom)
}

/// Simulate one exchange window: draw both generator noises, inject
/// parasitics, and solve the loop for the chosen cable model.
pub fn simulate_exchange(x: &ExchangeSpec) -> Result<Trace> {
    if !(x.r_alice_ohm > 0.0) || !(x.r_bob_ohm > 0.0) {
        return Err(Error::invalid("resistance", "end resistors must be > 0"));
    }
    x.cable.validate()?;

    // Warmup padding long enough for the slowest cable mode to settle.
    let dt = 1.0 / x.sample_rate_hz;
    let r_sum = x.r_alice_ohm + x.r_bob_ohm + x.cable.total_resistance_ohm();
    let tau = x.cable.total_capacitance_f() * r_sum + x.cable.total_inductance_h() / r_sum;
    let warmup = ((8.0 * tau / dt).ceil() as usize).max(4);
    let n_total = x.n_samples + warmup;

    let mut u_a = scaled_source(x, x.r_alice_ohm, x.seed_alice, n_total)?;
    let mut u_b = scaled_source(x, x.r_bob_ohm, x.seed_bob, n_total)?;
    inject_parasitic(&mut u_a, &x.parasitic_alice);
    inject_parasitic(&mut u_b, &x.parasitic_bob);

    let mut trace = solve_loop(x, &u_a.samples, &u_b.samples, dt)?;
    // Discard the settling prefix from every channel.
    for ch in [
        &mut trace.u_a,
        &mut trace.u_b,
        &mut trace.u_1,
        &mut trace.u_2,
        &mut trace.i,
    ] {
        ch.drain(..warmup);
    }
    Ok(trace)
}

fn scaled_source(x: &ExchangeSpec, r_ohm: f64, seed: u64, n: usize) -> Result<Signal> {
    let spec = NoiseSpec {
        kind: x.kind.clone(),
        bandwidth_hz: x.bandwidth_hz,
        kappa: x.kappa,
        sample_rate_hz: x.sample_rate_hz,
        seed,
    };
    let mut sig = generate(&spec, n)?;
    let s = r_ohm.sqrt();
    for v in sig.samples.iter_mut() {
        *v *= s;
    }
    Ok(sig)
}

/// Solve the loop for given generator waveforms. Exposed for oracle tests
/// that need to drive both cable models with identical sources.
pub fn solve_loop(x: &ExchangeSpec, u_a: &[f64], u_b: &[f64], dt: f64) -> Result<Trace> {
    match x.cable.variant {
        CableVariant::Resistive { resistance_ohm } => {
            Ok(solve_resistive(x, u_a, u_b, dt, resistance_ohm))
        }
        CableVariant::Lossless { inductance_h } => {
            Ok(solve_series_rl(x, u_a, u_b, dt, 0.0, inductance_h))
        }
        CableVariant::SeriesRl {
            resistance_ohm,
            inductance_h,
        } => Ok(solve_series_rl(
            x,
            u_a,
            u_b,
            dt,
            resistance_ohm,
            inductance_h,
        )),
        CableVariant::Ladder { .. } => solve_ladder(x, u_a, u_b, dt),
    }
}

fn end_voltages(x: &ExchangeSpec, u_a: &[f64], u_b: &[f64], i: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let u_1: Vec<f64> = u_a
        .iter()
        .zip(i)
        .map(|(ua, ik)| ua - x.r_alice_ohm * ik)
        .collect();
    let u_2: Vec<f64> = u_b
        .iter()
        .zip(i)
        .map(|(ub, ik)| ub + x.r_bob_ohm * ik)
        .collect();
    (u_1, u_2)
}

fn solve_resistive(x: &ExchangeSpec, u_a: &[f64], u_b: &[f64], dt: f64, r_c: f64) -> Trace {
    let r_sum = x.r_alice_ohm + x.r_bob_ohm + r_c;
    let i: Vec<f64> = u_a
        .iter()
        .zip(u_b)
        .map(|(ua, ub)| (ua - ub) / r_sum)
        .collect();
    let (u_1, u_2) = end_voltages(x, u_a, u_b, &i);
    Trace {
        dt,
        u_a: u_a.to_vec(),
        u_b: u_b.to_vec(),
        u_1,
        u_2,
        i,
    }
}

/// L di/dt + R_sum i = u_a − u_b, stepped with the exact exponential
/// response to a piecewise-linear drive (first-order hold). With the loop
/// time constant far below dt this collapses to the quasi-static solution
/// plus the inductive lag term −(L/R²)·dV/dt, which is exactly the part
/// that keeps u_12 physical; a zero-order hold would inflate it by orders
/// of magnitude.
fn solve_series_rl(
    x: &ExchangeSpec,
    u_a: &[f64],
    u_b: &[f64],
    dt: f64,
    r_c: f64,
    l_c: f64,
) -> Trace {
    let r = x.r_alice_ohm + x.r_bob_ohm + r_c;
    let n = u_a.len();
    let a = (-r * dt / l_c).exp();
    let lag = l_c / (r * r);
    let v = |k: usize| u_a[k] - u_b[k];
    let mut i = Vec::with_capacity(n);
    // Steady state against the initial ramp, so no artificial transient.
    let s0 = (v(1) - v(0)) / dt;
    i.push(v(0) / r - lag * s0);
    for k in 0..n - 1 {
        let s = (v(k + 1) - v(k)) / dt;
        let part_next = v(k + 1) / r - lag * s;
        let part_now = v(k) / r - lag * s;
        let next = part_next + (i[k] - part_now) * a;
        i.push(next);
    }
    let (u_1, u_2) = end_voltages(x, u_a, u_b, &i);
    Trace {
        dt,
        u_a: u_a.to_vec(),
        u_b: u_b.to_vec(),
        u_1,
        u_2,
        i,
    }
}

/// Trapezoidal (bilinear) state-space integration of the RLC ladder.
///
/// States: `segments` series-branch currents then `segments` node
/// capacitor voltages; the last node is Bob's end, so `u_2` is the final
/// capacitor voltage and the reported current is Bob's branch current
/// (u_2 − u_b)/R_B — the one identity that stays exact for a cable that
/// stores charge.
fn solve_ladder(x: &ExchangeSpec, u_a: &[f64], u_b: &[f64], dt: f64) -> Result<Trace> {
    let CableVariant::Ladder {
        segments,
        resistance_ohm_per_m,
        inductance_h_per_m,
        capacitance_f_per_m,
    } = x.cable.variant
    else {
        unreachable!("solve_ladder called with non-ladder cable");
    };
    let m = segments;
    let seg_len = x.cable.length_m / m as f64;
    let r_s = resistance_ohm_per_m * seg_len;
    let l_s = inductance_h_per_m * seg_len;
    let c_s = (capacitance_f_per_m * seg_len).max(1e-30); // keep states well-defined at C = 0
    let dim = 2 * m;

    // dx/dt = A x + B [u_a, u_b]
    let mut a = vec![vec![0.0; dim]; dim];
    let mut b = vec![vec![0.0; 2]; dim];
    for j in 0..m {
        let row = j;
        // L di_j/dt = v_{j-1} - vc_j - r_s i_j  (v_0 = u_a - R_A i_1)
        a[row][j] = -r_s / l_s;
        a[row][m + j] = -1.0 / l_s;
        if j == 0 {
            a[row][0] += -x.r_alice_ohm / l_s;
            b[row][0] = 1.0 / l_s;
        } else {
            a[row][m + j - 1] = 1.0 / l_s;
        }
    }
    for j in 0..m {
        let row = m + j;
        // C dvc_j/dt = i_j - i_{j+1}; last node drains through Bob.
        a[row][j] = 1.0 / c_s;
        if j + 1 < m {
            a[row][j + 1] = -1.0 / c_s;
        } else {
            a[row][m + j] += -1.0 / (c_s * x.r_bob_ohm);
            b[row][1] = 1.0 / (c_s * x.r_bob_ohm);
        }
    }

    let h = dt;

    // M1 x_{k+1} = M2 x_k + (h/2) B (u_k + u_{k+1})
    let mut m1 = vec![vec![0.0; dim]; dim];
    let mut m2 = vec![vec![0.0; dim]; dim];
    for r in 0..dim {
        for c in 0..dim {
            m1[r][c] = -0.5 * h * a[r][c];
            m2[r][c] = 0.5 * h * a[r][c];
        }
        m1[r][r] += 1.0;
        m2[r][r] += 1.0;
    }
    let lu = LuFactors::new(m1)?;
    // Precompute P = M1^{-1} M2 and Q = M1^{-1} (h/2) B.
    let p = lu.solve_matrix(&m2);
    let mut bh = vec![vec![0.0; 2]; dim];
    for r in 0..dim {
        bh[r][0] = 0.5 * h * b[r][0];
        bh[r][1] = 0.5 * h * b[r][1];
    }
    let q = lu.solve_matrix(&bh);

    let n = u_a.len();
    // Start at the DC operating point of the initial sample. Unresolvably
    // stiff modes (tiny C, tiny L/R) map under the bilinear step to
    // alternating, *non-decaying* components whose amplitude is the initial
    // state error — starting on the quasi-static solution keeps them at the
    // lag-term level instead of signal level.
    let r_total = x.r_alice_ohm + x.r_bob_ohm + r_s * m as f64;
    let i0 = (u_a[0] - u_b[0]) / r_total;
    let mut state = vec![0.0; dim];
    for j in 0..m {
        state[j] = i0;
        state[m + j] = u_a[0] - (x.r_alice_ohm + (j + 1) as f64 * r_s) * i0;
    }
    let mut next = vec![0.0; dim];
    let mut u_1 = Vec::with_capacity(n);
    let mut u_2 = Vec::with_capacity(n);
    let mut i_out = Vec::with_capacity(n);

    let record = |state: &[f64],
                  ua: f64,
                  ub: f64,
                  u_1: &mut Vec<f64>,
                  u_2: &mut Vec<f64>,
                  i_out: &mut Vec<f64>| {
        let vc_last = state[dim - 1];
        u_1.push(ua - x.r_alice_ohm * state[0]);
        u_2.push(vc_last);
        i_out.push((vc_last - ub) / x.r_bob_ohm);
    };

    record(&state, u_a[0], u_b[0], &mut u_1, &mut u_2, &mut i_out);
    for k in 0..n - 1 {
        for r in 0..dim {
            let mut acc = q[r][0] * (u_a[k] + u_a[k + 1]) + q[r][1] * (u_b[k] + u_b[k + 1]);
            let pr = &p[r];
            for (c, s) in state.iter().enumerate() {
                acc += pr[c] * s;
            }
            next[r] = acc;
        }
        std::mem::swap(&mut state, &mut next);
        record(
            &state,
            u_a[k + 1],
            u_b[k + 1],
            &mut u_1,
            &mut u_2,
            &mut i_out,
        );
    }

    Ok(Trace {
        dt,
        u_a: u_a.to_vec(),
        u_b: u_b.to_vec(),
        u_1,
        u_2,
        i: i_out,
    })
}

/// Dense LU with partial pivoting; enough for the ladder's state matrices.
struct LuFactors {
    lu: Vec<Vec<f64>>,
    pivot: Vec<usize>,
}

impl LuFactors {
    fn new(mut a: Vec<Vec<f64>>) -> Result<Self> {
        let n = a.len();
        let mut pivot = vec![0usize; n];
        for col in 0..n {
            let mut best = col;
            let mut best_abs = a[col][col].abs();
            for row in col + 1..n {
                let v = a[row][col].abs();
                if v > best_abs {
                    best = row;
                    best_abs = v;
                }
            }
            if best_abs == 0.0 {
                return Err(Error::Integration("singular ladder state matrix".into()));
            }
            pivot[col] = best;
            a.swap(col, best);
            let inv = 1.0 / a[col][col];
            for row in col + 1..n {
                let f = a[row][col] * inv;
                a[row][col] = f;
                for k in col + 1..n {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
        Ok(LuFactors { lu: a, pivot })
    }

    fn solve_into(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        for col in 0..n {
            rhs.swap(col, self.pivot[col]);
        }
        for row in 1..n {
            let mut acc = rhs[row];
            for k in 0..row {
                acc -= self.lu[row][k] * rhs[k];
            }
            rhs[row] = acc;
        }
        for row in (0..n).rev() {
            let mut acc = rhs[row];
            for k in row + 1..n {
                acc -= self.lu[row][k] * rhs[k];
            }
            rhs[row] = acc / self.lu[row][row];
        }
    }

    /// Solve A X = B column by column.
    fn solve_matrix(&self, b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = b.len();
        let cols = b[0].len();
        let mut out = vec![vec![0.0; cols]; n];
        let mut col = vec![0.0; n];
        for c in 0..cols {
            for r in 0..n {
                col[r] = b[r][c];
            }
            self.solve_into(&mut col);
            for r in 0..n {
                out[r][c] = col[r];
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Protocol bookkeeping
// ---------------------------------------------------------------------------

/// Everything needed to run a multi-bit exchange deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub low_ohm: f64,
    pub high_ohm: f64,
    pub cable: CableModel,
    pub kind: NoiseKind,
    pub bandwidth_hz: f64,
    pub kappa: f64,
    pub sample_rate_hz: f64,
    /// Window length in correlation times (tau = 1/2B): the bit window
    /// spans n_oc · tau seconds.
    pub n_oc: f64,
    pub parasitic_alice: ParasiticSpec,
    pub parasitic_bob: ParasiticSpec,
    pub master_seed: u64,
}

impl ProtocolSpec {
    pub fn window_samples(&self) -> usize {
        let t = self.n_oc / (2.0 * self.bandwidth_hz);
        ((t * self.sample_rate_hz).round() as usize).max(2)
    }

    /// Resistor choices for bit `index`, derived (not sampled) so that any
    /// bit can be reconstructed without replaying the sequence.
    pub fn arrangement_for(&self, index: u64) -> Arrangement {
        let s = derive_seed(self.master_seed, STREAM_ARRANGEMENT, index);
        match (s & 1, (s >> 1) & 1) {
            (0, 0) => Arrangement::LowLow,
            (0, 1) => Arrangement::LowHigh,
            (1, 0) => Arrangement::HighLow,
            _ => Arrangement::HighHigh,
        }
    }

    /// Indices of the first `m` secure (mixed) bits.
    pub fn secure_bit_indices(&self, m: usize) -> Vec<u64> {
        let mut out = Vec::with_capacity(m);
        let mut idx = 0u64;
        while out.len() < m {
            if self.arrangement_for(idx).is_secure() {
                out.push(idx);
            }
            idx += 1;
        }
        out
    }

    pub fn resistors_for(&self, arr: Arrangement) -> (f64, f64) {
        match arr {
            Arrangement::LowLow => (self.low_ohm, self.low_ohm),
            Arrangement::LowHigh => (self.low_ohm, self.high_ohm),
            Arrangement::HighLow => (self.high_ohm, self.low_ohm),
            Arrangement::HighHigh => (self.high_ohm, self.high_ohm),
        }
    }

    /// Fully resolved exchange for bit `index`.
    pub fn exchange_for(&self, index: u64) -> ExchangeSpec {
        let arr = self.arrangement_for(index);
        let (r_alice, r_bob) = self.resistors_for(arr);
        ExchangeSpec {
            r_alice_ohm: r_alice,
            r_bob_ohm: r_bob,
            cable: self.cable.clone(),
            kind: self.kind.clone(),
            bandwidth_hz: self.bandwidth_hz,
            kappa: self.kappa,
            sample_rate_hz: self.sample_rate_hz,
            n_samples: self.window_samples(),
            seed_alice: derive_seed(self.master_seed, STREAM_ALICE, index),
            seed_bob: derive_seed(self.master_seed, STREAM_BOB, index),
            parasitic_alice: self.parasitic_alice,
            parasitic_bob: self.parasitic_bob,
        }
    }
}

/// Compare the distributed ladder against its lumped series-RL equivalent
/// (same total R and L, same sources) and report the worst relative
/// second-moment deviation across u_1, u_2, and i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderCheck {
    pub deviation: f64,
    pub u1_rel: f64,
    pub u2_rel: f64,
    pub i_rel: f64,
}

pub fn ladder_vs_lumped_check(x: &ExchangeSpec) -> Result<LadderCheck> {
    let CableVariant::Ladder { .. } = x.cable.variant else {
        return Err(Error::invalid(
            "cable",
            "ladder_vs_lumped_check needs a ladder cable",
        ));
    };
    let mut lumped = x.clone();
    lumped.cable = CableModel::series_rl(
        x.cable.total_resistance_ohm(),
        x.cable.total_inductance_h(),
        x.cable.length_m,
    );
    let t_ladder = simulate_exchange(x)?;
    let t_lumped = simulate_exchange(&lumped)?;
    let rel = |a: &[f64], b: &[f64]| -> f64 {
        let va = noise::variance(a);
        let vb = noise::variance(b);
        if vb == 0.0 {
            return 0.0;
        }
        (va / vb - 1.0).abs()
    };
    let u1_rel = rel(&t_ladder.u_1, &t_lumped.u_1);
    let u2_rel = rel(&t_ladder.u_2, &t_lumped.u_2);
    let i_rel = rel(&t_ladder.i, &t_lumped.i);
    Ok(LadderCheck {
        deviation: u1_rel.max(u2_rel).max(i_rel),
        u1_rel,
        u2_rel,
        i_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::variance;

    fn base_exchange(cable: CableModel, n: usize) -> ExchangeSpec {
        ExchangeSpec {
            r_alice_ohm: 2000.0,
            r_bob_ohm: 9000.0,
            cable,
            kind: NoiseKind::Gaussian,
            bandwidth_hz: 5e3,
            kappa: 1e-9,
            sample_rate_hz: 1e5,
            n_samples: n,
            seed_alice: 101,
            seed_bob: 202,
            parasitic_alice: ParasiticSpec::default(),
            parasitic_bob: ParasiticSpec::default(),
        }
    }

    fn gaa_exchange(cable: CableModel, n: usize) -> ExchangeSpec {
        ExchangeSpec {
            r_alice_ohm: 1000.0,
            r_bob_ohm: 10_000.0,
            ..base_exchange(cable, n)
        }
    }

    #[test]
    fn resistive_loop_obeys_kirchhoff_exactly() {
        let x = base_exchange(CableModel::resistive(200.0, 2.0), 4000);
        let t = simulate_exchange(&x).unwrap();
        let r_sum = 2000.0 + 9000.0 + 200.0;
        for k in 0..t.len() {
            let i_expect = (t.u_a[k] - t.u_b[k]) / r_sum;
            assert!((t.i[k] - i_expect).abs() <= 1e-15 * i_expect.abs().max(1e-12));
            assert!((t.u_1[k] - (t.u_a[k] - 2000.0 * t.i[k])).abs() < 1e-15);
            assert!((t.u_2[k] - (t.u_b[k] + 9000.0 * t.i[k])).abs() < 1e-15);
            // u_12 = r_c * i for a purely resistive cable.
            assert!(((t.u_1[k] - t.u_2[k]) - 200.0 * t.i[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn decimate_keeps_every_factorth_sample() {
        let x = base_exchange(CableModel::resistive(200.0, 2.0), 1001);
        let t = simulate_exchange(&x).unwrap();
        let d = decimate_trace(&t, 4).unwrap();
        assert_eq!(d.len(), 251); // ceil(1001 / 4)
        assert_eq!(d.dt, t.dt * 4.0);
        for k in 0..d.len() {
            assert_eq!(d.u_2[k].to_bits(), t.u_2[4 * k].to_bits());
            assert_eq!(d.i[k].to_bits(), t.i[4 * k].to_bits());
        }
        let same = decimate_trace(&t, 1).unwrap();
        assert_eq!(same.len(), t.len());
        assert!(decimate_trace(&t, 0).is_err());
        assert!(decimate_trace(&t, 65).is_err());
    }

    #[test]
    fn resistive_moments_match_closed_form() {
        let x = base_exchange(CableModel::resistive(200.0, 2.0), 40_000);
        let t = simulate_exchange(&x).unwrap();
        let m = crate::stats::analytic_end_moments(1e-9, 5e3, 2000.0, 9000.0, 200.0);
        // ~4000 effective samples -> var estimates good to ~2.2% (1 sigma).
        let checks = [
            ("u1", variance(&t.u_1), m.u1_sq),
            ("u2", variance(&t.u_2), m.u2_sq),
            ("i", variance(&t.i), m.i_sq),
            ("u12", variance(&t.u_12()), m.u12_sq),
        ];
        for (name, got, want) in checks {
            let rel = got / want - 1.0;
            println!("{name}: rel = {rel:+.4}");
            assert!(rel.abs() < 0.07, "{name} off by {rel}");
        }
    }

    #[test]
    fn foh_integrator_matches_fine_rk4_in_resolved_regime() {
        // With L large enough that the loop pole is well inside the time
        // step, explicit RK4 at fine substeps is a stable, independent
        // integrator for the *same* piecewise-linear drive — and the
        // first-order hold is exact for that input class, so the two must
        // agree to near fp precision.
        let x = gaa_exchange(CableModel::series_rl(50.0, 10.0, 2.0), 1500);
        let t = simulate_exchange(&x).unwrap();
        let r = 1000.0 + 10_000.0 + 50.0;
        let l = 10.0;
        let dt = t.dt;
        let sub = 40;
        let h = dt / sub as f64;
        let mut i_rk = t.i[0];
        let mut worst: f64 = 0.0;
        for k in 0..t.len() - 1 {
            let v0 = t.u_a[k] - t.u_b[k];
            let v1 = t.u_a[k + 1] - t.u_b[k + 1];
            for s in 0..sub {
                let vt = |f: f64| v0 + (v1 - v0) * ((s as f64 + f) / sub as f64);
                let f = |i: f64, vv: f64| (vv - r * i) / l;
                let k1 = f(i_rk, vt(0.0));
                let k2 = f(i_rk + 0.5 * h * k1, vt(0.5));
                let k3 = f(i_rk + 0.5 * h * k2, vt(0.5));
                let k4 = f(i_rk + h * k3, vt(1.0));
                i_rk += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            worst = worst.max((i_rk - t.i[k + 1]).abs());
        }
        let scale = Signal::new(t.i.clone(), dt).rms();
        println!("foh vs rk4 worst rel = {:e}", worst / scale);
        assert!(worst / scale < 1e-8, "worst {worst:e} scale {scale:e}");
    }

    #[test]
    fn foh_sine_response_matches_rl_transfer_function() {
        // Steady-state sine drive through R+L: amplitude |V|/|R+jwL| and
        // phase -atan(wL/R), after correcting for the piecewise-linear
        // interpolation's sinc² attenuation of the fundamental.
        let f0 = 1000.0;
        let fs = 1e5;
        let n = 4000;
        let (r_a, r_b, r_c) = (1000.0, 10_000.0, 50.0);
        let l = 0.5; // wL ~ 3.1 kΩ: reactance comparable to resistance
        let w = 2.0 * std::f64::consts::PI * f0;
        let u_a: Vec<f64> = (0..n).map(|k| (w * k as f64 / fs).sin()).collect();
        let u_b = vec![0.0; n];
        let x = gaa_exchange(CableModel::series_rl(r_c, l, 2.0), n);
        let t = solve_loop(&x, &u_a, &u_b, 1.0 / fs).unwrap();
        let r = r_a + r_b + r_c;
        // Fit I(t) = A sin(wt) + B cos(wt) on the settled tail.
        let (mut sa, mut sb) = (0.0, 0.0);
        let tail = n / 2;
        for k in tail..n {
            let ph = w * k as f64 / fs;
            sa += t.i[k] * ph.sin();
            sb += t.i[k] * ph.cos();
        }
        let half = (n - tail) as f64 / 2.0;
        let (a, b) = (sa / half, sb / half);
        let amp = (a * a + b * b).sqrt();
        let phase = b.atan2(a);
        let x_dt = w / fs;
        let sinc2 = {
            let s = (x_dt / 2.0).sin() / (x_dt / 2.0);
            s * s
        };
        let amp_expect = sinc2 / (r * r + w * w * l * l).sqrt();
        let phase_expect = -(w * l / r).atan();
        println!("amp {amp:.6e} want {amp_expect:.6e}; phase {phase:.5} want {phase_expect:.5}");
        assert!((amp / amp_expect - 1.0).abs() < 1e-3);
        assert!((phase - phase_expect).abs() < 2e-3);
    }

    #[test]
    fn foh_stiff_limit_reduces_to_quasi_static_with_inductive_lag() {
        // When R dt / L is huge the exponential memory vanishes and the
        // integrator must land exactly on i = V/R − (L/R²)·dV/dt with the
        // forward-difference slope — the structural identity behind the
        // tiny-but-physical end-to-end voltage.
        let x = gaa_exchange(CableModel::lossless(2e-6, 2.0), 3000);
        let t = simulate_exchange(&x).unwrap();
        let r = 11_000.0;
        let lag = 2e-6 / (r * r);
        for k in 1..t.len() {
            let v_now = t.u_a[k] - t.u_b[k];
            let slope = (v_now - (t.u_a[k - 1] - t.u_b[k - 1])) / t.dt;
            let expect = v_now / r - lag * slope;
            assert!(
                (t.i[k] - expect).abs() < 1e-11 * t.i[k].abs().max(1e-9),
                "sample {k}: {} vs {}",
                t.i[k],
                expect
            );
        }
        // And u_12 is the lag term scaled by R_A + R_B, up to the fp
        // cancellation noise of forming u_1 − u_2 (~1e-16 V here).
        let u12 = t.u_12();
        for k in 1..t.len() {
            let slope = (t.u_a[k] - t.u_b[k] - (t.u_a[k - 1] - t.u_b[k - 1])) / t.dt;
            let expect = (1000.0 + 10_000.0) * lag * slope;
            assert!((u12[k] - expect).abs() < 5e-15, "sample {k}");
        }
    }

    #[test]
    fn lossless_cable_drop_is_small_and_predicted() {
        // Inductance-only cable: u_12 = L (R_A+R_B)/R² · dV/dt in the
        // quasi-static limit. With the flat band the predicted drop ratio
        // against the end-2 tap is 1.15e-5.
        let x = gaa_exchange(CableModel::lossless(2e-6, 2.0), 40_000);
        let t = simulate_exchange(&x).unwrap();
        let drop = cable_drop_ratio(&t, EveTap::End2).unwrap();
        println!("lossless drop ratio = {drop:.4e}");
        assert!(drop < 1e-4, "drop should be tiny, got {drop:e}");
        assert!((drop / 1.147e-5 - 1.0).abs() < 0.15, "drop {drop:e}");
        // u_2 identity stays exact for lumped cables.
        for k in 0..t.len() {
            assert!((t.u_2[k] - (t.u_b[k] + 10_000.0 * t.i[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn series_rl_kvl_residual_within_discretization_error() {
        let x = base_exchange(CableModel::series_rl(200.0, 2e-6, 2.0), 20_000);
        let t = simulate_exchange(&x).unwrap();
        let r = 2000.0 + 9000.0 + 200.0;
        let l = 2e-6;
        // Central-difference di/dt has O((w dt)^2) gain error ~1.6% at the
        // band edge; the loop equation should close to that accuracy.
        let mut resid_sq = 0.0;
        let mut v_sq = 0.0;
        for k in 1..t.len() - 1 {
            let didt = (t.i[k + 1] - t.i[k - 1]) / (2.0 * t.dt);
            let v = t.u_a[k] - t.u_b[k];
            let resid = l * didt + r * t.i[k] - v;
            resid_sq += resid * resid;
            v_sq += v * v;
        }
        let rel = (resid_sq / v_sq).sqrt();
        println!("series-rl kvl residual rel = {rel:e}");
        assert!(rel < 0.05, "residual {rel}");
    }

    #[test]
    fn ladder_with_zero_capacitance_reduces_to_lumped_rl() {
        let ladder = CableModel {
            variant: CableVariant::Ladder {
                segments: 16,
                resistance_ohm_per_m: 25.0,
                inductance_h_per_m: 1e-6,
                capacitance_f_per_m: 0.0,
            },
            length_m: 2.0,
        };
        let x = base_exchange(ladder, 8000);
        let check = ladder_vs_lumped_check(&x).unwrap();
        println!(
            "c=0 ladder vs lumped: u1 {:.2e} u2 {:.2e} i {:.2e}",
            check.u1_rel, check.u2_rel, check.i_rel
        );
        assert!(check.deviation < 1e-4, "deviation {:e}", check.deviation);
    }

    #[test]
    fn ladder_quasi_static_deviation_is_small_and_converged() {
        // Open-wire-like constants: 0.035 Ω/m, 1 µH/m, 15 pF/m over 2 m.
        let mk = |segments| CableModel {
            variant: CableVariant::Ladder {
                segments,
                resistance_ohm_per_m: 0.035,
                inductance_h_per_m: 1e-6,
                capacitance_f_per_m: 15e-12,
            },
            length_m: 2.0,
        };
        let c32 = ladder_vs_lumped_check(&gaa_exchange(mk(32), 20_000)).unwrap();
        let c64 = ladder_vs_lumped_check(&gaa_exchange(mk(64), 20_000)).unwrap();
        println!(
            "dev32 = {:.3e} dev64 = {:.3e}",
            c32.deviation, c64.deviation
        );
        assert!(c32.deviation < 1e-3);
        assert!(c64.deviation < 1e-3);
        // The deviation measures distributed-C physics, not segmentation:
        // doubling segments must not move it much.
        let change = (c64.deviation / c32.deviation - 1.0).abs();
        assert!(
            change < 0.25,
            "segment doubling changed deviation by {change}"
        );
    }

    #[test]
    fn ladder_bob_end_identity_and_determinism() {
        let ladder = CableModel {
            variant: CableVariant::Ladder {
                segments: 8,
                resistance_ohm_per_m: 0.035,
                inductance_h_per_m: 1e-6,
                capacitance_f_per_m: 100e-12,
            },
            length_m: 2.0,
        };
        let x = base_exchange(ladder, 3000);
        let t = simulate_exchange(&x).unwrap();
        for k in 0..t.len() {
            assert!((t.u_2[k] - (t.u_b[k] + 9000.0 * t.i[k])).abs() < 1e-12);
        }
        let t2 = simulate_exchange(&x).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn arrangements_are_balanced_and_derivable() {
        let p = ProtocolSpec {
            low_ohm: 2000.0,
            high_ohm: 9000.0,
            cable: CableModel::resistive(200.0, 2.0),
            kind: NoiseKind::Gaussian,
            bandwidth_hz: 5e3,
            kappa: 1e-9,
            sample_rate_hz: 1e5,
            n_oc: 50.0,
            parasitic_alice: ParasiticSpec::default(),
            parasitic_bob: ParasiticSpec::default(),
            master_seed: 99,
        };
        let n = 4000u64;
        let mut secure = 0;
        for idx in 0..n {
            if p.arrangement_for(idx).is_secure() {
                secure += 1;
            }
        }
        let frac = secure as f64 / n as f64;
        println!("secure fraction = {frac:.3}");
        assert!((frac - 0.5).abs() < 0.05);

        // Prefix stability: asking for more bits never reshuffles earlier ones.
        let first = p.secure_bit_indices(50);
        let more = p.secure_bit_indices(100);
        assert_eq!(&more[..50], &first[..]);

        // Window sizing: 50 correlation times at 5 kHz, 100 kHz sampling.
        assert_eq!(p.window_samples(), 500);

        // Same index -> same exchange; different master seed -> different.
        let a = p.exchange_for(7);
        let b = p.exchange_for(7);
        assert_eq!(a, b);
        let p2 = ProtocolSpec {
            master_seed: 100,
            ..p.clone()
        };
        assert_ne!(p2.exchange_for(7).seed_alice, a.seed_alice);
    }

    #[test]
    fn dc_parasitic_propagates_to_both_ends() {
        let mut x = base_exchange(CableModel::resistive(200.0, 2.0), 20_000);
        x.parasitic_alice = ParasiticSpec::dc(1.0);
        let t = simulate_exchange(&x).unwrap();
        let r_sum = 11_200.0;
        let i_dc = 1.0 / r_sum;
        let m2 = Signal::new(t.u_2.clone(), t.dt).mean();
        let m12 = Signal::new(t.u_12(), t.dt).mean();
        println!("mean u2 = {m2:.4} want {:.4}", i_dc * 9000.0);
        println!("mean u12 = {m12:.5} want {:.5}", i_dc * 200.0);
        assert!((m2 - i_dc * 9000.0).abs() < 0.01);
        assert!((m12 - i_dc * 200.0).abs() < 0.001);
    }

    #[test]
    fn phase_velocity_bookkeeping() {
        let cable = CableModel::lossless(2e-6, 2.0);
        let (vp, vm) = phase_velocities(1000.0, 10_000.0, &cable);
        assert!((vp - 1e10).abs() < 1e-3);
        assert!((vm - 1e9).abs() < 1e-4);
        let (vp2, vm2) = phase_velocities(10_000.0, 1000.0, &cable);
        assert!((vp2 - vm).abs() < 1e-6 && (vm2 - vp).abs() < 1e-3);
    }

    #[test]
    fn exchange_rejects_bad_specs() {
        let mut x = base_exchange(CableModel::resistive(200.0, 2.0), 100);
        x.r_alice_ohm = 0.0;
        assert!(simulate_exchange(&x).is_err());
        let mut x = base_exchange(CableModel::resistive(-1.0, 2.0), 100);
        assert!(simulate_exchange(&x).is_err());
        x = base_exchange(
            CableModel {
                variant: CableVariant::Ladder {
                    segments: 0,
                    resistance_ohm_per_m: 0.0,
                    inductance_h_per_m: 1e-6,
                    capacitance_f_per_m: 0.0,
                },
                length_m: 2.0,
            },
            100,
        );
        assert!(simulate_exchange(&x).is_err());
    }

    #[test]
    fn eve_taps_and_drop_ratio_basics() {
        let x = base_exchange(CableModel::resistive(200.0, 2.0), 2000);
        let t = simulate_exchange(&x).unwrap();
        let mid = EveTap::MidpointAverage.extract(&t);
        for k in 0..t.len() {
            assert!((mid[k] - 0.5 * (t.u_1[k] + t.u_2[k])).abs() < 1e-15);
        }
        let drop = cable_drop_ratio(&t, EveTap::End2).unwrap();
        // Resistive tabletop set: drop ratio ~ 4.6e-2.
        println!("resistive drop = {drop:.4}");
        assert!((drop / 0.0463 - 1.0).abs() < 0.10, "drop {drop}");
    }
}
