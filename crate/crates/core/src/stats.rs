//! Estimators, closed-form circuit oracles, and security metrics.
//!
//! Everything here is either an exact algebraic consequence of the lumped
//! loop model (the `analytic_*` family, used as oracles against Monte Carlo
//! runs) or a standard statistical estimator (Wilson interval, binary-entropy
//! leak, Welch periodogram, through-origin scaling fit).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{mean, variance, Signal};

/// z-score for a two-sided 95% interval.
pub const Z_95: f64 = 1.959963984540054;

// ---------------------------------------------------------------------------
// Attack scoring
// ---------------------------------------------------------------------------

/// Tally of one attack's guesses over a batch of secure bits.
///
/// An abstention counts as half a success: a guesser who abstains and flips
/// a fair coin instead is right half the time, so this scoring leaves a
/// do-nothing attack at exactly p = 0.5 instead of rewarding refusals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTally {
    pub name: String,
    pub trials: u64,
    pub correct: u64,
    pub abstained: u64,
}

impl AttackTally {
    pub fn new(name: impl Into<String>) -> Self {
        AttackTally {
            name: name.into(),
            trials: 0,
            correct: 0,
            abstained: 0,
        }
    }

    pub fn record(&mut self, correct: bool, abstained: bool) {
        self.trials += 1;
        if abstained {
            self.abstained += 1;
        } else if correct {
            self.correct += 1;
        }
    }

    /// Effective success count including half-credit abstentions.
    pub fn successes(&self) -> f64 {
        self.correct as f64 + 0.5 * self.abstained as f64
    }

    pub fn p_hat(&self) -> f64 {
        if self.trials == 0 {
            0.5
        } else {
            self.successes() / self.trials as f64
        }
    }

    pub fn wilson(&self, z: f64) -> (f64, f64) {
        wilson_interval(self.successes(), self.trials, z)
    }

    pub fn leak_bits(&self) -> f64 {
        info_leak(self.p_hat()).unwrap_or(0.0)
    }
}

/// Success probability with abstentions scored as coin flips.
pub fn estimate_p(correct: u64, abstained: u64, trials: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be > 0"));
    }
    if correct + abstained > trials {
        return Err(Error::invalid(
            "correct+abstained",
            format!("{} exceeds trials {trials}", correct + abstained),
        ));
    }
    Ok((correct as f64 + 0.5 * abstained as f64) / trials as f64)
}

/// Wilson score interval for a binomial proportion. `successes` may be
/// fractional (abstention half-credits).
pub fn wilson_interval(successes: f64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = (successes / n).clamp(0.0, 1.0);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Information leak of a binary guess with success probability `p`:
/// 1 − H₂(p) bits per exchanged bit. 0 at p = 0.5, 1 at p ∈ {0, 1}.
pub fn info_leak(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability {
            value: p,
            context: "info_leak",
        });
    }
    let h = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    Ok(1.0 - h(p) - h(1.0 - p))
}

// ---------------------------------------------------------------------------
// Lumped-loop closed forms
// ---------------------------------------------------------------------------

/// Second moments of the loop observables for resistors `r_a`, `r_b` joined
/// by a series cable resistance `r_c`, with Johnson-scaled generators
/// (var = kappa * R * b). Current sign: positive from the `r_a` end toward
/// the `r_b` end; end voltages are taken just inside the cable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndMoments {
    pub u1_sq: f64,
    pub u2_sq: f64,
    pub i_sq: f64,
    pub u12_sq: f64,
    pub cov_u1_u2: f64,
    /// u1_sq − u2_sq; collapses to kappa·b·r_c²·(r_a − r_b)/r_sum².
    pub delta: f64,
}

pub fn analytic_end_moments(kappa: f64, b: f64, r_a: f64, r_b: f64, r_c: f64) -> EndMoments {
    let kb = kappa * b;
    let rs = r_a + r_b + r_c;
    let rs2 = rs * rs;
    let u1_sq = kb * r_a * ((r_b + r_c) * (r_b + r_c) + r_a * r_b) / rs2;
    let u2_sq = kb * r_b * ((r_a + r_c) * (r_a + r_c) + r_a * r_b) / rs2;
    let i_sq = kb * (r_a + r_b) / rs2;
    EndMoments {
        u1_sq,
        u2_sq,
        i_sq,
        u12_sq: r_c * r_c * i_sq,
        cov_u1_u2: kb * r_a * r_b * (r_a + r_b + 2.0 * r_c) / rs2,
        delta: kb * r_c * r_c * (r_a - r_b) / rs2,
    }
}

/// Relative mean-square end imbalance |Δ| / mean(⟨U₁²⟩, ⟨U₂²⟩); the kappa·b
/// scale cancels. This is the quadratic-in-r_c law the sweep fit targets.
pub fn relative_ms_imbalance(r_a: f64, r_b: f64, r_c: f64) -> f64 {
    let m = analytic_end_moments(1.0, 1.0, r_a, r_b, r_c);
    m.delta.abs() / (0.5 * (m.u1_sq + m.u2_sq))
}

// ---------------------------------------------------------------------------
// Correlation / invariance statistics
// ---------------------------------------------------------------------------

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DegenerateSignal(format!(
            "pearson needs two equal-length series (>= 2), got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSignal("constant series in pearson".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Sample correlation between cable voltage and cable current — the
/// orthogonality check statistic for secure arrangements.
pub fn orthogonality_stat(u: &[f64], i: &[f64]) -> Result<f64> {
    pearson(u, i)
}

/// Relative gap between var(u + r·i) and var(u − r·i).
///
/// For a secure arrangement on an ideal loop both sign choices have the
/// same variance (the cross term is orthogonal), so this gap is pure
/// estimator noise of order sqrt(r²/(r_a·r_b)) / sqrt(N_eff).
pub fn signflip_variance_gap(u: &[f64], i: &[f64], r: f64) -> Result<f64> {
    if u.len() != i.len() || u.len() < 2 {
        return Err(Error::DegenerateSignal(
            "signflip gap needs equal-length series".into(),
        ));
    }
    let plus: Vec<f64> = u.iter().zip(i).map(|(a, b)| a + r * b).collect();
    let minus: Vec<f64> = u.iter().zip(i).map(|(a, b)| a - r * b).collect();
    let vu = variance(u);
    if vu == 0.0 {
        return Err(Error::DegenerateSignal(
            "constant voltage in signflip gap".into(),
        ));
    }
    Ok((variance(&plus) - variance(&minus)).abs() / vu)
}

/// Effective independent-sample count of an autocorrelated series:
/// n / (1 + 2 Σ ρ̂_k²), summing lags while |ρ̂_k| stays above the 2/√n
/// noise floor (at most n/4 lags).
pub fn effective_sample_count(sig: &Signal) -> f64 {
    let n = sig.len();
    if n < 2 {
        return n as f64;
    }
    let nf = n as f64;
    let floor = 2.0 / nf.sqrt();
    let mut rho_sq_sum = 0.0;
    for k in 1..=(n / 4).max(1) {
        let r = sig.autocorr(k);
        if r.abs() < floor {
            break;
        }
        rho_sq_sum += r * r;
    }
    nf / (1.0 + 2.0 * rho_sq_sum)
}

// ---------------------------------------------------------------------------
// Scaling fit (success probability vs cable resistance)
// ---------------------------------------------------------------------------

/// Through-origin least-squares fit of (p̂ − 0.5) against r_c².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Slope against r_c², in Ω⁻².
    pub theta_prime: f64,
    /// Dimensionless constant: theta_prime · r_a · r_b of the sweep set.
    pub theta: f64,
    /// 1 − SS_res / Σy² (uncentered convention, as appropriate for a
    /// through-origin model).
    pub r_squared: f64,
}

impl ScalingFit {
    /// Predicted p − 0.5 at another parameter set, assuming the law
    /// p − 0.5 = theta · |z_c|² / (r_a · r_b).
    pub fn predicted_excess(&self, zc_sq: f64, r_a: f64, r_b: f64) -> f64 {
        self.theta * zc_sq / (r_a * r_b)
    }
}

/// Fit p̂ − 0.5 = theta_prime · r_c² through the origin.
pub fn scaling_fit(r_c: &[f64], p_hat: &[f64], r_a: f64, r_b: f64) -> Result<ScalingFit> {
    if r_c.len() != p_hat.len() || r_c.len() < 2 {
        return Err(Error::invalid(
            "scaling_fit",
            "need >= 2 matched (r_c, p) points",
        ));
    }
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&rc, &p) in r_c.iter().zip(p_hat) {
        let x = rc * rc;
        let y = p - 0.5;
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    }
    if sxx == 0.0 {
        return Err(Error::invalid("scaling_fit", "all r_c are zero"));
    }
    let theta_prime = sxy / sxx;
    let mut ss_res = 0.0;
    for (&rc, &p) in r_c.iter().zip(p_hat) {
        let resid = (p - 0.5) - theta_prime * rc * rc;
        ss_res += resid * resid;
    }
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(ScalingFit {
        theta_prime,
        theta: theta_prime * r_a * r_b,
        r_squared,
    })
}

// ---------------------------------------------------------------------------
// Spectral estimation
// ---------------------------------------------------------------------------

/// One-sided power spectral density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freq_hz: Vec<f64>,
    /// Density in V²/Hz; integrates to the signal variance.
    pub density: Vec<f64>,
}

impl Spectrum {
    /// Trapezoidal integral of the density over [f_lo, f_hi].
    pub fn band_power(&self, f_lo: f64, f_hi: f64) -> f64 {
        let mut acc = 0.0;
        for w in self.freq_hz.windows(2) {
            let (f0, f1) = (w[0], w[1]);
            if f1 <= f_lo || f0 >= f_hi {
                continue;
            }
            let i = self.freq_hz.iter().position(|&f| f == f0).unwrap();
            acc += 0.5 * (self.density[i] + self.density[i + 1]) * (f1 - f0);
        }
        acc
    }

    pub fn total_power(&self) -> f64 {
        if self.freq_hz.len() < 2 {
            return 0.0;
        }
        let df = self.freq_hz[1] - self.freq_hz[0];
        self.density.iter().sum::<f64>() * df
    }
}

/// Welch periodogram: Hann window, 50% overlap, one-sided density
/// normalized so that the integral equals the variance (`2 |X|²/(fs Σw²)`,
/// with the factor 2 dropped at DC and Nyquist).
pub fn spectrum(sig: &Signal, nperseg: usize) -> Result<Spectrum> {
    let n = sig.len();
    if nperseg < 8 || nperseg % 2 != 0 {
        return Err(Error::invalid("nperseg", "must be even and >= 8"));
    }
    if n < nperseg {
        return Err(Error::DegenerateSignal(format!(
            "need >= {nperseg} samples for one segment, got {n}"
        )));
    }
    let fs = 1.0 / sig.dt;
    let window: Vec<f64> = (0..nperseg)
        .map(|k| {
            let c = (2.0 * std::f64::consts::PI * k as f64 / nperseg as f64).cos();
            0.5 * (1.0 - c)
        })
        .collect();
    let wpow: f64 = window.iter().map(|w| w * w).sum();
    let hop = nperseg / 2;
    let nseg = 1 + (n - nperseg) / hop;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nperseg);
    let nbins = nperseg / 2 + 1;
    let mut acc = vec![0.0; nbins];
    let mut buf: Vec<Complex<f64>> = vec![Complex::default(); nperseg];
    for s in 0..nseg {
        let seg = &sig.samples[s * hop..s * hop + nperseg];
        let m = mean(seg);
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex::new((seg[k] - m) * window[k], 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let mag2 = buf[k].norm_sqr();
            let onesided = if k == 0 || k == nbins - 1 { 1.0 } else { 2.0 };
            *a += onesided * mag2 / (fs * wpow);
        }
    }
    for a in acc.iter_mut() {
        *a /= nseg as f64;
    }
    let freq: Vec<f64> = (0..nbins).map(|k| k as f64 * fs / nperseg as f64).collect();
    Ok(Spectrum {
        freq_hz: freq,
        density: acc,
    })
}
