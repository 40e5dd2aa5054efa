//! Seeded generators of bounded test sequences.
//!
//! Randomness comes from PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`) seeded with
//! `seed_from_u64`, which gives identical streams on every platform.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seeds of the logistic map are drawn from this open interval.
pub const LOGISTIC_SEED_RANGE: (f64, f64) = (0.01, 0.99);

/// Dyadic rationals `m / 2^k` with `k` up to this value are rejected as
/// logistic seeds; at `r = 4` they reach the fixed point 0 in a few steps.
const DYADIC_DEPTH: i32 = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SignalKind {
    /// `x(t+1) = r x(t) (1 - x(t))`, emitted as `amplitude (2x - 1)`.
    LogisticChaotic { rate: f64 },
    /// AR(1) whose coefficient cycles through `coefficients` every
    /// `segment_length` samples, driven by uniform noise and saturated.
    PiecewiseAr {
        coefficients: Vec<f64>,
        segment_length: usize,
        noise: f64,
    },
    /// Sinusoid whose frequency drifts slowly, plus uniform noise.
    SineDrift { frequency: f64, drift: f64, noise: f64 },
    /// `+amplitude` for `period` samples, then `-amplitude`, and so on.
    AdversarialFlip { period: usize },
    /// One sample per row of a CSV file.
    Csv { path: PathBuf },
}

impl SignalKind {
    pub fn logistic() -> Self {
        SignalKind::LogisticChaotic { rate: 4.0 }
    }

    pub fn piecewise_ar() -> Self {
        SignalKind::PiecewiseAr {
            coefficients: vec![0.95, -0.6, 0.3],
            segment_length: 500,
            noise: 0.3,
        }
    }

    pub fn sine_drift() -> Self {
        SignalKind::SineDrift {
            frequency: 0.01,
            drift: 0.5,
            noise: 0.1,
        }
    }

    pub fn adversarial_flip(period: usize) -> Self {
        SignalKind::AdversarialFlip { period }
    }
}

/// Command-line form: `logistic-chaotic[:rate]`,
/// `piecewise-ar[:c1/c2/...[:segment]]`, `sine-drift[:freq[:drift]]`,
/// `adversarial-flip[:period]`, or `csv:<path>`.
impl FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n, Some(r)),
            None => (s, None),
        };
        let bad = |e: &dyn fmt::Display| Error::field("signal", format!("`{s}`: {e}"));
        let float = |v: &str| v.parse::<f64>().map_err(|e| bad(&e));
        let int = |v: &str| v.parse::<usize>().map_err(|e| bad(&e));
        let kind = match name {
            "logistic-chaotic" | "logistic" => SignalKind::LogisticChaotic {
                rate: rest.map(float).transpose()?.unwrap_or(4.0),
            },
            "piecewise-ar" => {
                let mut kind = SignalKind::piecewise_ar();
                if let (Some(rest), SignalKind::PiecewiseAr { coefficients, segment_length, .. }) =
                    (rest, &mut kind)
                {
                    let mut parts = rest.split(':');
                    if let Some(c) = parts.next() {
                        *coefficients = c.split('/').map(float).collect::<Result<_>>()?;
                    }
                    if let Some(seg) = parts.next() {
                        *segment_length = int(seg)?;
                    }
                }
                kind
            }
            "sine-drift" => {
                let mut kind = SignalKind::sine_drift();
                if let (Some(rest), SignalKind::SineDrift { frequency, drift, .. }) = (rest, &mut kind) {
                    let mut parts = rest.split(':');
                    if let Some(f) = parts.next() {
                        *frequency = float(f)?;
                    }
                    if let Some(d) = parts.next() {
                        *drift = float(d)?;
                    }
                }
                kind
            }
            "adversarial-flip" => SignalKind::AdversarialFlip {
                period: rest.map(int).transpose()?.unwrap_or(1),
            },
            "csv" => SignalKind::Csv {
                path: PathBuf::from(rest.ok_or_else(|| bad(&"missing path"))?),
            },
            _ => return Err(bad(&"unknown signal kind")),
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    #[serde(flatten)]
    pub kind: SignalKind,
    pub length: usize,
    pub seed: u64,
    pub amplitude: f64,
}

impl SignalSpec {
    pub fn new(kind: SignalKind, length: usize, seed: u64, amplitude: f64) -> Self {
        SignalSpec {
            kind,
            length,
            seed,
            amplitude,
        }
    }

    pub fn validate(&self, y_bound: f64) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(Error::field("amplitude", format!("must be positive, got {}", self.amplitude)));
        }
        if self.amplitude > y_bound {
            return Err(Error::field(
                "amplitude",
                format!("{} exceeds the bound Y = {y_bound}", self.amplitude),
            ));
        }
        if self.length == 0 && !matches!(self.kind, SignalKind::Csv { .. }) {
            return Err(Error::field("length", "must be at least 1"));
        }
        match &self.kind {
            SignalKind::LogisticChaotic { rate } if !(*rate > 0.0 && *rate <= 4.0) => {
                Err(Error::field("rate", format!("must lie in (0, 4], got {rate}")))
            }
            SignalKind::PiecewiseAr {
                coefficients,
                segment_length,
                noise,
            } => {
                if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::field("coefficients", "need at least one finite coefficient"));
                }
                if *segment_length == 0 {
                    return Err(Error::field("segment_length", "must be at least 1"));
                }
                if !(noise.is_finite() && *noise >= 0.0) {
                    return Err(Error::field("noise", format!("must be non-negative, got {noise}")));
                }
                Ok(())
            }
            SignalKind::SineDrift { frequency, drift, noise } => {
                if !(frequency.is_finite() && drift.is_finite() && noise.is_finite() && *noise >= 0.0) {
                    return Err(Error::field("sine-drift", "parameters must be finite, noise non-negative"));
                }
                Ok(())
            }
            SignalKind::AdversarialFlip { period } if *period == 0 => {
                Err(Error::field("period", "must be at least 1"))
            }
            _ => Ok(()),
        }
    }
}

/// Produces the sequence described by `spec`. Every sample lies in
/// `[-amplitude, amplitude]`; CSV samples must lie in `[-Y, Y]`.
pub fn generate(spec: &SignalSpec, y_bound: f64) -> Result<Vec<f64>> {
    spec.validate(y_bound)?;
    let mut rng = Pcg64::seed_from_u64(spec.seed);
    let n = spec.length;
    let amp = spec.amplitude;
    let samples = match &spec.kind {
        SignalKind::LogisticChaotic { rate } => {
            let x0 = admissible_logistic_seed(rng.gen_range(LOGISTIC_SEED_RANGE.0..LOGISTIC_SEED_RANGE.1));
            let mut x = x0;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(amp * (2.0 * x - 1.0));
                x = rate * x * (1.0 - x);
                if x <= 0.0 || x >= 1.0 || is_shallow_dyadic(x) {
                    // Orbit collapsed onto a degenerate point; restart it.
                    x = admissible_logistic_seed(rng.gen_range(LOGISTIC_SEED_RANGE.0..LOGISTIC_SEED_RANGE.1));
                }
            }
            out
        }
        SignalKind::PiecewiseAr {
            coefficients,
            segment_length,
            noise,
        } => {
            let mut prev = 0.0;
            (0..n)
                .map(|t| {
                    let phi = coefficients[(t / segment_length) % coefficients.len()];
                    let drive: f64 = rng.gen_range(-1.0..=1.0);
                    prev = (phi * prev + noise * amp * drive).clamp(-amp, amp);
                    prev
                })
                .collect()
        }
        SignalKind::SineDrift { frequency, drift, noise } => {
            let mut phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let span = n.max(1) as f64;
            (0..n)
                .map(|t| {
                    let f = frequency * (1.0 + drift * (std::f64::consts::TAU * t as f64 / span).sin());
                    phase += std::f64::consts::TAU * f;
                    let drive: f64 = rng.gen_range(-1.0..=1.0);
                    (amp * ((1.0 - noise) * phase.sin() + noise * drive)).clamp(-amp, amp)
                })
                .collect()
        }
        SignalKind::AdversarialFlip { period } => (0..n)
            .map(|t| if (t / period) % 2 == 0 { amp } else { -amp })
            .collect(),
        SignalKind::Csv { path } => {
            let mut v = read_signal_csv(path)?;
            if let Some(bad) = v.iter().find(|x| x.abs() > y_bound) {
                return Err(Error::field(
                    "input-csv",
                    format!("sample {bad} in {} exceeds the bound Y = {y_bound}", path.display()),
                ));
            }
            if n > 0 {
                v.truncate(n);
            }
            v
        }
    };
    Ok(samples)
}

/// Raw orbit of the logistic map, without any seed adjustment.
pub fn logistic_orbit(x1: f64, rate: f64, n: usize) -> Vec<f64> {
    std::iter::successors(Some(x1), |&x| Some(rate * x * (1.0 - x)))
        .take(n)
        .collect()
}

fn is_shallow_dyadic(x: f64) -> bool {
    (x * 2f64.powi(DYADIC_DEPTH)).fract() == 0.0
}

/// Moves a candidate logistic seed off shallow dyadic rationals such as
/// `1/2` (which maps to 1 and then to the fixed point 0) or `3/4` (a fixed
/// point at `r = 4`).
pub fn admissible_logistic_seed(x: f64) -> f64 {
    let (lo, hi) = LOGISTIC_SEED_RANGE;
    let mut x = x.clamp(lo, hi);
    while is_shallow_dyadic(x) {
        x += std::f64::consts::FRAC_1_SQRT_2 * 1e-6;
        if x >= hi {
            x = lo + std::f64::consts::FRAC_1_SQRT_2 * 1e-3;
        }
    }
    x
}

/// Reads one sample per row. A non-numeric first row is treated as a
/// header; only the first column is used.
pub fn read_signal_csv(path: &Path) -> Result<Vec<f64>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let Some(field) = row.get(0) else { continue };
        match field.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(v) => return Err(Error::field("input-csv", format!("row {}: non-finite value {v}", i + 1))),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::field("input-csv", format!("row {}: {e}", i + 1))),
        }
    }
    if out.is_empty() {
        return Err(Error::field("input-csv", format!("{} holds no samples", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flip_period_one() {
        let spec = SignalSpec::new(SignalKind::adversarial_flip(1), 4, 0, 1.0);
        assert_eq!(generate(&spec, 1.0).unwrap(), vec![1.0, -1.0, 1.0, -1.0]);
        let spec = SignalSpec::new(SignalKind::adversarial_flip(2), 5, 0, 0.5);
        assert_eq!(generate(&spec, 1.0).unwrap(), vec![0.5, 0.5, -0.5, -0.5, 0.5]);
    }

    #[test]
    fn logistic_half_seed_degenerates() {
        assert_eq!(logistic_orbit(0.5, 4.0, 5), vec![0.5, 1.0, 0.0, 0.0, 0.0]);
        let x = admissible_logistic_seed(0.5);
        assert_ne!(x, 0.5);
        let orbit = logistic_orbit(x, 4.0, 200);
        assert!(orbit[10..].iter().any(|&v| v > 0.1 && v < 0.9));
        assert_ne!(admissible_logistic_seed(0.75), 0.75);
    }

    #[test]
    fn logistic_generator_is_chaotic_and_bounded() {
        let spec = SignalSpec::new(SignalKind::logistic(), 10_000, 7, 0.8);
        let v = generate(&spec, 1.0).unwrap();
        assert!(v.iter().all(|x| x.abs() <= 0.8));
        // Stays away from the collapsed orbit.
        let tail_spread = v[9_000..].iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(tail_spread > 0.5);
        assert!(v[9_000..].windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn amplitude_above_bound_is_rejected() {
        let spec = SignalSpec::new(SignalKind::logistic(), 10, 1, 2.0);
        assert!(matches!(generate(&spec, 1.0), Err(Error::Validation { field: "amplitude", .. })));
    }

    #[test]
    fn parse_signal_kinds() {
        assert_eq!("logistic-chaotic".parse::<SignalKind>().unwrap(), SignalKind::logistic());
        assert_eq!(
            "adversarial-flip:3".parse::<SignalKind>().unwrap(),
            SignalKind::adversarial_flip(3)
        );
        match "piecewise-ar:0.9/-0.2:100".parse::<SignalKind>().unwrap() {
            SignalKind::PiecewiseAr { coefficients, segment_length, .. } => {
                assert_eq!(coefficients, vec![0.9, -0.2]);
                assert_eq!(segment_length, 100);
            }
            other => panic!("{other:?}"),
        }
        assert!("brownian".parse::<SignalKind>().is_err());
        assert!("adversarial-flip:x".parse::<SignalKind>().is_err());
    }

    #[test]
    fn csv_signal_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sig.csv");
        std::fs::write(&path, "y\n0.5\n-0.25\n0.125\n").unwrap();
        let spec = SignalSpec::new(SignalKind::Csv { path: path.clone() }, 0, 0, 1.0);
        assert_eq!(generate(&spec, 1.0).unwrap(), vec![0.5, -0.25, 0.125]);
        let spec = SignalSpec::new(SignalKind::Csv { path: path.clone() }, 2, 0, 1.0);
        assert_eq!(generate(&spec, 1.0).unwrap().len(), 2);
        assert!(generate(&spec, 0.3).is_err());

        let missing = SignalSpec::new(SignalKind::Csv { path: dir.path().join("nope.csv") }, 0, 0, 1.0);
        assert!(generate(&missing, 1.0).unwrap_err().is_io());
    }

    fn any_kind() -> impl Strategy<Value = SignalKind> {
        prop_oneof![
            Just(SignalKind::logistic()),
            Just(SignalKind::piecewise_ar()),
            Just(SignalKind::sine_drift()),
            (1usize..7).prop_map(SignalKind::adversarial_flip),
        ]
    }

    proptest! {
        #[test]
        fn bounded_and_reproducible(kind in any_kind(), seed in any::<u64>(), amp in 0.05f64..1.0, n in 1usize..600) {
            let spec = SignalSpec::new(kind, n, seed, amp);
            let a = generate(&spec, 1.0).unwrap();
            let b = generate(&spec, 1.0).unwrap();
            prop_assert_eq!(a.len(), n);
            prop_assert!(a.iter().all(|x| x.abs() <= amp));
            prop_assert_eq!(a, b);
        }
    }
}
