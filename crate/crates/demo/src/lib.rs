//! Browser bindings for `convex-mixture`. Each export returns a JSON string
//! for the page in `www/` to plot. The `*_json` functions hold the logic so
//! they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use convex_mixture::bound::{derive_constants, lemma_necessity_check, quadratic_diagnostics, GapPoint, LemmaReport};
use convex_mixture::experiment::{run_experiment, ExperimentConfig, RateChoice};
use convex_mixture::signals::SignalSpec;

/// Upper limit on plotted trajectory points.
const MAX_POINTS: usize = 1000;
/// Longest run the page may request.
const MAX_STEPS: usize = 200_000;

#[derive(Serialize)]
struct Simulation {
    mu: f64,
    beta_star: f64,
    clip_events: usize,
    min_slack: f64,
    violation_detected: bool,
    /// `(t, lambda)` pairs, thinned to at most `MAX_POINTS`.
    lambda: Vec<(usize, f64)>,
    regret: Vec<GapPoint>,
}

/// Runs one experiment and returns its weight trajectory and regret gap.
pub fn simulate_json(
    signal: &str,
    filter1: &str,
    filter2: &str,
    epsilon: f64,
    lambda_plus: f64,
    steps: usize,
    seed: u64,
) -> Result<String, String> {
    if steps == 0 || steps > MAX_STEPS {
        return Err(format!("steps must be in 1..={MAX_STEPS}"));
    }
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        signal: SignalSpec::new(signal.parse().map_err(err)?, steps, seed, defaults.y_bound),
        filters: [filter1.parse().map_err(err)?, filter2.parse().map_err(err)?],
        lambda_plus,
        rate: RateChoice::Epsilon(epsilon),
        ..defaults
    };
    let exp = run_experiment(&cfg).map_err(err)?;
    let stride = exp.trace.states.len().div_ceil(MAX_POINTS).max(1);
    let lambda = exp
        .trace
        .states
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(i, s)| (i + 1, s.lambda))
        .collect();
    let audit = exp.audit.as_ref();
    let out = Simulation {
        mu: exp.mixture.learning_rate,
        beta_star: exp.hindsight.beta_star,
        clip_events: exp.trace.clip_events(),
        min_slack: audit.map_or(f64::NAN, |a| a.min_slack),
        violation_detected: exp.violation_detected(),
        lambda,
        regret: exp.regret.map(|r| r.gap_by_n).unwrap_or_default(),
    };
    serde_json::to_string(&out).map_err(err)
}

#[derive(Serialize)]
struct Curve {
    k1: f64,
    k2: f64,
    corner: f64,
    mu: f64,
    points: Vec<(f64, f64)>,
}

/// Samples `H(k)` on `[0, 1/2]` together with its roots and the corner
/// curvature `lambda_plus (1 - lambda_plus)`.
pub fn quadratic_curve_json(epsilon: f64, y_bound: f64, lambda_plus: f64, samples: usize) -> Result<String, String> {
    let c = derive_constants(epsilon, y_bound, lambda_plus).map_err(err)?;
    let q = quadratic_diagnostics(&c).map_err(err)?;
    let samples = samples.clamp(2, 10_000);
    let points = (0..samples)
        .map(|i| {
            let k = 0.5 * i as f64 / (samples - 1) as f64;
            (k, c.quadratic(k))
        })
        .collect();
    let out = Curve {
        k1: q.k1,
        k2: q.k2,
        corner: q.corner,
        mu: c.mu,
        points,
    };
    serde_json::to_string(&out).map_err(err)
}

#[derive(Serialize)]
struct Lemma {
    consistent: bool,
    #[serde(flatten)]
    report: LemmaReport,
}

/// Evaluates the two necessity instances at the constants derived from
/// `epsilon`, optionally replacing `b`.
pub fn lemma_json(epsilon: f64, b: Option<f64>, lambda_plus: f64, y_bound: f64) -> Result<String, String> {
    let c = derive_constants(epsilon, y_bound, lambda_plus).map_err(err)?;
    let report = lemma_necessity_check(c.a, b.unwrap_or(c.b), c.mu, lambda_plus, y_bound).map_err(err)?;
    serde_json::to_string(&Lemma {
        consistent: report.consistent(),
        report,
    })
    .map_err(err)
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[wasm_bindgen]
pub fn simulate(
    signal: &str,
    filter1: &str,
    filter2: &str,
    epsilon: f64,
    lambda_plus: f64,
    steps: usize,
    seed: u32,
) -> Result<String, JsError> {
    simulate_json(signal, filter1, filter2, epsilon, lambda_plus, steps, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn quadratic_curve(epsilon: f64, y_bound: f64, lambda_plus: f64, samples: usize) -> Result<String, JsError> {
    quadratic_curve_json(epsilon, y_bound, lambda_plus, samples).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn lemma(epsilon: f64, b: Option<f64>, lambda_plus: f64, y_bound: f64) -> Result<String, JsError> {
    lemma_json(epsilon, b, lambda_plus, y_bound).map_err(|e| JsError::new(&e))
}
