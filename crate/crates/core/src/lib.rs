//! Convexly constrained adaptive mixture of two constituent filters, with a
//! deterministic audit of its individual-sequence regret guarantee.
//!
//! The mixture outputs `lambda(t) yhat1(t) + (1 - lambda(t)) yhat2(t)` and
//! adapts `lambda` by a gradient step through a logistic parameterization,
//! keeping it inside `[lambda_plus, 1 - lambda_plus]`. For every bounded
//! sequence, its accumulated squared error is within a constant factor of
//! the best fixed convex combination chosen in hindsight, plus an additive
//! term that shrinks like `1/n`. The [`bound`] module checks this claim
//! numerically, step by step, on recorded runs.
//!
//! ```
//! use convex_mixture::bound::derive_constants;
//! use convex_mixture::mixture::Mixture;
//!
//! let consts = derive_constants(1.0, 1.0, 0.25).unwrap();
//! let mut mix = Mixture::new(consts.mixture_config().unwrap()).unwrap();
//! let (rec, _) = mix.step(0.5, 1.0, 0.0).unwrap();
//! assert_eq!(rec.yhat, 0.5);
//! ```

pub mod bound;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod hindsight;
pub mod mixture;
pub mod run;
pub mod signals;

pub use error::{Error, Result};
