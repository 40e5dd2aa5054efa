//! Accumulated squared losses and the best fixed convex weight in hindsight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HindsightResult {
    /// Minimizing weight on the first constituent.
    pub beta_star: f64,
    /// Loss of the adaptive mixture, when a mixture trace was supplied.
    pub loss_mixture: Option<f64>,
    /// `min over beta of sum (y - beta*yhat1 - (1-beta)*yhat2)^2`.
    pub loss_best_convex: f64,
    pub n: usize,
}

/// `sum_t (y(t) - yhat(t))^2`.
pub fn accumulated_loss(ys: &[f64], yhats: &[f64]) -> Result<f64> {
    check_lengths(&[ys, yhats])?;
    Ok(ys.iter().zip(yhats).map(|(y, h)| (y - h).powi(2)).sum())
}

/// Loss of the fixed combination `beta*yhat1 + (1-beta)*yhat2`.
pub fn convex_loss(ys: &[f64], yhat1s: &[f64], yhat2s: &[f64], beta: f64) -> Result<f64> {
    check_lengths(&[ys, yhat1s, yhat2s])?;
    Ok(ys
        .iter()
        .zip(yhat1s.iter().zip(yhat2s))
        .map(|(y, (a, b))| (y - (beta * a + (1.0 - beta) * b)).powi(2))
        .sum())
}

/// Best fixed convex weight over the whole sequence.
///
/// The loss is a convex quadratic in `beta`; its unconstrained minimizer
/// `sum (y - yhat2)(yhat1 - yhat2) / sum (yhat1 - yhat2)^2` is projected onto
/// `[0, 1]`. When the two constituents never differ every weight is optimal
/// and `beta = 1/2` is returned.
pub fn best_convex_weight(ys: &[f64], yhat1s: &[f64], yhat2s: &[f64]) -> Result<HindsightResult> {
    check_lengths(&[ys, yhat1s, yhat2s])?;
    let mut acc = ComparatorSums::default();
    for ((&y, &a), &b) in ys.iter().zip(yhat1s).zip(yhat2s) {
        acc.push(y, a, b);
    }
    let beta_star = acc.minimizer();
    Ok(HindsightResult {
        beta_star,
        loss_mixture: None,
        loss_best_convex: convex_loss(ys, yhat1s, yhat2s, beta_star)?,
        n: ys.len(),
    })
}

/// Same as [`best_convex_weight`], also filling in the mixture loss.
pub fn hindsight_with_mixture(
    ys: &[f64],
    yhat1s: &[f64],
    yhat2s: &[f64],
    yhats: &[f64],
) -> Result<HindsightResult> {
    let mut result = best_convex_weight(ys, yhat1s, yhat2s)?;
    result.loss_mixture = Some(accumulated_loss(ys, yhats)?);
    Ok(result)
}

fn check_lengths(seqs: &[&[f64]]) -> Result<()> {
    let n = seqs[0].len();
    if n == 0 {
        return Err(Error::invalid("sequences must be non-empty"));
    }
    if let Some(bad) = seqs.iter().find(|s| s.len() != n) {
        return Err(Error::invalid(format!(
            "sequence lengths differ: {n} vs {}",
            bad.len()
        )));
    }
    Ok(())
}

/// Running sufficient statistics for the comparator loss, so the best
/// weight of every prefix is available in O(1) per sample.
///
/// With `d = yhat1 - yhat2` and `r = y - yhat2`, the prefix loss is
/// `sum r^2 - 2 beta sum r d + beta^2 sum d^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ComparatorSums {
    rr: f64,
    rd: f64,
    dd: f64,
    n: usize,
}

impl ComparatorSums {
    pub fn push(&mut self, y: f64, yhat1: f64, yhat2: f64) {
        let d = yhat1 - yhat2;
        let r = y - yhat2;
        self.rr += r * r;
        self.rd += r * d;
        self.dd += d * d;
        self.n += 1;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn minimizer(&self) -> f64 {
        if self.dd == 0.0 {
            0.5
        } else {
            (self.rd / self.dd).clamp(0.0, 1.0)
        }
    }

    /// Prefix loss at `beta`, floored at zero against rounding.
    pub fn loss_at(&self, beta: f64) -> f64 {
        (self.rr - 2.0 * beta * self.rd + beta * beta * self.dd).max(0.0)
    }

    pub fn min_loss(&self) -> f64 {
        self.loss_at(self.minimizer())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulated_loss_examples() {
        assert_eq!(accumulated_loss(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        assert_eq!(accumulated_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(accumulated_loss(&[0.5, -0.5, 0.25], &[0.0; 3]).unwrap(), 0.5625);
    }

    #[test]
    fn accumulated_loss_errors() {
        assert!(accumulated_loss(&[], &[]).is_err());
        assert!(accumulated_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert!(best_convex_weight(&[1.0], &[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn interior_minimizer() {
        let n = 100;
        let r = best_convex_weight(&vec![0.5; n], &vec![1.0; n], &vec![0.0; n]).unwrap();
        assert_eq!(r.beta_star, 0.5);
        assert_eq!(r.loss_best_convex, 0.0);
        assert_eq!(r.n, n);
    }

    #[test]
    fn perfect_first_filter() {
        let ys = [0.3, -0.7, 0.1, 0.9];
        let r = best_convex_weight(&ys, &ys, &[0.3, 0.0, 0.1, 0.2]).unwrap();
        assert_eq!(r.beta_star, 1.0);
        assert_eq!(r.loss_best_convex, 0.0);
    }

    #[test]
    fn degenerate_constituents() {
        let ys = [0.3, -0.7, 0.1];
        let same = [0.1, 0.2, -0.1];
        let r = best_convex_weight(&ys, &same, &same).unwrap();
        assert_eq!(r.beta_star, 0.5);
        assert_eq!(r.loss_best_convex, accumulated_loss(&ys, &same).unwrap());
    }

    #[test]
    fn minimizer_outside_is_clamped_to_nearer_endpoint() {
        // y overshoots yhat1 on the far side of yhat2: unconstrained beta = 2.
        let r = best_convex_weight(&[2.0, 2.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r.beta_star, 1.0);
        let r = best_convex_weight(&[-1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r.beta_star, 0.0);
    }

    #[test]
    fn prefix_sums_match_direct_loss() {
        let ys = [0.3, -0.7, 0.1, 0.9, -0.2];
        let a = [0.2, -0.5, 0.4, 0.6, 0.0];
        let b = [0.0, 0.1, -0.3, 0.8, -0.4];
        let mut acc = ComparatorSums::default();
        for i in 0..ys.len() {
            acc.push(ys[i], a[i], b[i]);
            for beta in [0.0, 0.3, 1.0] {
                let direct = convex_loss(&ys[..=i], &a[..=i], &b[..=i], beta).unwrap();
                assert!((acc.loss_at(beta) - direct).abs() < 1e-14);
            }
        }
    }
}
