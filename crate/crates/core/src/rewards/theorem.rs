//! Two-agent cooperation threshold for softmax credit assignment.
//!
//! With values `v1 > v2` and bids in `[b_min, b_max]`, agent 2's assigned
//! reward is `alpha_2(b) * v1` when it lets agent 1 win (region L: `b1 >= b2`)
//! and `alpha_2(b) * v2` when it outbids agent 1 (region H: `b2 > b1`). Agent 2
//! prefers L when
//!
//! ```text
//! g(tau) = v1 / (2 v2) * (exp((b_min - b_max) / tau) + 1) >= 1
//! ```
//!
//! which always holds for `v1 >= 2 v2` and otherwise holds for
//! `tau >= (b_min - b_max) / ln(2 v2 / v1 - 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    /// Agent 2 prefers region L for every positive temperature.
    AlwaysCooperative,
    /// Agent 2 prefers region L for every temperature at or above this value.
    AtLeast(f64),
}

impl Threshold {
    pub fn is_cooperative(&self, tau: f64) -> bool {
        match self {
            Threshold::AlwaysCooperative => true,
            Threshold::AtLeast(t) => tau >= *t,
        }
    }
}

fn check_instance(v1: f64, v2: f64, b_min: f64, b_max: f64) -> Result<()> {
    if !(v2 > 0.0 && v1 > v2) || !v1.is_finite() {
        return Err(Error::domain(format!(
            "need v1 > v2 > 0, got v1={v1}, v2={v2}"
        )));
    }
    if !(b_max > b_min) || !b_min.is_finite() || !b_max.is_finite() {
        return Err(Error::domain(format!(
            "need b_max > b_min, got [{b_min}, {b_max}]"
        )));
    }
    Ok(())
}

fn g(v1: f64, v2: f64, b_min: f64, b_max: f64, tau: f64) -> f64 {
    v1 / (2.0 * v2) * (((b_min - b_max) / tau).exp() + 1.0)
}

/// Closed-form temperature above which agent 2 cooperates.
pub fn cooperation_threshold(v1: f64, v2: f64, b_min: f64, b_max: f64) -> Result<Threshold> {
    check_instance(v1, v2, b_min, b_max)?;
    if v1 >= 2.0 * v2 {
        return Ok(Threshold::AlwaysCooperative);
    }
    Ok(Threshold::AtLeast(
        (b_min - b_max) / (2.0 * v2 / v1 - 1.0).ln(),
    ))
}

/// The reciprocal form `ln(2 v2 / v1 - 1) / (b_min - b_max)`, kept so that
/// the two expressions can be compared side by side. It does not satisfy
/// `g(tau) >= 1` in general.
pub fn printed_threshold(v1: f64, v2: f64, b_min: f64, b_max: f64) -> Result<Threshold> {
    check_instance(v1, v2, b_min, b_max)?;
    if v1 >= 2.0 * v2 {
        return Ok(Threshold::AlwaysCooperative);
    }
    Ok(Threshold::AtLeast(
        (2.0 * v2 / v1 - 1.0).ln() / (b_min - b_max),
    ))
}

/// Solves `g(tau) = 1` by bisection. `g` is increasing in `tau`.
pub fn threshold_by_bisection(
    v1: f64,
    v2: f64,
    b_min: f64,
    b_max: f64,
    tol: f64,
) -> Result<Threshold> {
    check_instance(v1, v2, b_min, b_max)?;
    if v1 >= 2.0 * v2 {
        return Ok(Threshold::AlwaysCooperative);
    }
    let mut lo = 1e-12;
    let mut hi = 1.0;
    while g(v1, v2, b_min, b_max, hi) < 1.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::domain("threshold bracket diverged"));
        }
    }
    while hi - lo > tol * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if g(v1, v2, b_min, b_max, mid) >= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Threshold::AtLeast(0.5 * (lo + hi)))
}

/// Brute-force maxima of agent 2's assigned reward over both regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionComparison {
    /// max over `b1 >= b2` of `alpha_2 * v1`
    pub l_max: f64,
    /// max over `b2 > b1` of `alpha_2 * v2`
    pub h_max: f64,
}

impl RegionComparison {
    pub fn evaluate(
        v1: f64,
        v2: f64,
        b_min: f64,
        b_max: f64,
        tau: f64,
        grid_points: usize,
    ) -> Self {
        assert!(grid_points >= 11, "grid_points must be at least 11");
        let step = (b_max - b_min) / (grid_points - 1) as f64;
        let grid: Vec<f64> = (0..grid_points).map(|k| b_min + step * k as f64).collect();
        let mut l_max = f64::NEG_INFINITY;
        let mut h_max = f64::NEG_INFINITY;
        for &b1 in &grid {
            for &b2 in &grid {
                let alpha2 = 1.0 / (1.0 + ((b1 - b2) / tau).exp());
                if b1 >= b2 {
                    l_max = l_max.max(alpha2 * v1);
                } else {
                    h_max = h_max.max(alpha2 * v2);
                }
            }
        }
        RegionComparison { l_max, h_max }
    }

    pub fn prefers_cooperation(&self) -> bool {
        self.l_max >= self.h_max
    }
}

/// True when the best point of region L is at least as good for agent 2 as
/// the best point of region H, on a `grid_points x grid_points` bid lattice.
pub fn verify_theorem(
    v1: f64,
    v2: f64,
    b_min: f64,
    b_max: f64,
    tau: f64,
    grid_points: usize,
) -> bool {
    RegionComparison::evaluate(v1, v2, b_min, b_max, tau, grid_points).prefers_cooperation()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tau_of(t: Threshold) -> f64 {
        match t {
            Threshold::AtLeast(x) => x,
            Threshold::AlwaysCooperative => panic!("expected a finite threshold"),
        }
    }

    #[test]
    fn large_value_gap_always_cooperates() {
        assert_eq!(
            cooperation_threshold(1.0, 0.4, 0.0, 5.0).unwrap(),
            Threshold::AlwaysCooperative
        );
        for tau in [0.5, 2.0, 10.0] {
            assert!(verify_theorem(1.0, 0.4, 0.0, 5.0, tau, 201));
        }
    }

    #[test]
    fn reference_instance() {
        let closed = tau_of(cooperation_threshold(1.0, 0.75, 0.0, 5.0).unwrap());
        let bisect = tau_of(threshold_by_bisection(1.0, 0.75, 0.0, 5.0, 1e-12).unwrap());
        // 5 / ln 2
        assert!((closed - 7.213_475_204_444_817).abs() < 1e-9);
        assert!((closed - bisect).abs() < 1e-8);
        assert!((g(1.0, 0.75, 0.0, 5.0, closed) - 1.0).abs() < 1e-12);

        assert!(verify_theorem(1.0, 0.75, 0.0, 5.0, 10.0, 201));
        assert!(!verify_theorem(1.0, 0.75, 0.0, 5.0, 2.0, 201));
    }

    #[test]
    fn printed_form_does_not_reach_the_boundary() {
        let printed = tau_of(printed_threshold(1.0, 0.75, 0.0, 5.0).unwrap());
        assert!((printed - 0.138_629_436_111_989).abs() < 1e-9);
        assert!(g(1.0, 0.75, 0.0, 5.0, printed) < 0.67);
        assert!(!verify_theorem(1.0, 0.75, 0.0, 5.0, printed, 201));
    }

    #[test]
    fn threshold_grows_as_values_converge() {
        let mut last = 0.0;
        for k in 1..40 {
            let v2 = 0.5 + 0.0125 * k as f64;
            let t = tau_of(cooperation_threshold(1.0, v2, 0.0, 5.0).unwrap());
            assert!(t > last, "v2={v2}: {t} <= {last}");
            last = t;
        }
        assert!(last > 100.0);
    }

    #[test]
    fn rejects_bad_instances() {
        assert!(cooperation_threshold(0.5, 0.75, 0.0, 5.0).is_err());
        assert!(cooperation_threshold(1.0, 0.0, 0.0, 5.0).is_err());
        assert!(cooperation_threshold(1.0, 0.75, 5.0, 5.0).is_err());
    }
}
