//! Closed-loop bandwidth allocation: split a fixed budget across services
//! so that the modeled distortion D_i = c_i / R_i is equalized wherever the
//! per-service [min, max] rate bounds allow (waterfilling).

use crate::real::Real;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("rate floors sum to {floors} bps, over the {budget} bps budget")]
    Infeasible { floors: f64, budget: f64 },
    #[error("complexity must be positive, got {0}")]
    NonpositiveComplexity(f64),
    #[error("invalid rate bounds [{min}, {max}]")]
    InvalidBounds { min: f64, max: f64 },
    #[error("complexity/min/max lengths differ: {0}/{1}/{2}")]
    LengthMismatch(usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult<F> {
    /// Allocated rate R_i in bits/second.
    pub rates: Vec<F>,
    /// Modeled distortion D_i = c_i / R_i.
    pub distortions: Vec<F>,
    /// Budget left for null stuffing: budget − ΣR_i ≥ 0.
    pub residual: F,
}

/// Allocates `budget` bits/second across services with complexities `c`
/// under per-service rate bounds.
///
/// Under the hyperbolic model D_i = c_i / R_i the unconstrained optimum is
/// the proportional split R_i = B·c_i/Σc, which equalizes distortion. With
/// bounds, services whose share would violate [min, max] are fixed at the
/// violated bound and the rest of the budget is redistributed
/// proportionally among the others, repeated to a fixed point — i.e. find
/// the water level λ with Σ clamp(c_i/λ, min_i, max_i) = B. The level is
/// solved exactly by walking the clip breakpoints, so every unclipped
/// service ends at the same distortion λ.
pub fn allocate_equal_distortion<F: Real>(
    c: &[F],
    budget: F,
    min: &[F],
    max: &[F],
) -> Result<AllocationResult<F>, AllocError> {
    if c.len() != min.len() || c.len() != max.len() {
        return Err(AllocError::LengthMismatch(c.len(), min.len(), max.len()));
    }
    let zero = F::zero();
    for (i, &ci) in c.iter().enumerate() {
        if ci <= zero || !ci.is_finite() {
            return Err(AllocError::NonpositiveComplexity(ci.as_f64()));
        }
        if min[i] < zero || min[i] > max[i] || !min[i].is_finite() {
            return Err(AllocError::InvalidBounds {
                min: min[i].as_f64(),
                max: max[i].as_f64(),
            });
        }
    }
    let sum_min = min.iter().fold(zero, |a, &b| a + b);
    if sum_min > budget {
        return Err(AllocError::Infeasible {
            floors: sum_min.as_f64(),
            budget: budget.as_f64(),
        });
    }
    if c.is_empty() {
        return Ok(AllocationResult {
            rates: vec![],
            distortions: vec![],
            residual: budget,
        });
    }

    let sum_max = max.iter().fold(zero, |a, &b| a + b);
    let rates = if sum_max <= budget {
        // every ceiling is affordable; distortions stay unequal
        max.to_vec()
    } else {
        let level = water_level(c, budget, min, max);
        let mut rates: Vec<F> = c
            .iter()
            .zip(min.iter().zip(max.iter()))
            .map(|(&ci, (&lo, &hi))| (ci / level).max(lo).min(hi))
            .collect();
        rescale_to_budget(&mut rates, budget, c, &level, min, max);
        rates
    };

    let distortions = c
        .iter()
        .zip(rates.iter())
        .map(|(&ci, &ri)| if ri > zero { ci / ri } else { F::infinity() })
        .collect();
    let spent = rates.iter().fold(zero, |a, &b| a + b);
    Ok(AllocationResult {
        rates,
        distortions,
        residual: (budget - spent).max(zero),
    })
}

/// Finds λ with T(λ) = Σ clamp(c_i/λ, min_i, max_i) = budget. T is
/// continuous and non-increasing, running from Σmax (λ→0) to Σmin (λ→∞),
/// and the caller has ensured Σmin ≤ budget < Σmax, so a solution exists.
fn water_level<F: Real>(c: &[F], budget: F, min: &[F], max: &[F]) -> F {
    // breakpoints where some service enters/leaves its clip region:
    // λ = c_i/max_i (ceiling) and λ = c_i/min_i (floor, if min > 0)
    let mut breaks: Vec<F> = Vec::with_capacity(2 * c.len());
    for i in 0..c.len() {
        if max[i].is_finite() && max[i] > F::zero() {
            breaks.push(c[i] / max[i]);
        }
        if min[i] > F::zero() {
            breaks.push(c[i] / min[i]);
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    breaks.dedup();

    let supply = |level: F| -> F {
        c.iter()
            .zip(min.iter().zip(max.iter()))
            .fold(F::zero(), |acc, (&ci, (&lo, &hi))| {
                acc + (ci / level).max(lo).min(hi)
            })
    };

    // bracket the solution between consecutive breakpoints
    let mut lo = F::zero(); // T(0+) = Σmax > budget
    let mut hi = None;
    for &b in &breaks {
        if supply(b) >= budget {
            lo = b;
        } else {
            hi = Some(b);
            break;
        }
    }

    // inside the bracket the clip sets are constant:
    // T(λ) = S_clipped + C_interior/λ  ⇒  λ = C_interior/(budget − S_clipped)
    let probe = match hi {
        Some(h) => (lo + h) / F::of(2.0),
        None => lo + F::one(), // above the last breakpoint
    };
    let mut clipped = F::zero();
    let mut interior_c = F::zero();
    for i in 0..c.len() {
        let unclipped = c[i] / probe;
        if unclipped >= max[i] {
            clipped = clipped + max[i];
        } else if unclipped <= min[i] {
            clipped = clipped + min[i];
        } else {
            interior_c = interior_c + c[i];
        }
    }
    if interior_c > F::zero() && budget > clipped {
        interior_c / (budget - clipped)
    } else {
        // all services clipped across the bracket; any level inside works
        probe
    }
}

/// Scales the unclipped rates so the spend hits the budget to the last ulp,
/// correcting accumulated rounding. A uniform scale on interior services
/// preserves their distortion equality.
fn rescale_to_budget<F: Real>(
    rates: &mut [F],
    budget: F,
    c: &[F],
    level: &F,
    min: &[F],
    max: &[F],
) {
    let zero = F::zero();
    let mut clipped = zero;
    let mut interior = zero;
    for i in 0..rates.len() {
        let raw = c[i] / *level;
        if raw >= max[i] || raw <= min[i] {
            clipped = clipped + rates[i];
        } else {
            interior = interior + rates[i];
        }
    }
    if interior <= zero || budget <= clipped {
        return;
    }
    let factor = (budget - clipped) / interior;
    for i in 0..rates.len() {
        let raw = c[i] / *level;
        if raw < max[i] && raw > min[i] {
            rates[i] = (rates[i] * factor).max(min[i]).min(max[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MBPS: f64 = 1e6;

    fn unbounded(n: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; n], vec![f64::INFINITY; n])
    }

    #[test]
    fn symmetric_split() {
        let (min, max) = unbounded(2);
        let a = allocate_equal_distortion(&[1.0, 1.0], 10.0 * MBPS, &min, &max).unwrap();
        assert_eq!(a.rates, vec![5.0 * MBPS, 5.0 * MBPS]);
        assert_eq!(a.residual, 0.0);
    }

    #[test]
    fn proportional_split() {
        let (min, max) = unbounded(2);
        let a = allocate_equal_distortion(&[3.0, 1.0], 8.0 * MBPS, &min, &max).unwrap();
        assert!((a.rates[0] - 6.0 * MBPS).abs() < 1e-3);
        assert!((a.rates[1] - 2.0 * MBPS).abs() < 1e-3);
        assert!((a.distortions[0] - a.distortions[1]).abs() / a.distortions[0] < 1e-12);
    }

    #[test]
    fn ceiling_clip_redistributes() {
        let a = allocate_equal_distortion(
            &[4.0, 1.0],
            10.0 * MBPS,
            &[0.0, 0.0],
            &[5.0 * MBPS, f64::INFINITY],
        )
        .unwrap();
        assert!((a.rates[0] - 5.0 * MBPS).abs() < 1e-3);
        assert!((a.rates[1] - 5.0 * MBPS).abs() < 1e-3);
    }

    #[test]
    fn floor_fix_can_flip_a_ceiling_violation() {
        // proportional shares violate both bounds at once; fixing the floor
        // first leaves the other service legal: R = (4, 4)
        let a =
            allocate_equal_distortion::<f64>(&[10.0, 1.0], 8.0, &[0.1, 4.0], &[5.0, 100.0]).unwrap();
        assert!((a.rates[0] - 4.0).abs() < 1e-9, "rates {:?}", a.rates);
        assert!((a.rates[1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn budget_freed_by_a_ceiling_returns_to_floored_services() {
        // the capped service frees budget that the floored one must absorb
        let a =
            allocate_equal_distortion::<f64>(&[10.0, 1.0], 4.0, &[0.1, 0.5], &[2.0, 100.0]).unwrap();
        assert!((a.rates[0] - 2.0).abs() < 1e-9, "rates {:?}", a.rates);
        assert!((a.rates[1] - 2.0).abs() < 1e-9);
        assert!(a.residual < 1e-9);
    }

    #[test]
    fn all_ceilings_affordable_leaves_residual() {
        let a = allocate_equal_distortion(&[1.0, 2.0], 10.0, &[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(a.rates, vec![3.0, 4.0]);
        assert_eq!(a.residual, 3.0);
    }

    #[test]
    fn floors_over_budget_is_infeasible() {
        let err = allocate_equal_distortion(&[1.0, 1.0], 5.0, &[3.0, 3.0], &[9.0, 9.0]);
        assert!(matches!(err, Err(AllocError::Infeasible { .. })));
    }

    #[test]
    fn rejects_nonpositive_complexity() {
        let (min, max) = unbounded(1);
        assert!(matches!(
            allocate_equal_distortion(&[0.0], 1.0, &min, &max),
            Err(AllocError::NonpositiveComplexity(_))
        ));
    }

    #[test]
    fn empty_service_list() {
        let a = allocate_equal_distortion::<f64>(&[], 7.0, &[], &[]).unwrap();
        assert!(a.rates.is_empty());
        assert_eq!(a.residual, 7.0);
    }

    #[test]
    fn unclipped_distortions_equal_with_mixed_clipping() {
        let c = [5.0, 3.0, 2.0, 0.4, 1.0];
        let min = [0.5, 0.5, 0.5, 3.0, 0.5];
        let max = [4.0, f64::INFINITY, f64::INFINITY, 10.0, f64::INFINITY];
        let a = allocate_equal_distortion(&c, 20.0, &min, &max).unwrap();
        let spent: f64 = a.rates.iter().sum();
        assert!(spent <= 20.0 + 1e-9);
        for i in 0..c.len() {
            assert!(a.rates[i] >= min[i] - 1e-12 && a.rates[i] <= max[i] + 1e-12);
        }
        // services not pinned to a bound share one distortion
        let interior: Vec<f64> = (0..c.len())
            .filter(|&i| a.rates[i] > min[i] + 1e-9 && a.rates[i] < max[i] - 1e-9)
            .map(|i| a.distortions[i])
            .collect();
        assert!(interior.len() >= 2);
        for w in interior.windows(2) {
            assert!((w[0] - w[1]).abs() / w[0] < 1e-6, "{interior:?}");
        }
    }

    #[test]
    fn more_complexity_never_means_less_rate() {
        let (min, max) = unbounded(3);
        let base = allocate_equal_distortion(&[2.0, 3.0, 4.0], 12.0, &min, &max).unwrap();
        let bumped = allocate_equal_distortion(&[2.0, 3.5, 4.0], 12.0, &min, &max).unwrap();
        assert!(bumped.rates[1] >= base.rates[1]);
    }

    #[test]
    fn works_in_single_precision() {
        let a = allocate_equal_distortion::<f32>(&[3.0, 1.0], 8.0, &[0.0, 0.0], &[10.0, 10.0])
            .unwrap();
        assert!((a.rates[0] - 6.0).abs() < 1e-3);
        assert!((a.rates[1] - 2.0).abs() < 1e-3);
    }
}
