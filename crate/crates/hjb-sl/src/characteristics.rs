//! Truncated characteristic feet and their consistency-preserving weights.
//!
//! From an interior node x the scheme follows, per Brownian column l, the
//! two branches x + s^2 dt b +- s sqrt(p dt) sigma_l for s in [0,1]. A
//! branch leaving the domain is stopped at the boundary; the squared stop
//! parameter is the exit fraction lambda. The weights below are the unique
//! choice that keeps the pair of branches first-order consistent with the
//! generator even when one side is truncated: gamma+- rebalance the two
//! branches, tau_l is the effective time carried by the column, and the
//! pi_l redistribute columns so that pi_l tau_l is the same for every l.

use crate::geometry::{first_exit, Domain};
use crate::{Error, Result};

/// Exit fractions below this are clamped before taking square roots. An
/// interior node always has lambda > 0, but a root found within the exit
/// tolerance of the node itself could round to 0 and blow up the weights.
const LAMBDA_MIN: f64 = 1e-14;

/// Both branches of one Brownian column, stopped at the boundary.
#[derive(Clone, Copy, Debug)]
pub struct ColumnFoot {
    /// Fraction of the step survived by each branch, in (0,1].
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// Branch endpoints: boundary points when truncated, full feet otherwise.
    pub y_plus: [f64; 2],
    pub y_minus: [f64; 2],
    /// Times the branches arrive at: t_k + lambda dt.
    pub t_plus: f64,
    pub t_minus: f64,
    /// Branch weights, gamma+- = sqrt(lambda-+) / (sqrt(lambda+) + sqrt(lambda-)).
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    /// Effective column time dt sqrt(lambda+ lambda-), in (0, dt].
    pub tau_l: f64,
}

/// Weights for one column from its exit fractions. The cross-over in gamma
/// (each branch weighted by the other side's sqrt(lambda)) is what cancels
/// the first-order term of a truncated pair: gamma+ sqrt(l+) = gamma- sqrt(l-).
pub fn weights_from_lambdas(lambda_plus: f64, lambda_minus: f64, dt: f64) -> (f64, f64, f64) {
    let lp = lambda_plus.clamp(LAMBDA_MIN, 1.0);
    let lm = lambda_minus.clamp(LAMBDA_MIN, 1.0);
    let (sp, sm) = (lp.sqrt(), lm.sqrt());
    let gamma_plus = sm / (sp + sm);
    let gamma_minus = sp / (sp + sm);
    let tau_l = dt * (lp * lm).sqrt();
    (gamma_plus, gamma_minus, tau_l)
}

/// Follows both branches of column `sigma_l` from `x` over one step. `b` and
/// `sigma_l` are the coefficient values already evaluated at (t_k, x, a);
/// `p` is the total Brownian dimension (it scales the diffusion branch).
pub fn column_foot(
    domain: &Domain,
    x: &[f64],
    t_k: f64,
    dt: f64,
    b: &[f64],
    sigma_l: &[f64],
    p: usize,
) -> ColumnFoot {
    debug_assert!(dt > 0.0);
    let dim = domain.dim();
    let scale = (p as f64 * dt).sqrt();
    let mut u = [0.0f64; 2];
    let mut v = [0.0f64; 2];
    for c in 0..dim {
        u[c] = dt * b[c];
        v[c] = scale * sigma_l[c];
    }

    let branch = |sign: f64| -> (f64, [f64; 2], f64) {
        let vs = [sign * v[0], sign * v[1]];
        match first_exit(domain, x, &u[..dim], &vs[..dim]) {
            Some((s, point)) => {
                let lambda = (s * s).clamp(LAMBDA_MIN, 1.0);
                (lambda, point, t_k + lambda * dt)
            }
            None => {
                let mut y = [0.0f64; 2];
                for c in 0..dim {
                    y[c] = x[c] + u[c] + vs[c];
                }
                (1.0, y, t_k + dt)
            }
        }
    };
    let (lambda_plus, y_plus, t_plus) = branch(1.0);
    let (lambda_minus, y_minus, t_minus) = branch(-1.0);
    let (gamma_plus, gamma_minus, tau_l) = weights_from_lambdas(lambda_plus, lambda_minus, dt);
    ColumnFoot {
        lambda_plus,
        lambda_minus,
        y_plus,
        y_minus,
        t_plus,
        t_minus,
        gamma_plus,
        gamma_minus,
        tau_l,
    }
}

/// Column weights pi and the rescaled step tau from the per-column times.
/// Computed through reciprocals: w_l = 1/tau_l, pi_l = w_l / sum(w),
/// tau = p / sum(w). This equals the product form
/// pi_l = prod_{j != l} tau_j / sum_i prod_{j != i} tau_j exactly (divide
/// through by prod tau_j) without underflow or O(p^2) work, and it makes
/// the identity pi_l tau_l = tau / p explicit.
pub fn combine_columns(taus: &[f64], dt: f64) -> Result<(Vec<f64>, f64)> {
    let mut pis = vec![0.0; taus.len()];
    let tau = combine_into(taus, dt, &mut pis)?;
    Ok((pis, tau))
}

/// Allocation-free form of `combine_columns` for the solver's hot loop.
pub fn combine_into(taus: &[f64], dt: f64, pis: &mut [f64]) -> Result<f64> {
    debug_assert_eq!(taus.len(), pis.len());
    let p = taus.len();
    if p == 0 {
        return Err(Error::Config("no Brownian columns".into()));
    }
    for &t in taus {
        if !(t > 0.0 && t <= dt * (1.0 + 1e-12)) {
            return Err(Error::Config(format!("column time {t} outside (0, {dt}]")));
        }
    }
    if p == 1 {
        pis[0] = 1.0;
        return Ok(taus[0]);
    }
    let mut wsum = 0.0;
    for (pi, &t) in pis.iter_mut().zip(taus) {
        *pi = 1.0 / t;
        wsum += *pi;
    }
    for pi in pis.iter_mut() {
        *pi /= wsum;
    }
    Ok(p as f64 / wsum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_core::{RngCore, SeedableRng};

    fn unit(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Product form of combine, the textbook definition; used as oracle.
    fn combine_product_form(taus: &[f64]) -> (Vec<f64>, f64) {
        let p = taus.len();
        let prod_except =
            |l: usize| -> f64 { (0..p).filter(|&j| j != l).map(|j| taus[j]).product() };
        let denom: f64 = (0..p).map(prod_except).sum();
        let pis: Vec<f64> = (0..p).map(|l| prod_except(l) / denom).collect();
        let tau = p as f64 * taus.iter().product::<f64>() / denom;
        (pis, tau)
    }

    #[test]
    fn unconstrained_column_is_symmetric() {
        let domain = Domain::Interval { lo: -1.0, hi: 1.0 };
        let cf = column_foot(&domain, &[0.1], 0.0, 0.04, &[0.0], &[1.0], 1);
        assert_eq!(cf.lambda_plus, 1.0);
        assert_eq!(cf.lambda_minus, 1.0);
        assert_eq!(cf.gamma_plus, 0.5);
        assert_eq!(cf.gamma_minus, 0.5);
        assert_eq!(cf.tau_l, 0.04);
        // feet at x +- sqrt(dt): 0.1 +- 0.2
        assert!((cf.y_plus[0] - 0.3).abs() < 1e-15);
        assert!((cf.y_minus[0] - (-0.1)).abs() < 1e-15);
    }

    #[test]
    fn truncated_quarter_gives_one_third_two_thirds() {
        // lambda+ = 1, lambda- = 0.25: gamma+ = sqrt(.25)/(1+.5) = 1/3.
        let (gp, gm, tau) = weights_from_lambdas(1.0, 0.25, 0.04);
        assert!((gp - 1.0 / 3.0).abs() < 1e-14);
        assert!((gm - 2.0 / 3.0).abs() < 1e-14);
        assert!((tau - 0.02).abs() < 1e-15);
    }

    #[test]
    fn truncated_branch_lands_on_boundary() {
        let domain = Domain::Interval { lo: -1.0, hi: 1.0 };
        // From 0.9 with sqrt(dt) = 0.2 the plus branch exits at 1.
        let cf = column_foot(&domain, &[0.9], 0.0, 0.04, &[0.0], &[1.0], 1);
        assert!(cf.lambda_plus < 1.0);
        assert_eq!(cf.y_plus[0], 1.0);
        assert_eq!(cf.lambda_minus, 1.0);
        assert!((cf.y_minus[0] - 0.7).abs() < 1e-15);
        // (s^2 * 0 + s * 0.2 = 0.1) => s = 0.5, lambda = 0.25.
        assert!((cf.lambda_plus - 0.25).abs() < 1e-12);
        assert!((cf.t_plus - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_column_is_degenerate_symmetric() {
        let domain = Domain::Rectangle {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        };
        let cf = column_foot(
            &domain,
            &[0.3, 0.4],
            0.0,
            0.01,
            &[0.5, -0.25],
            &[0.0, 0.0],
            2,
        );
        assert_eq!(cf.lambda_plus, cf.lambda_minus);
        assert_eq!(cf.y_plus, cf.y_minus);
        assert_eq!(cf.gamma_plus, 0.5);
        // Drift-only foot.
        assert!((cf.y_plus[0] - 0.305).abs() < 1e-15);
        assert!((cf.y_plus[1] - 0.3975).abs() < 1e-15);
    }

    #[test]
    fn column_invariants_hold_for_random_lambdas() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let lp = unit(&mut rng).max(1e-6);
            let lm = unit(&mut rng).max(1e-6);
            let dt = 0.1 * unit(&mut rng).max(1e-3);
            let (gp, gm, tau) = weights_from_lambdas(lp, lm, dt);
            assert!((gp + gm - 1.0).abs() <= 1e-14);
            assert!((gp - lm.sqrt() / (lp.sqrt() + lm.sqrt())).abs() <= 1e-14);
            assert!((tau - dt * (lp * lm).sqrt()).abs() <= 1e-14 * dt);
            assert!(tau > 0.0 && tau <= dt * (1.0 + 1e-15));
            // The first-order cancellation the cross-over buys.
            assert!((gp * lp.sqrt() - gm * lm.sqrt()).abs() <= 1e-14);
        }
    }

    #[test]
    fn combine_matches_spec_examples() {
        let dt = 0.04;
        let (pi, tau) = combine_columns(&[dt], dt).unwrap();
        assert_eq!(pi, vec![1.0]);
        assert_eq!(tau, dt);

        let (pi, tau) = combine_columns(&[dt, dt], dt).unwrap();
        assert_eq!(pi, vec![0.5, 0.5]);
        assert!((tau - dt).abs() < 1e-16);

        let (pi, tau) = combine_columns(&[dt, dt / 2.0], dt).unwrap();
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((pi[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((tau - 2.0 * dt / 3.0).abs() < 1e-15);
        assert!((pi[0] * dt - tau / 2.0).abs() < 1e-15);
        assert!((pi[1] * dt / 2.0 - tau / 2.0).abs() < 1e-15);
    }

    #[test]
    fn combine_agrees_with_product_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..2000 {
            let p = 1 + (rng.next_u64() % 6) as usize;
            let dt = 1.0;
            // Spread over 6 orders of magnitude.
            let taus: Vec<f64> = (0..p).map(|_| 10f64.powf(-6.0 * unit(&mut rng))).collect();
            let (pi, tau) = combine_columns(&taus, dt).unwrap();
            let (pi_ref, tau_ref) = combine_product_form(&taus);
            assert!((tau - tau_ref).abs() <= 1e-12 * tau_ref);
            let mut sum = 0.0;
            for l in 0..p {
                assert!((pi[l] - pi_ref[l]).abs() <= 1e-12 * pi_ref[l].max(1e-30));
                assert!(pi[l] >= 0.0);
                sum += pi[l];
                // The load-balancing identity.
                assert!((pi[l] * taus[l] - tau / p as f64).abs() <= 1e-13 * tau);
            }
            assert!((sum - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn unconstrained_combine_reduces_to_uniform() {
        for p in 1..=5 {
            let dt = 0.01;
            let taus = vec![dt; p];
            let (pi, tau) = combine_columns(&taus, dt).unwrap();
            for &w in &pi {
                assert!((w - 1.0 / p as f64).abs() < 1e-15);
            }
            assert!((tau - dt).abs() < 1e-17);
        }
    }

    #[test]
    fn invalid_tau_rejected() {
        assert!(combine_columns(&[0.0], 0.1).is_err());
        assert!(combine_columns(&[-0.1, 0.05], 0.1).is_err());
        assert!(combine_columns(&[0.2], 0.1).is_err());
        assert!(combine_columns(&[], 0.1).is_err());
    }
}
