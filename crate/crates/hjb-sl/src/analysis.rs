//! Error metrics, refinement studies, and a numerical check of the
//! operator's consistency with the generator it discretizes.

use crate::geometry::Mesh;
use crate::interpolation::ValueField;
use crate::operator::{
    compute_entries, eval_entries, ControlDescriptor, Fault, OpScratch, Problem,
};
use crate::problems::{ProblemSpec, SmoothField};
use crate::solver::{solve, Retention, Solution, SolveOptions};
use crate::{fmt_f64, Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize)]
pub struct StudyRow {
    /// Requested resolution; for unstructured meshes the realized diameter
    /// is bounded by it and `nodes` records the actual size.
    pub dx: f64,
    pub dt: f64,
    pub nodes: usize,
    pub err_linf: f64,
    /// log2 ratio against the previous row; absent on the coarsest level.
    pub order: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub problem: String,
    pub params: BTreeMap<String, f64>,
    /// dt = cfl * dx on every level.
    pub cfl: f64,
    pub controls: ControlDescriptor,
    pub theory_covered: bool,
    pub rows: Vec<StudyRow>,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dx,dt,nodes,err_linf,order,seconds\n");
        for r in &self.rows {
            let ord = r.order.map(fmt_f64).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f64(r.dx),
                fmt_f64(r.dt),
                r.nodes,
                fmt_f64(r.err_linf),
                ord,
                fmt_f64(r.seconds)
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Max nodal error at t = 0 against a reference, boundary nodes included.
pub fn linf_error_t0<F: Fn(&[f64]) -> f64>(sol: &Solution, exact: F) -> Result<f64> {
    let vals = sol.level(0)?;
    let mesh = sol.mesh();
    let mut worst = 0.0f64;
    for i in 0..mesh.n_vertices() {
        let e = (vals[i] - exact(mesh.vertex(i))).abs();
        if e > worst {
            worst = e;
        }
    }
    Ok(worst)
}

/// Observed order between two refinement levels differing by a factor 2.
pub fn order(e_coarse: f64, e_fine: f64) -> Result<f64> {
    if !(e_coarse > 0.0) || !(e_fine > 0.0) {
        return Err(Error::Config(format!(
            "order requires positive errors, got ({e_coarse}, {e_fine})"
        )));
    }
    Ok((e_coarse / e_fine).log2())
}

/// Solve a problem on a sequence of meshes with dx halved per level and
/// dt = cfl * dx, measuring the t=0 error against the problem's reference
/// solution.
pub fn refine_study(
    spec: &ProblemSpec,
    dx0: f64,
    levels: usize,
    cfl: f64,
    opts: &SolveOptions,
) -> Result<ConvergenceReport> {
    if levels == 0 {
        return Err(Error::Config(
            "refinement study needs at least one level".into(),
        ));
    }
    if !(cfl > 0.0 && cfl.is_finite()) {
        return Err(Error::Config(format!("cfl factor {cfl} must be positive")));
    }
    let exact = spec
        .exact_t0
        .as_ref()
        .ok_or_else(|| {
            Error::Config(format!(
                "problem {:?} has no t=0 reference solution",
                spec.name
            ))
        })?
        .clone();
    let mut rows = Vec::with_capacity(levels);
    for level in 0..levels {
        let dx = dx0 / (1u64 << level) as f64;
        let mesh = std::sync::Arc::new(spec.build_mesh(dx)?);
        let nodes = mesh.n_vertices();
        let level_opts = SolveOptions {
            retention: Retention::Levels(vec![0]),
            store_controls: false,
            ..opts.clone()
        };
        let sol = solve(&spec.problem, mesh, cfl * dx, &level_opts)?;
        let err_linf = linf_error_t0(&sol, |x| exact(x))?;
        let ord = match rows.last() {
            Some(prev @ StudyRow { err_linf: e, .. }) if *e > 0.0 && err_linf > 0.0 => {
                Some(order(prev.err_linf, err_linf)?)
            }
            _ => None,
        };
        rows.push(StudyRow {
            dx,
            dt: sol.dt(),
            nodes,
            err_linf,
            order: ord,
            seconds: sol.wall_seconds,
        });
    }
    Ok(ConvergenceReport {
        problem: spec.name.clone(),
        params: spec.params.clone(),
        cfl,
        controls: spec.problem.controls.descriptor().clone(),
        theory_covered: spec.theory_covered,
        rows,
    })
}

/// Worst-case defect of the one-step operator against the generator, for a
/// smooth test function phi supplying its own derivatives.
///
/// The boundary data is replaced by phi itself so that truncated branches
/// read exact values, then for every time level, interior node, and control
/// the scaled difference [phi(t_k,x_i) - S(phi_{k+1},a)] / tau is compared
/// with -dphi/dt - b.Dphi - 1/2 tr(sigma sigma^T D^2 phi) - f. The sup
/// should shrink as dt -> 0 with dx^2/dt -> 0, and is expected to stall or
/// grow when dx is held fixed while dt alone shrinks.
pub fn consistency_residual(
    problem: &Problem,
    phi: &SmoothField,
    mesh: &Mesh,
    dt: f64,
) -> Result<f64> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("dt = {dt} must be positive")));
    }
    let dim = problem.domain.dim();
    if mesh.dim() != dim {
        return Err(Error::Config(format!(
            "mesh dimension {} does not match domain dimension {dim}",
            mesh.dim()
        )));
    }
    let mut prob = problem.clone();
    prob.boundary = phi.value.clone();
    let prob = &prob;
    let n_steps = ((prob.horizon / dt).round() as usize).max(1);
    let dt = prob.horizon / n_steps as f64;
    let p = prob.p;
    let n_controls = prob.controls.len();

    let mut worst = 0.0f64;
    let mut next_vals = vec![0.0; mesh.n_vertices()];
    for k in 0..n_steps {
        let t_k = k as f64 * dt;
        let t_next = (k + 1) as f64 * dt;
        for (i, v) in next_vals.iter_mut().enumerate() {
            *v = (phi.value)(t_next, mesh.vertex(i));
        }
        let next = &next_vals[..];
        let level_worst = mesh
            .interior_vertices()
            .par_iter()
            .map_init(
                || OpScratch::new(p),
                |scratch, &iu| -> Result<f64> {
                    let x = mesh.vertex(iu as usize);
                    let phi_here = (phi.value)(t_k, x);
                    let dphi_dt = (phi.time_deriv)(t_k, x);
                    let mut g = [0.0; 2];
                    (phi.grad)(t_k, x, &mut g[..dim]);
                    let mut h = [0.0; 4];
                    (phi.hess)(t_k, x, &mut h);
                    let mut b = [0.0; 2];
                    let mut sig = [0.0; 2];
                    let mut node_worst = 0.0f64;
                    for j in 0..n_controls {
                        let a = prob.controls.point(j);
                        let tau = compute_entries(prob, mesh, x, t_k, dt, a, Fault::None, scratch)?;
                        let body = eval_entries(&scratch.entries, prob, dim, t_k, dt, next);
                        let f = prob.eval_cost(t_k, x, a);
                        let s_val = body + tau * f;

                        prob.eval_drift(t_k, x, a, &mut b[..dim]);
                        let mut trace = 0.0;
                        for l in 0..p {
                            prob.eval_diffusion(t_k, x, a, l, &mut sig[..dim]);
                            trace += if dim == 1 {
                                sig[0] * sig[0] * h[0]
                            } else {
                                sig[0] * sig[0] * h[0]
                                    + 2.0 * sig[0] * sig[1] * h[1]
                                    + sig[1] * sig[1] * h[3]
                            };
                        }
                        let advect: f64 = (0..dim).map(|c| b[c] * g[c]).sum();
                        let generator = -dphi_dt - 0.5 * trace - advect - f;
                        let defect = ((phi_here - s_val) / tau - generator).abs();
                        if defect > node_worst {
                            node_worst = defect;
                        }
                    }
                    Ok(node_worst)
                },
            )
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
        if level_worst > worst {
            worst = level_worst;
        }
    }
    Ok(worst)
}

/// Outcome of one structural property check, printable as a pass/fail line.
#[derive(Clone, Debug)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for PropertyOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

fn unit(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand_core::RngCore;
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Algebraic identities of the branch weights over random exit fractions:
/// gamma+ + gamma- = 1, sum pi = 1, pi_l tau_l = tau / p, and the ranges
/// 0 < lambda <= 1, 0 < tau <= dt.
pub fn property_weight_identities(samples: usize, seed: u64) -> PropertyOutcome {
    use rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let p = 1 + (unit(&mut rng) * 3.0) as usize;
        let dt = 10f64.powf(-4.0 * unit(&mut rng));
        let mut taus = Vec::with_capacity(p);
        let mut ok = true;
        for _ in 0..p {
            let lp = 10f64.powf(-10.0 * unit(&mut rng));
            let lm = 10f64.powf(-10.0 * unit(&mut rng));
            let (gp, gm, tau_l) = crate::characteristics::weights_from_lambdas(lp, lm, dt);
            let dev = (gp + gm - 1.0).abs();
            worst = worst.max(dev);
            ok &= dev <= 1e-12;
            ok &= tau_l > 0.0 && tau_l <= dt * (1.0 + 1e-12);
            taus.push(tau_l);
        }
        let (pis, tau) = match crate::characteristics::combine_columns(&taus, dt) {
            Ok(v) => v,
            Err(_) => {
                violations += 1;
                continue;
            }
        };
        let sum_pi: f64 = pis.iter().sum();
        let dev = (sum_pi - 1.0).abs();
        worst = worst.max(dev);
        ok &= dev <= 1e-12;
        ok &= tau > 0.0 && tau <= dt * (1.0 + 1e-12);
        let target = tau / p as f64;
        for (pi, tau_l) in pis.iter().zip(&taus) {
            let dev = (pi * tau_l - target).abs() / target.max(1e-300);
            worst = worst.max(dev);
            ok &= dev <= 1e-12;
        }
        if !ok {
            violations += 1;
        }
    }
    PropertyOutcome {
        name: "weight-identities",
        passed: violations == 0,
        detail: format!("{samples} samples, {violations} violations, worst deviation {worst:.2e}"),
    }
}

fn random_levels(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for _ in 0..n {
        let base = 2.0 * unit(rng) - 1.0;
        lo.push(base);
        hi.push(base + unit(rng));
    }
    (lo, hi)
}

pub(crate) fn property_monotonicity_with(
    spec: &ProblemSpec,
    dx: f64,
    dt: f64,
    pairs: usize,
    seed: u64,
    fault: Fault,
) -> Result<PropertyOutcome> {
    use rand_core::SeedableRng;
    let mesh = spec.build_mesh(dx)?;
    let interior = mesh.interior_vertices();
    let n_controls = spec.problem.controls.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let (lo_vals, hi_vals) = random_levels(&mut rng, mesh.n_vertices());
        let t_k = unit(&mut rng) * (spec.problem.horizon - dt).max(0.0);
        let node = interior[(unit(&mut rng) * interior.len() as f64) as usize % interior.len()];
        let j = (unit(&mut rng) * n_controls as f64) as usize % n_controls;
        let a = spec.problem.controls.point(j);
        let lo_field = ValueField::new(&mesh, &lo_vals, t_k + dt)?;
        let hi_field = ValueField::new(&mesh, &hi_vals, t_k + dt)?;
        let s_lo = crate::operator::apply_S_fd_with(
            &spec.problem,
            &lo_field,
            t_k,
            dt,
            node as usize,
            a,
            fault,
        )?;
        let s_hi = crate::operator::apply_S_fd_with(
            &spec.problem,
            &hi_field,
            t_k,
            dt,
            node as usize,
            a,
            fault,
        )?;
        let gap = s_lo - s_hi;
        if gap > 1e-12 * s_lo.abs().max(s_hi.abs()).max(1.0) {
            violations += 1;
            worst = worst.max(gap);
        }
    }
    Ok(PropertyOutcome {
        name: "monotonicity",
        passed: violations == 0,
        detail: if violations == 0 {
            format!(
                "{pairs} ordered field pairs on {}, no violations",
                spec.name
            )
        } else {
            format!(
                "{violations}/{pairs} violations on {}, worst gap {worst:.3e}",
                spec.name
            )
        },
    })
}

/// S applied to pointwise-ordered fields stays ordered.
pub fn property_monotonicity(
    spec: &ProblemSpec,
    dx: f64,
    dt: f64,
    pairs: usize,
    seed: u64,
) -> Result<PropertyOutcome> {
    property_monotonicity_with(spec, dx, dt, pairs, seed, Fault::None)
}

pub(crate) fn property_constant_addition_with(
    spec: &ProblemSpec,
    dx: f64,
    dt: f64,
    trials: usize,
    seed: u64,
    fault: Fault,
) -> Result<PropertyOutcome> {
    use rand_core::SeedableRng;
    let mesh = spec.build_mesh(dx)?;
    let interior = mesh.interior_vertices();
    let n_controls = spec.problem.controls.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut scratch = OpScratch::new(spec.problem.p);
    let mut violations = 0usize;
    let (mut n_exact, mut n_truncated) = (0usize, 0usize);
    let mut shifted = vec![0.0; mesh.n_vertices()];
    for _ in 0..trials {
        let (vals, _) = random_levels(&mut rng, mesh.n_vertices());
        let c = 4.0 * unit(&mut rng) - 2.0;
        let t_k = unit(&mut rng) * (spec.problem.horizon - dt).max(0.0);
        let node =
            interior[(unit(&mut rng) * interior.len() as f64) as usize % interior.len()] as usize;
        let j = (unit(&mut rng) * n_controls as f64) as usize % n_controls;
        let a = spec.problem.controls.point(j);
        let x = mesh.vertex(node);
        let tau = compute_entries(&spec.problem, &mesh, x, t_k, dt, a, fault, &mut scratch)?;
        let truncated = scratch
            .entries
            .iter()
            .any(|e| e.kind == crate::operator::KIND_BOUNDARY);
        let f = spec.problem.eval_cost(t_k, x, a);
        let base =
            eval_entries(&scratch.entries, &spec.problem, mesh.dim(), t_k, dt, &vals) + tau * f;
        for (dst, src) in shifted.iter_mut().zip(&vals) {
            *dst = src + c;
        }
        let moved = eval_entries(
            &scratch.entries,
            &spec.problem,
            mesh.dim(),
            t_k,
            dt,
            &shifted,
        ) + tau * f;
        let eps = 1e-12 * base.abs().max(c.abs()).max(1.0);
        let ok = if !truncated {
            n_exact += 1;
            (moved - (base + c)).abs() <= eps
        } else {
            n_truncated += 1;
            if c >= 0.0 {
                moved <= base + c + eps
            } else {
                moved >= base + c - eps
            }
        };
        if !ok {
            violations += 1;
        }
    }
    let both_seen = n_exact > 0 && n_truncated > 0;
    Ok(PropertyOutcome {
        name: "constant-addition",
        passed: violations == 0 && both_seen,
        detail: format!(
            "{} on {}: {n_exact} full-step trials (equality), {n_truncated} truncated trials (inequality), {violations} violations",
            if both_seen { "both regimes hit" } else { "one regime never sampled" },
            spec.name
        ),
    })
}

/// Adding a constant to the field shifts S by exactly that constant when no
/// branch is truncated, and by at most (at least) the constant when one is.
pub fn property_constant_addition(
    spec: &ProblemSpec,
    dx: f64,
    dt: f64,
    trials: usize,
    seed: u64,
) -> Result<PropertyOutcome> {
    property_constant_addition_with(spec, dx, dt, trials, seed, Fault::None)
}

/// Solved values never exceed the data: sup_k |V_k| <= sup|Psi| + T sup|f|.
pub fn property_stability(
    spec: &ProblemSpec,
    dx_levels: &[f64],
    cfl: f64,
    opts: &SolveOptions,
) -> Result<PropertyOutcome> {
    let bound = spec.psi_sup + spec.problem.horizon * spec.f_sup;
    let mut detail = format!("bound {:.4} on {}:", bound, spec.name);
    let mut passed = true;
    for &dx in dx_levels {
        let mesh = std::sync::Arc::new(spec.build_mesh(dx)?);
        let level_opts = SolveOptions {
            retention: Retention::All,
            store_controls: false,
            ..opts.clone()
        };
        let sol = solve(&spec.problem, mesh, cfl * dx, &level_opts)?;
        let sup = sol.sup_norm();
        passed &= sup <= bound + 1e-9 * bound.max(1.0);
        detail.push_str(&format!(" dx={dx} sup={sup:.4};"));
    }
    Ok(PropertyOutcome {
        name: "stability",
        passed,
        detail,
    })
}

/// Far from the boundary the operator must reduce to the plain
/// unconstrained semi-Lagrangian average: lambda = 1, gamma = 1/2, tau = dt.
pub fn property_unconstrained_reduction(trials: usize, seed: u64) -> Result<PropertyOutcome> {
    use rand_core::SeedableRng;
    use std::sync::Arc;
    let b = [0.3, -0.2];
    let sig: [[f64; 2]; 2] = [[0.7, 0.1], [0.05, 0.4]];
    let problem = Problem {
        domain: crate::geometry::Domain::Rectangle {
            lo: [-8.0, -8.0],
            hi: [8.0, 8.0],
        },
        horizon: 1.0,
        p: 2,
        drift: Arc::new(move |_, _, _, out: &mut [f64]| out.copy_from_slice(&b)),
        diffusion: Arc::new(move |_, _, _, l, out: &mut [f64]| out.copy_from_slice(&sig[l])),
        cost: Arc::new(|_, _, _| 0.37),
        boundary: Arc::new(|_, _| 0.0),
        controls: crate::operator::ControlSet::explicit(vec![0.0, 0.0], 2).unwrap(),
        autonomous: true,
        autonomous_cost: true,
    };
    let mesh = Mesh::build_rect_grid([-8.0, -8.0], [8.0, 8.0], 32, 32)?;
    let dt = 0.05;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (vals, _) = random_levels(&mut rng, mesh.n_vertices());
        let field = ValueField::new(&mesh, &vals, dt)?;
        // Central nodes only: every foot must stay inside.
        let node = loop {
            let i = (unit(&mut rng) * mesh.n_vertices() as f64) as usize % mesh.n_vertices();
            let x = mesh.vertex(i);
            if !mesh.is_boundary(i) && x[0].abs() < 4.0 && x[1].abs() < 4.0 {
                break i;
            }
        };
        let x = mesh.vertex(node);
        let s_fd = crate::operator::apply_S_fd(&problem, &field, 0.0, dt, node, &[0.0, 0.0])?;
        let mut classical = dt * 0.37;
        for l in 0..2 {
            let spread = (2.0 * dt).sqrt();
            for sign in [1.0, -1.0] {
                let y = [
                    x[0] + dt * b[0] + sign * spread * sig[l][0],
                    x[1] + dt * b[1] + sign * spread * sig[l][1],
                ];
                classical += 0.25 * crate::interpolation::interpolate(&field, &y)?;
            }
        }
        let dev = (s_fd - classical).abs() / classical.abs().max(1.0);
        worst = worst.max(dev);
    }
    Ok(PropertyOutcome {
        name: "unconstrained-reduction",
        passed: worst <= 1e-13,
        detail: format!("{trials} random fields, worst relative gap {worst:.2e}"),
    })
}

/// Consistency residual of the exact solution under simultaneous halving
/// dt = dx: must decrease strictly level over level.
pub fn property_consistency_decay(
    spec: &ProblemSpec,
    dx_levels: &[f64],
) -> Result<(PropertyOutcome, Vec<f64>)> {
    let field = spec.exact_field.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "problem {:?} has no smooth reference solution",
            spec.name
        ))
    })?;
    let mut residuals = Vec::with_capacity(dx_levels.len());
    for &dx in dx_levels {
        let mesh = spec.build_mesh(dx)?;
        residuals.push(consistency_residual(&spec.problem, field, &mesh, dx)?);
    }
    let passed = residuals.windows(2).all(|w| w[1] < w[0]);
    let listing = residuals
        .iter()
        .map(|r| format!("{r:.4e}"))
        .collect::<Vec<_>>()
        .join(" -> ");
    Ok((
        PropertyOutcome {
            name: "consistency-decay",
            passed,
            detail: format!("dt=dx residuals on {}: {listing}", spec.name),
        },
        residuals,
    ))
}

/// Negative control for the decay test: holding dx fixed while dt shrinks
/// violates the dx^2/dt -> 0 requirement, so the residual tail must stop
/// improving.
pub fn property_consistency_negative_control(
    spec: &ProblemSpec,
    dx: f64,
    dt_levels: &[f64],
) -> Result<(PropertyOutcome, Vec<f64>)> {
    let field = spec.exact_field.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "problem {:?} has no smooth reference solution",
            spec.name
        ))
    })?;
    let mesh = spec.build_mesh(dx)?;
    let mut residuals = Vec::with_capacity(dt_levels.len());
    for &dt in dt_levels {
        residuals.push(consistency_residual(&spec.problem, field, &mesh, dt)?);
    }
    let n = residuals.len();
    let passed = n >= 2 && residuals[n - 1] >= residuals[n - 2];
    let listing = residuals
        .iter()
        .map(|r| format!("{r:.4e}"))
        .collect::<Vec<_>>()
        .join(" -> ");
    Ok((
        PropertyOutcome {
            name: "consistency-negative-control",
            passed,
            detail: format!("dx={dx} fixed, dt shrinking on {}: {listing}", spec.name),
        },
        residuals,
    ))
}
