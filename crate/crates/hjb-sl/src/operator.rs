//! The one-step controlled operator.
//!
//! For a control a at an interior node x the operator follows the 2p
//! truncated characteristic branches, reads the next time level at interior
//! feet (P1 interpolation), substitutes boundary data at truncated feet
//! (evaluated at the exit time t_k + lambda dt), combines everything with
//! the consistency weights and adds the rescaled running cost:
//!
//!   S(next, a) = sum_l pi_l (gamma+ c+_l + gamma- c-_l) + tau f(t_k, x, a)
//!
//! The time recursion takes the minimum of S over a finite control set.
//!
//! Branches are flattened into small weight entries (one interpolation
//! stencil or one boundary point each, with pi gamma folded into a single
//! coefficient). For time-independent coefficients the entries of every
//! (node, control) pair are precomputed once and reused across all time
//! steps; the per-step work is then a handful of fused multiply-adds per
//! entry. The precomputed and on-the-fly paths build entries through the
//! same function, so both produce bit-identical values.

use crate::characteristics::{column_foot, combine_into, ColumnFoot};
use crate::geometry::{Domain, Mesh};
use crate::interpolation::{apply_stencil, stencil, ValueField};
use crate::{Error, Result};
use std::sync::Arc;

/// Finite sample of the compact control set A.
#[derive(Clone, Debug)]
pub struct ControlSet {
    points: Vec<f64>,
    dim: usize,
    descriptor: ControlDescriptor,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ControlDescriptor {
    /// Tensor lattice over a box, `counts` points per dimension.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        counts: Vec<usize>,
    },
    /// Center plus `rings` concentric rings of `angles` points each.
    Disk {
        radius: f64,
        rings: usize,
        angles: usize,
    },
    /// Verbatim list.
    Explicit,
}

impl ControlSet {
    pub fn explicit(points: Vec<f64>, dim: usize) -> Result<ControlSet> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::Config(
                "control list empty or length not a multiple of dim".into(),
            ));
        }
        Ok(ControlSet {
            points,
            dim,
            descriptor: ControlDescriptor::Explicit,
        })
    }

    pub(crate) fn from_parts(
        points: Vec<f64>,
        dim: usize,
        descriptor: ControlDescriptor,
    ) -> ControlSet {
        ControlSet {
            points,
            dim,
            descriptor,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn descriptor(&self) -> &ControlDescriptor {
        &self.descriptor
    }
}

pub type DriftFn = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;
pub type DiffusionFn = dyn Fn(f64, &[f64], &[f64], usize, &mut [f64]) + Send + Sync;
pub type CostFn = dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync;
pub type BoundaryFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

/// A Dirichlet exit-time control problem on a bounded domain.
#[derive(Clone)]
pub struct Problem {
    pub domain: Domain,
    /// Horizon T; data Psi is charged at T and on the lateral boundary.
    pub horizon: f64,
    /// Brownian dimension p: number of diffusion columns.
    pub p: usize,
    /// b(t, x, a), written into a dim-length slice.
    pub drift: Arc<DriftFn>,
    /// sigma_l(t, x, a) for column l in 0..p, written into a dim-length slice.
    pub diffusion: Arc<DiffusionFn>,
    /// Running cost f(t, x, a).
    pub cost: Arc<CostFn>,
    /// Boundary/terminal data Psi(t, x).
    pub boundary: Arc<BoundaryFn>,
    pub controls: ControlSet,
    /// b and sigma do not depend on t (enables foot-table precomputation).
    pub autonomous: bool,
    /// f does not depend on t (enables cost precomputation).
    pub autonomous_cost: bool,
}

impl Problem {
    pub(crate) fn eval_drift(&self, t: f64, x: &[f64], a: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, a, out)
    }
    pub(crate) fn eval_diffusion(&self, t: f64, x: &[f64], a: &[f64], l: usize, out: &mut [f64]) {
        (self.diffusion)(t, x, a, l, out)
    }
    pub fn eval_cost(&self, t: f64, x: &[f64], a: &[f64]) -> f64 {
        (self.cost)(t, x, a)
    }
    pub fn eval_boundary(&self, t: f64, x: &[f64]) -> f64 {
        (self.boundary)(t, x)
    }
}

/// Deliberate corruption switch for the checker's self-test: a checker that
/// never fails proves nothing, so the CLI can flip the sign of the minus
/// branch weight and must then see the monotonicity property fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Fault {
    None,
    FlipGammaMinus,
}

pub(crate) const KIND_INTERIOR: u8 = 0;
pub(crate) const KIND_BOUNDARY: u8 = 1;

/// One flattened branch: either an interpolation stencil into the next
/// level (interior foot) or a boundary substitution point with its exit
/// fraction. `w` carries pi_l * gamma; a symmetric column (identical
/// branches, e.g. a zero diffusion column) is stored once with both gammas
/// folded in.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BranchEval {
    pub(crate) kind: u8,
    pub(crate) w: f64,
    pub(crate) idx: [u32; 3],
    /// kind interior: stencil weights; kind boundary: [lambda, y0, y1].
    pub(crate) dat: [f64; 3],
}

/// Reusable buffers for entry construction; one per worker thread.
pub(crate) struct OpScratch {
    b: [f64; 2],
    sig: [f64; 2],
    feet: Vec<ColumnFoot>,
    taus: Vec<f64>,
    pis: Vec<f64>,
    pub(crate) entries: Vec<BranchEval>,
}

impl OpScratch {
    pub(crate) fn new(p: usize) -> OpScratch {
        OpScratch {
            b: [0.0; 2],
            sig: [0.0; 2],
            feet: Vec::with_capacity(p),
            taus: Vec::with_capacity(p),
            pis: vec![0.0; p],
            entries: Vec::with_capacity(2 * p),
        }
    }
}

/// Builds the branch entries and rescaled step tau for one (x, a) at
/// coefficient time `t_coef`. Fills `scratch.entries`; returns tau. Both
/// the cache builder and the per-step fallback call this, which is what
/// guarantees cached and uncached sweeps agree bitwise.
pub(crate) fn compute_entries(
    problem: &Problem,
    mesh: &Mesh,
    x: &[f64],
    t_coef: f64,
    dt: f64,
    a: &[f64],
    fault: Fault,
    scratch: &mut OpScratch,
) -> Result<f64> {
    let dim = mesh.dim();
    let p = problem.p;
    scratch.feet.clear();
    scratch.taus.clear();
    problem.eval_drift(t_coef, x, a, &mut scratch.b[..dim]);
    for l in 0..p {
        problem.eval_diffusion(t_coef, x, a, l, &mut scratch.sig[..dim]);
        let foot = column_foot(
            &problem.domain,
            x,
            t_coef,
            dt,
            &scratch.b[..dim],
            &scratch.sig[..dim],
            p,
        );
        scratch.taus.push(foot.tau_l);
        scratch.feet.push(foot);
    }
    let tau = combine_into(&scratch.taus, dt, &mut scratch.pis)?;

    scratch.entries.clear();
    for (l, foot) in scratch.feet.iter().enumerate() {
        let pi = scratch.pis[l];
        let symmetric = fault == Fault::None
            && foot.lambda_plus == foot.lambda_minus
            && foot.y_plus == foot.y_minus;
        if symmetric {
            push_entry(
                mesh,
                dim,
                foot.lambda_plus,
                &foot.y_plus,
                pi,
                &mut scratch.entries,
            )?;
            continue;
        }
        push_entry(
            mesh,
            dim,
            foot.lambda_plus,
            &foot.y_plus,
            pi * foot.gamma_plus,
            &mut scratch.entries,
        )?;
        let wm = match fault {
            Fault::None => pi * foot.gamma_minus,
            Fault::FlipGammaMinus => -pi * foot.gamma_minus,
        };
        push_entry(
            mesh,
            dim,
            foot.lambda_minus,
            &foot.y_minus,
            wm,
            &mut scratch.entries,
        )?;
    }
    Ok(tau)
}

fn push_entry(
    mesh: &Mesh,
    dim: usize,
    lambda: f64,
    y: &[f64; 2],
    w: f64,
    out: &mut Vec<BranchEval>,
) -> Result<()> {
    if lambda < 1.0 {
        out.push(BranchEval {
            kind: KIND_BOUNDARY,
            w,
            idx: [0; 3],
            dat: [lambda, y[0], y[1]],
        });
    } else {
        let (idx, wgt) = stencil(mesh, &y[..dim])?;
        out.push(BranchEval {
            kind: KIND_INTERIOR,
            w,
            idx,
            dat: wgt,
        });
    }
    Ok(())
}

/// Weighted sum of the branch contributions at step time t_k: interior
/// entries read `next`, boundary entries read Psi at the exit time.
#[inline]
pub(crate) fn eval_entries(
    entries: &[BranchEval],
    problem: &Problem,
    dim: usize,
    t_k: f64,
    dt: f64,
    next: &[f64],
) -> f64 {
    let mut acc = 0.0;
    for e in entries {
        let c = if e.kind == KIND_INTERIOR {
            apply_stencil(&e.idx, &e.dat, next)
        } else {
            problem.eval_boundary(t_k + e.dat[0] * dt, &e.dat[1..1 + dim])
        };
        acc += e.w * c;
    }
    acc
}

/// One application of the operator at interior node `node` with control `a`.
#[allow(non_snake_case)]
pub fn apply_S_fd(
    problem: &Problem,
    next: &ValueField,
    t_k: f64,
    dt: f64,
    node: usize,
    a: &[f64],
) -> Result<f64> {
    apply_S_fd_with(problem, next, t_k, dt, node, a, Fault::None)
}

#[allow(non_snake_case)]
pub(crate) fn apply_S_fd_with(
    problem: &Problem,
    next: &ValueField,
    t_k: f64,
    dt: f64,
    node: usize,
    a: &[f64],
    fault: Fault,
) -> Result<f64> {
    let mesh = next.mesh();
    debug_assert!(
        !mesh.is_boundary(node),
        "operator applies to interior nodes"
    );
    let mut scratch = OpScratch::new(problem.p);
    let x = mesh.vertex(node);
    let tau = compute_entries(problem, mesh, x, t_k, dt, a, fault, &mut scratch)?;
    let body = eval_entries(
        &scratch.entries,
        problem,
        mesh.dim(),
        t_k,
        dt,
        next.values(),
    );
    Ok(body + tau * problem.eval_cost(t_k, x, a))
}

/// Exhaustive minimum of the operator over the control list; ties keep the
/// first occurrence. Returns (value, control index).
pub fn minimize_over_controls(
    problem: &Problem,
    next: &ValueField,
    t_k: f64,
    dt: f64,
    node: usize,
) -> Result<(f64, usize)> {
    let mut best = f64::INFINITY;
    let mut best_j = 0usize;
    for j in 0..problem.controls.len() {
        let v = apply_S_fd(problem, next, t_k, dt, node, problem.controls.point(j))?;
        if v < best {
            best = v;
            best_j = j;
        }
    }
    Ok((best, best_j))
}

/// Precomputed branch entries for every (interior node, control) pair,
/// CSR-packed because symmetric columns collapse to one entry.
pub(crate) struct FootTable {
    off: Vec<u32>,
    entries: Vec<BranchEval>,
    tau: Vec<f64>,
    /// Running cost per pair when f is time-independent.
    fval: Option<Vec<f64>>,
    n_controls: usize,
}

impl FootTable {
    /// Bytes of the packed table holding `n_entries` branch entries total.
    fn table_bytes(pairs: usize, n_entries: usize, cache_cost: bool) -> usize {
        n_entries * std::mem::size_of::<BranchEval>()
            + pairs * (4 + 8 + if cache_cost { 8 } else { 0 })
            + 4
    }

    /// Builds the table unless it would exceed `budget` bytes. Symmetric
    /// columns store one entry instead of two, which can halve the size,
    /// so when the worst case (2p entries per pair) is over budget but the
    /// best case (p per pair) is not, a counting pre-pass measures the
    /// exact size before anything is allocated.
    fn build(
        problem: &Problem,
        mesh: &Mesh,
        dt: f64,
        fault: Fault,
        budget: usize,
    ) -> Result<Option<FootTable>> {
        let interior = mesh.interior_vertices();
        let n_controls = problem.controls.len();
        let pairs = interior.len() * n_controls;
        let p = problem.p;
        let cache_cost = problem.autonomous_cost;
        if Self::table_bytes(pairs, pairs * p, cache_cost) > budget {
            return Ok(None);
        }
        let mut scratch = OpScratch::new(p);
        let capacity = if Self::table_bytes(pairs, pairs * 2 * p, cache_cost) <= budget {
            pairs * 2 * p
        } else {
            let mut total = 0usize;
            for &node in interior {
                let x = mesh.vertex(node as usize);
                for j in 0..n_controls {
                    compute_entries(
                        problem,
                        mesh,
                        x,
                        0.0,
                        dt,
                        problem.controls.point(j),
                        fault,
                        &mut scratch,
                    )?;
                    total += scratch.entries.len();
                }
                if Self::table_bytes(pairs, total, cache_cost) > budget {
                    return Ok(None);
                }
            }
            total
        };
        let mut off = Vec::with_capacity(pairs + 1);
        off.push(0u32);
        let mut entries = Vec::with_capacity(capacity);
        let mut tau = Vec::with_capacity(pairs);
        let mut fval = if cache_cost {
            Some(Vec::with_capacity(pairs))
        } else {
            None
        };
        for &node in interior {
            let x = mesh.vertex(node as usize);
            for j in 0..n_controls {
                let a = problem.controls.point(j);
                let t = compute_entries(problem, mesh, x, 0.0, dt, a, fault, &mut scratch)?;
                entries.extend_from_slice(&scratch.entries);
                off.push(entries.len() as u32);
                tau.push(t);
                if let Some(f) = fval.as_mut() {
                    f.push(problem.eval_cost(0.0, x, a));
                }
            }
        }
        Ok(Some(FootTable {
            off,
            entries,
            tau,
            fval,
            n_controls,
        }))
    }
}

/// Per-solve operator engine: owns the foot table when coefficients are
/// time-independent and it fits the memory budget, otherwise rebuilds
/// entries on the fly (same construction path, same results).
pub(crate) struct SweepEngine<'a> {
    problem: &'a Problem,
    mesh: &'a Mesh,
    dt: f64,
    fault: Fault,
    table: Option<FootTable>,
}

impl<'a> SweepEngine<'a> {
    pub(crate) fn new(
        problem: &'a Problem,
        mesh: &'a Mesh,
        dt: f64,
        cache_budget_bytes: usize,
        fault: Fault,
    ) -> Result<SweepEngine<'a>> {
        let table = if problem.autonomous {
            FootTable::build(problem, mesh, dt, fault, cache_budget_bytes)?
        } else {
            None
        };
        Ok(SweepEngine {
            problem,
            mesh,
            dt,
            fault,
            table,
        })
    }

    pub(crate) fn uses_cache(&self) -> bool {
        self.table.is_some()
    }

    /// Minimum of the operator over controls at interior slot `slot`
    /// (position in `mesh.interior_vertices()`, vertex id `node`).
    pub(crate) fn minimize(
        &self,
        scratch: &mut OpScratch,
        next: &[f64],
        t_k: f64,
        slot: usize,
        node: usize,
    ) -> Result<(f64, u32)> {
        let dim = self.mesh.dim();
        let x = self.mesh.vertex(node);
        let mut best = f64::INFINITY;
        let mut best_j = 0u32;
        if let Some(table) = &self.table {
            let base = slot * table.n_controls;
            for j in 0..table.n_controls {
                let pair = base + j;
                let es = &table.entries[table.off[pair] as usize..table.off[pair + 1] as usize];
                let body = eval_entries(es, self.problem, dim, t_k, self.dt, next);
                let f = match &table.fval {
                    Some(fv) => fv[pair],
                    None => self
                        .problem
                        .eval_cost(t_k, x, self.problem.controls.point(j)),
                };
                let v = body + table.tau[pair] * f;
                if v < best {
                    best = v;
                    best_j = j as u32;
                }
            }
        } else {
            for j in 0..self.problem.controls.len() {
                let a = self.problem.controls.point(j);
                let tau = compute_entries(
                    self.problem,
                    self.mesh,
                    x,
                    t_k,
                    self.dt,
                    a,
                    self.fault,
                    scratch,
                )?;
                let body = eval_entries(&scratch.entries, self.problem, dim, t_k, self.dt, next);
                let v = body + tau * self.problem.eval_cost(t_k, x, a);
                if v < best {
                    best = v;
                    best_j = j as u32;
                }
            }
        }
        Ok((best, best_j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_core::{RngCore, SeedableRng};

    fn unit(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// 1D problem with b = 0, sigma = s, f = 0, Psi as given.
    fn prob_1d(
        domain: Domain,
        s: f64,
        psi: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        controls: ControlSet,
    ) -> Problem {
        Problem {
            domain,
            horizon: 1.0,
            p: 1,
            drift: Arc::new(|_, _, _, out| out[0] = 0.0),
            diffusion: Arc::new(move |_, _, _, _, out| out[0] = s),
            cost: Arc::new(|_, _, _| 0.0),
            boundary: Arc::new(psi),
            controls,
            autonomous: true,
            autonomous_cost: true,
        }
    }

    #[test]
    fn constant_field_reproduced() {
        let mesh = Mesh::build_interval_grid(-10.0, 10.0, 100).unwrap();
        let controls = ControlSet::explicit(vec![0.0], 1).unwrap();
        let prob = prob_1d(
            Domain::Interval {
                lo: -10.0,
                hi: 10.0,
            },
            1.0,
            |_, _| 3.25,
            controls,
        );
        let vals = vec![3.25; mesh.n_vertices()];
        let next = ValueField::new(&mesh, &vals, 0.1).unwrap();
        // Nothing exits from the middle: pure convex combination.
        let node = 50;
        let v = apply_S_fd(&prob, &next, 0.0, 0.1, node, &[0.0]).unwrap();
        assert!((v - 3.25).abs() <= 1e-14);
    }

    #[test]
    fn truncated_boundary_substitution_hand_value() {
        // x = 0.1, b = 0, sigma = 1, dt = 0.04 on (0,1): the minus branch
        // exits at 0 with lambda = 1/4, so S = gamma- * Psi = 2/3.
        let mesh = Mesh::build_interval_grid(0.0, 1.0, 10).unwrap();
        let controls = ControlSet::explicit(vec![0.0], 1).unwrap();
        let prob = prob_1d(
            Domain::Interval { lo: 0.0, hi: 1.0 },
            1.0,
            |_, _| 1.0,
            controls,
        );
        let vals = vec![0.0; mesh.n_vertices()];
        let next = ValueField::new(&mesh, &vals, 0.04).unwrap();
        let v = apply_S_fd(&prob, &next, 0.0, 0.04, 1, &[0.0]).unwrap();
        assert!((v - 2.0 / 3.0).abs() <= 1e-13, "got {v}");
    }

    #[test]
    fn unconstrained_operator_matches_classical_form() {
        // Domain large enough that no branch exits: S must equal
        // (1/2p) sum_l (I[phi](y+l) + I[phi](y-l)) + dt f.
        let mesh = Mesh::build_rect_grid([-5.0, -5.0], [5.0, 5.0], 100, 100).unwrap();
        let phi = |x: &[f64]| (0.3 * x[0]).sin() + 0.2 * x[1] * x[1];
        let vals: Vec<f64> = (0..mesh.n_vertices())
            .map(|i| phi(mesh.vertex(i)))
            .collect();
        let next = ValueField::new(&mesh, &vals, 0.01).unwrap();
        let prob = Problem {
            domain: Domain::Rectangle {
                lo: [-5.0, -5.0],
                hi: [5.0, 5.0],
            },
            horizon: 1.0,
            p: 2,
            drift: Arc::new(|_, _, a: &[f64], out: &mut [f64]| out.copy_from_slice(a)),
            diffusion: Arc::new(|_, x: &[f64], _, l, out: &mut [f64]| {
                if l == 0 {
                    out[0] = 0.7 + 0.1 * x[1];
                    out[1] = 0.2;
                } else {
                    out[0] = 0.0;
                    out[1] = 0.5;
                }
            }),
            cost: Arc::new(|_, x: &[f64], a: &[f64]| 1.0 + 0.5 * a[0] + x[0] * 0.01),
            boundary: Arc::new(|_, _| 0.0),
            controls: ControlSet::explicit(vec![0.3, -0.2], 2).unwrap(),
            autonomous: true,
            autonomous_cost: true,
        };
        let dt = 0.01;
        let a = [0.3, -0.2];
        let node = mesh.interior_vertices()[5050] as usize;
        let x = mesh.vertex(node);
        let v = apply_S_fd(&prob, &next, 0.0, dt, node, &a).unwrap();

        let mut expected = dt * prob.eval_cost(0.0, x, &a);
        let mut b = [0.0; 2];
        prob.eval_drift(0.0, x, &a, &mut b);
        for l in 0..2 {
            let mut s = [0.0; 2];
            prob.eval_diffusion(0.0, x, &a, l, &mut s);
            let scale = (2.0 * dt).sqrt();
            for sign in [1.0, -1.0] {
                let y = [
                    x[0] + dt * b[0] + sign * scale * s[0],
                    x[1] + dt * b[1] + sign * scale * s[1],
                ];
                expected += 0.25 * next.eval(&y).unwrap();
            }
        }
        assert!(
            (v - expected).abs() <= 1e-13,
            "S = {v}, classical = {expected}"
        );
    }

    #[test]
    fn minimize_singleton_and_tie_break() {
        let mesh = Mesh::build_interval_grid(0.0, 1.0, 10).unwrap();
        let single = ControlSet::explicit(vec![0.25], 1).unwrap();
        let prob = prob_1d(
            Domain::Interval { lo: 0.0, hi: 1.0 },
            0.3,
            |_, _| 0.5,
            single,
        );
        let vals: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let next = ValueField::new(&mesh, &vals, 0.01).unwrap();
        let direct = apply_S_fd(&prob, &next, 0.0, 0.01, 5, &[0.25]).unwrap();
        let (v, j) = minimize_over_controls(&prob, &next, 0.0, 0.01, 5).unwrap();
        assert_eq!(v, direct);
        assert_eq!(j, 0);

        // Duplicated control: same value, first index wins.
        let dup = ControlSet::explicit(vec![0.25, 0.25], 1).unwrap();
        let prob2 = Problem {
            controls: dup,
            ..prob
        };
        let (v2, j2) = minimize_over_controls(&prob2, &next, 0.0, 0.01, 5).unwrap();
        assert_eq!(v2, direct);
        assert_eq!(j2, 0);
    }

    #[test]
    fn stay_put_control_keeps_zero() {
        // Degenerate transport with a = 0 available: the foot stays at the
        // node, the next level is zero there, so the minimum is exactly 0.
        let mesh = Mesh::build_interval_grid(0.0, 1.0, 100).unwrap();
        let controls = ControlSet::explicit(vec![-1.0, 0.0, 1.0], 1).unwrap();
        let prob = Problem {
            domain: Domain::Interval { lo: 0.0, hi: 1.0 },
            horizon: 1.0,
            p: 1,
            drift: Arc::new(|_, _, a: &[f64], out: &mut [f64]| out[0] = a[0]),
            diffusion: Arc::new(|_, _, _, _, out: &mut [f64]| out[0] = 0.0),
            cost: Arc::new(|_, _, _| 0.0),
            boundary: Arc::new(|t, x: &[f64]| if x[0] <= 0.0 { 1.0 - t } else { 0.0 }),
            controls,
            autonomous: true,
            autonomous_cost: true,
        };
        let vals = vec![0.0; mesh.n_vertices()];
        let next = ValueField::new(&mesh, &vals, 0.01).unwrap();
        for node in [1usize, 2, 50, 99] {
            let (v, _) = minimize_over_controls(&prob, &next, 0.99, 0.01, node).unwrap();
            assert_eq!(v, 0.0, "node {node}");
        }
    }

    #[test]
    fn monotone_in_nodal_values() {
        let mesh = Mesh::build_interval_grid(0.0, 1.0, 50).unwrap();
        let controls = ControlSet::explicit(vec![-0.5, 0.5], 1).unwrap();
        let prob = prob_1d(
            Domain::Interval { lo: 0.0, hi: 1.0 },
            0.8,
            |_, _| 0.3,
            controls,
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let lo_vals: Vec<f64> = (0..51).map(|_| unit(&mut rng)).collect();
            let hi_vals: Vec<f64> = lo_vals.iter().map(|v| v + unit(&mut rng)).collect();
            let lo = ValueField::new(&mesh, &lo_vals, 0.02).unwrap();
            let hi = ValueField::new(&mesh, &hi_vals, 0.02).unwrap();
            let node = 1 + (rng.next_u64() % 49) as usize;
            let a = [if unit(&mut rng) < 0.5 { -0.5 } else { 0.5 }];
            let va = apply_S_fd(&prob, &lo, 0.0, 0.02, node, &a).unwrap();
            let vb = apply_S_fd(&prob, &hi, 0.0, 0.02, node, &a).unwrap();
            assert!(va <= vb + 1e-14);
        }
    }

    #[test]
    fn constant_addition_exact_or_one_sided() {
        let mesh = Mesh::build_interval_grid(0.0, 1.0, 50).unwrap();
        let controls = ControlSet::explicit(vec![0.0], 1).unwrap();
        let prob = prob_1d(
            Domain::Interval { lo: 0.0, hi: 1.0 },
            0.6,
            |_, _| 0.4,
            controls,
        );
        let vals: Vec<f64> = (0..51).map(|i| (i as f64 * 0.13).sin()).collect();
        let plus: Vec<f64> = vals.iter().map(|v| v + 2.0).collect();
        let base = ValueField::new(&mesh, &vals, 0.02).unwrap();
        let shifted = ValueField::new(&mesh, &plus, 0.02).unwrap();
        let dt = 0.02;
        // Interior node far from the walls: no truncation, exact equality.
        let v0 = apply_S_fd(&prob, &base, 0.0, dt, 25, &[0.0]).unwrap();
        let v1 = apply_S_fd(&prob, &shifted, 0.0, dt, 25, &[0.0]).unwrap();
        assert!((v1 - (v0 + 2.0)).abs() <= 1e-12);
        // Node next to the wall: part of the mass is boundary-substituted,
        // so adding C >= 0 gains at most C.
        let w0 = apply_S_fd(&prob, &base, 0.0, dt, 1, &[0.0]).unwrap();
        let w1 = apply_S_fd(&prob, &shifted, 0.0, dt, 1, &[0.0]).unwrap();
        assert!(w1 <= w0 + 2.0 + 1e-14);
        assert!(w1 > w0);
    }

    #[test]
    fn one_step_bound() {
        let mesh = Mesh::build_interval_grid(0.0, 1.0, 30).unwrap();
        let controls = ControlSet::explicit(vec![0.4], 1).unwrap();
        let prob = Problem {
            cost: Arc::new(|_, _, _| -2.0),
            ..prob_1d(
                Domain::Interval { lo: 0.0, hi: 1.0 },
                1.0,
                |_, _| -0.7,
                controls,
            )
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let vals: Vec<f64> = (0..31).map(|_| 2.0 * unit(&mut rng) - 1.0).collect();
            let sup = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let next = ValueField::new(&mesh, &vals, 0.05).unwrap();
            let node = 1 + (rng.next_u64() % 29) as usize;
            let v = apply_S_fd(&prob, &next, 0.0, 0.05, node, &[0.4]).unwrap();
            assert!(v.abs() <= sup.max(0.7) + 0.05 * 2.0 + 1e-14);
        }
    }

    #[test]
    fn cached_and_uncached_sweeps_agree_bitwise() {
        let mesh = Mesh::build_rect_grid([0.0, 0.0], [1.0, 1.0], 12, 12).unwrap();
        let controls =
            ControlSet::explicit(vec![-1.0, 0.0, 0.5, 0.0, 0.0, 1.0, 0.7, -0.7], 2).unwrap();
        let prob = Problem {
            domain: Domain::Rectangle {
                lo: [0.0, 0.0],
                hi: [1.0, 1.0],
            },
            horizon: 1.0,
            p: 2,
            drift: Arc::new(|_, _, a: &[f64], out: &mut [f64]| out.copy_from_slice(a)),
            diffusion: Arc::new(|_, x: &[f64], _, l, out: &mut [f64]| {
                if l == 0 {
                    out[0] = (x[0] + x[1]).sin();
                    out[1] = (x[0] + x[1]).cos();
                } else {
                    out[0] = 0.0;
                    out[1] = 0.0;
                }
            }),
            cost: Arc::new(|_, x: &[f64], a: &[f64]| 1.0 + a[1] * a[1] + x[0]),
            boundary: Arc::new(|t, x: &[f64]| (t + 0.5) * x[0].sin() * x[1].sin()),
            controls,
            autonomous: true,
            autonomous_cost: true,
        };
        let dt = 0.05;
        let vals: Vec<f64> = (0..mesh.n_vertices())
            .map(|i| {
                let v = mesh.vertex(i);
                (1.5 * v[0]).cos() * (0.5 + v[1])
            })
            .collect();
        let cached = SweepEngine::new(&prob, &mesh, dt, usize::MAX, Fault::None).unwrap();
        let direct = SweepEngine::new(&prob, &mesh, dt, 0, Fault::None).unwrap();
        assert!(cached.uses_cache());
        assert!(!direct.uses_cache());
        let mut scratch = OpScratch::new(2);
        for (slot, &node) in mesh.interior_vertices().iter().enumerate() {
            let a = cached
                .minimize(&mut scratch, &vals, 0.35, slot, node as usize)
                .unwrap();
            let b = direct
                .minimize(&mut scratch, &vals, 0.35, slot, node as usize)
                .unwrap();
            assert_eq!(a.0.to_bits(), b.0.to_bits(), "node {node}");
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn flipped_gamma_breaks_monotonicity() {
        let mesh = Mesh::build_interval_grid(0.0, 1.0, 20).unwrap();
        let controls = ControlSet::explicit(vec![0.0], 1).unwrap();
        let prob = prob_1d(
            Domain::Interval { lo: 0.0, hi: 1.0 },
            0.5,
            |_, _| 0.0,
            controls,
        );
        let lo_vals = vec![0.0; 21];
        let mut hi_vals = lo_vals.clone();
        // Raise only the node under the minus foot of node 2.
        hi_vals[1] = 1.0;
        let lo = ValueField::new(&mesh, &lo_vals, 0.01).unwrap();
        let hi = ValueField::new(&mesh, &hi_vals, 0.01).unwrap();
        let dt = 0.001;
        let va = apply_S_fd_with(&prob, &lo, 0.0, dt, 2, &[0.0], Fault::FlipGammaMinus).unwrap();
        let vb = apply_S_fd_with(&prob, &hi, 0.0, dt, 2, &[0.0], Fault::FlipGammaMinus).unwrap();
        assert!(
            vb < va,
            "fault injection must show up as a monotonicity violation"
        );
    }

    #[test]
    fn control_set_accessors() {
        let cs = ControlSet::explicit(vec![1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.point(1), &[3.0, 4.0]);
        assert!(ControlSet::explicit(vec![], 1).is_err());
        assert!(ControlSet::explicit(vec![1.0, 2.0, 3.0], 2).is_err());
    }
}
