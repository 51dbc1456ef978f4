//! Backward-in-time sweep and the space-time extension of the discrete
//! value function.
//!
//! Level N carries the terminal data; each earlier level sets boundary
//! nodes to the lateral data at t_k = k dt and interior nodes to the
//! minimum of the one-step operator over the control set. Node updates
//! within a level are independent and run in parallel; the output is
//! bit-identical for any worker count because every node's minimization
//! walks the control list in the same order.

use crate::geometry::Mesh;
use crate::interpolation::ValueField;
use crate::operator::{Fault, OpScratch, Problem, SweepEngine};
use crate::{Error, Result};
use rayon::prelude::*;
use std::sync::Arc;

/// Which time levels to keep. A full history costs (N+1) x nodes reals;
/// convergence studies only ever look at t = 0.
#[derive(Clone, Debug, PartialEq)]
pub enum Retention {
    All,
    /// Keep exactly these level indices (terminal level is N = T/dt).
    Levels(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Worker threads for the node sweep; 0 uses the process default.
    pub workers: usize,
    pub retention: Retention,
    /// Record the argmin control index per interior node and level.
    pub store_controls: bool,
    /// Memory allowance for the precomputed foot table; a table that would
    /// exceed this falls back to on-the-fly entry construction, which
    /// produces identical values.
    pub cache_budget_bytes: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            workers: 0,
            retention: Retention::All,
            store_controls: false,
            cache_budget_bytes: 3 * 1024 * 1024 * 1024,
        }
    }
}

/// The discrete value function V_{k,i} and its space-time extension,
/// piecewise-constant in time (floor rule) and P1 in space.
pub struct Solution {
    mesh: Arc<Mesh>,
    dt: f64,
    n_steps: usize,
    levels: Vec<Option<Vec<f64>>>,
    /// Argmin control index per interior slot, same retention as levels.
    controls: Vec<Option<Vec<u32>>>,
    /// True when the requested time step was not an integer divisor of T.
    pub dt_adjusted: bool,
    pub wall_seconds: f64,
    /// Whether the sweep ran off the precomputed foot table.
    pub used_cache: bool,
}

/// Queries within this relative distance below a level time snap up to it,
/// so evaluate(t_k, x) reads level k even when t_k arrived with roundoff.
const TIME_SNAP: f64 = 1e-9;

impl Solution {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }
    pub fn mesh_arc(&self) -> Arc<Mesh> {
        Arc::clone(&self.mesh)
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn level(&self, k: usize) -> Result<&[f64]> {
        self.levels
            .get(k)
            .and_then(|l| l.as_deref())
            .ok_or(Error::LevelNotRetained { level: k })
    }

    pub fn field(&self, k: usize) -> Result<ValueField<'_>> {
        ValueField::new(&self.mesh, self.level(k)?, k as f64 * self.dt)
    }

    /// Argmin control indices for level k, one per interior vertex (in
    /// `mesh.interior_vertices()` order).
    pub fn argmin_controls(&self, k: usize) -> Result<&[u32]> {
        self.controls
            .get(k)
            .and_then(|l| l.as_deref())
            .ok_or(Error::LevelNotRetained { level: k })
    }

    pub(crate) fn level_index_of(&self, t: f64) -> Result<usize> {
        let horizon = self.horizon();
        if !(0.0..=horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::TimeOutOfRange { t, t_max: horizon });
        }
        let r = t / self.dt;
        Ok(((r + TIME_SNAP).floor() as usize).min(self.n_steps))
    }

    /// V(t, x): the level at floor(t/dt), interpolated at x.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<f64> {
        let k = self.level_index_of(t)?;
        self.field(k)?.eval(x)
    }

    /// Central-difference spatial gradient of the extension, step h per
    /// coordinate. Errors when a stencil point leaves the closed domain.
    pub fn gradient(&self, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
        let k = self.level_index_of(t)?;
        let field = self.field(k)?;
        let dim = self.mesh.dim();
        let domain = self.mesh.domain();
        let diam = domain.diameter();
        let admissible = |p: &[f64]| -> bool {
            if domain.inside(p) {
                return true;
            }
            let q = domain.project_boundary(p);
            let d2 = if dim == 1 {
                (p[0] - q[0]) * (p[0] - q[0])
            } else {
                (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1])
            };
            d2.sqrt() <= 1e-12 * diam
        };
        let mut grad = vec![0.0; dim];
        let mut probe = [0.0f64; 2];
        for c in 0..dim {
            probe[..dim].copy_from_slice(x);
            probe[c] = x[c] + h;
            if !admissible(&probe[..dim]) {
                return Err(Error::StencilOutside {
                    point: probe[..dim].to_vec(),
                });
            }
            let fwd = field.eval(&probe[..dim])?;
            probe[c] = x[c] - h;
            if !admissible(&probe[..dim]) {
                return Err(Error::StencilOutside {
                    point: probe[..dim].to_vec(),
                });
            }
            let bwd = field.eval(&probe[..dim])?;
            grad[c] = (fwd - bwd) / (2.0 * h);
        }
        Ok(grad)
    }

    /// Max absolute nodal value over all retained levels.
    pub fn sup_norm(&self) -> f64 {
        self.levels
            .iter()
            .flatten()
            .flat_map(|l| l.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub fn solve(
    problem: &Problem,
    mesh: Arc<Mesh>,
    dt_request: f64,
    opts: &SolveOptions,
) -> Result<Solution> {
    solve_with_fault(problem, mesh, dt_request, opts, Fault::None)
}

pub(crate) fn solve_with_fault(
    problem: &Problem,
    mesh: Arc<Mesh>,
    dt_request: f64,
    opts: &SolveOptions,
    fault: Fault,
) -> Result<Solution> {
    if !(dt_request > 0.0 && dt_request.is_finite()) {
        return Err(Error::Config(format!(
            "time step {dt_request} must be positive"
        )));
    }
    if problem.domain.dim() != mesh.dim() {
        return Err(Error::Config(
            "problem domain and mesh dimension differ".into(),
        ));
    }
    let horizon = problem.horizon;
    let n_steps = (horizon / dt_request).round().max(1.0) as usize;
    let dt = horizon / n_steps as f64;
    let dt_adjusted = (dt - dt_request).abs() > 0.5 * f64::EPSILON * dt_request.max(dt);

    let start = std::time::Instant::now();
    let run = || -> Result<Solution> {
        let engine = SweepEngine::new(problem, &mesh, dt, opts.cache_budget_bytes, fault)?;
        let used_cache = engine.uses_cache();
        let n = mesh.n_vertices();
        let interior = mesh.interior_vertices();
        let keep = |k: usize| match &opts.retention {
            Retention::All => true,
            Retention::Levels(list) => list.contains(&k),
        };

        let mut levels: Vec<Option<Vec<f64>>> = vec![None; n_steps + 1];
        let mut controls: Vec<Option<Vec<u32>>> = vec![None; n_steps + 1];

        let mut current: Vec<f64> = (0..n)
            .map(|i| problem.eval_boundary(horizon, mesh.vertex(i)))
            .collect();
        if let Some(i) = current.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                level: n_steps,
                node: i,
            });
        }
        if keep(n_steps) {
            levels[n_steps] = Some(current.clone());
        }

        let mut interior_out: Vec<Result<(f64, u32)>> = Vec::with_capacity(interior.len());
        for k in (0..n_steps).rev() {
            let t_k = k as f64 * dt;
            interior
                .par_iter()
                .enumerate()
                .map_init(
                    || OpScratch::new(problem.p),
                    |scratch, (slot, &node)| {
                        engine.minimize(scratch, &current, t_k, slot, node as usize)
                    },
                )
                .collect_into_vec(&mut interior_out);

            let mut next = vec![0.0f64; n];
            for i in 0..n {
                if mesh.is_boundary(i) {
                    next[i] = problem.eval_boundary(t_k, mesh.vertex(i));
                }
            }
            let mut argmins = if opts.store_controls && keep(k) {
                Some(Vec::with_capacity(interior.len()))
            } else {
                None
            };
            for (slot, res) in interior_out.drain(..).enumerate() {
                let (v, j) = res?;
                next[interior[slot] as usize] = v;
                if let Some(am) = argmins.as_mut() {
                    am.push(j);
                }
            }
            if let Some(i) = next.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { level: k, node: i });
            }
            current = next;
            if keep(k) {
                levels[k] = Some(current.clone());
                controls[k] = argmins;
            }
        }

        Ok(Solution {
            mesh: Arc::clone(&mesh),
            dt,
            n_steps,
            levels,
            controls,
            dt_adjusted,
            wall_seconds: 0.0,
            used_cache,
        })
    };

    let mut solution = if opts.workers == 0 {
        run()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(run)?
    };
    solution.wall_seconds = start.elapsed().as_secs_f64();
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::operator::ControlSet;

    fn transport_1d(
        psi: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        sigma: f64,
    ) -> Problem {
        Problem {
            domain: Domain::Interval { lo: 0.0, hi: 1.0 },
            horizon: 1.0,
            p: 1,
            drift: Arc::new(|_, _, a: &[f64], out: &mut [f64]| out[0] = a[0]),
            diffusion: Arc::new(move |_, _, _, _, out: &mut [f64]| out[0] = sigma),
            cost: Arc::new(|_, _, _| 0.0),
            boundary: Arc::new(psi),
            controls: ControlSet::explicit(vec![-1.0, 0.0, 1.0], 1).unwrap(),
            autonomous: true,
            autonomous_cost: true,
        }
    }

    #[test]
    fn zero_data_gives_zero_everywhere() {
        let prob = transport_1d(|_, _| 0.0, 0.3);
        let mesh = Arc::new(Mesh::build_interval_grid(0.0, 1.0, 50).unwrap());
        let sol = solve(&prob, mesh, 0.02, &SolveOptions::default()).unwrap();
        for k in 0..=sol.n_steps() {
            assert!(sol.level(k).unwrap().iter().all(|&v| v == 0.0), "level {k}");
        }
    }

    #[test]
    fn boundary_injection_is_exact() {
        let prob = transport_1d(|t, x| if x[0] <= 0.0 { 1.0 - t } else { 0.25 * t }, 0.5);
        let mesh = Arc::new(Mesh::build_interval_grid(0.0, 1.0, 20).unwrap());
        let sol = solve(&prob, mesh, 0.05, &SolveOptions::default()).unwrap();
        for k in 0..sol.n_steps() {
            let t_k = k as f64 * sol.dt();
            let level = sol.level(k).unwrap();
            assert_eq!(level[0], 1.0 - t_k);
            assert_eq!(level[20], 0.25 * t_k);
        }
    }

    #[test]
    fn dt_is_adjusted_to_divide_horizon() {
        let prob = transport_1d(|_, _| 0.0, 0.1);
        let mesh = Arc::new(Mesh::build_interval_grid(0.0, 1.0, 10).unwrap());
        let sol = solve(&prob, Arc::clone(&mesh), 0.3, &SolveOptions::default()).unwrap();
        assert!(sol.dt_adjusted);
        assert_eq!(sol.n_steps(), 3);
        assert!((sol.dt() - 1.0 / 3.0).abs() < 1e-16);
        let exact = solve(&prob, mesh, 0.25, &SolveOptions::default()).unwrap();
        assert!(!exact.dt_adjusted);
        assert_eq!(exact.n_steps(), 4);
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let prob = transport_1d(|t, x| (1.0 - t) * (1.0 - x[0]), 0.4);
        let mesh = Arc::new(Mesh::build_interval_grid(0.0, 1.0, 40).unwrap());
        let base = solve(&prob, Arc::clone(&mesh), 0.025, &SolveOptions::default()).unwrap();
        for workers in [1usize, 2, 3] {
            let opts = SolveOptions {
                workers,
                ..Default::default()
            };
            let sol = solve(&prob, Arc::clone(&mesh), 0.025, &opts).unwrap();
            for k in 0..=sol.n_steps() {
                let a = base.level(k).unwrap();
                let b = sol.level(k).unwrap();
                for i in 0..a.len() {
                    assert_eq!(
                        a[i].to_bits(),
                        b[i].to_bits(),
                        "level {k} node {i} workers {workers}"
                    );
                }
            }
        }
    }

    #[test]
    fn cache_fallback_is_bitwise_identical() {
        let prob = transport_1d(|t, x| (1.0 - t) * x[0], 0.6);
        let mesh = Arc::new(Mesh::build_interval_grid(0.0, 1.0, 30).unwrap());
        let cached = solve(&prob, Arc::clone(&mesh), 0.05, &SolveOptions::default()).unwrap();
        let direct = solve(
            &prob,
            Arc::clone(&mesh),
            0.05,
            &SolveOptions {
                cache_budget_bytes: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(cached.used_cache && !direct.used_cache);
        for k in 0..=cached.n_steps() {
            let a = cached.level(k).unwrap();
            let b = direct.level(k).unwrap();
            for i in 0..a.len() {
                assert_eq!(a[i].to_bits(), b[i].to_bits());
            }
        }
    }

    #[test]
    fn evaluate_follows_floor_rule() {
        let prob = transport_1d(|t, _| 1.0 - t, 0.2);
        let mesh = Arc::new(Mesh::build_interval_grid(0.0, 1.0, 10).unwrap());
        let sol = solve(&prob, mesh, 0.25, &SolveOptions::default()).unwrap();
        // Probe the boundary vertex, whose injected data distinguishes the
        // levels: V_k(0) = 1 - t_k.
        let x = [0.0];
        let at_level1 = sol.evaluate(0.25, &x).unwrap();
        assert_eq!(at_level1, 0.75);
        for t in [0.25, 0.3, 0.4, 0.499999] {
            assert_eq!(sol.evaluate(t, &x).unwrap(), at_level1, "t = {t}");
        }
        assert_eq!(sol.evaluate(0.5, &x).unwrap(), 0.5);
        // Terminal slice.
        let vt = sol.evaluate(1.0, &[0.3]).unwrap();
        let terminal = sol.field(sol.n_steps()).unwrap().eval(&[0.3]).unwrap();
        assert_eq!(vt, terminal);
        assert!(sol.evaluate(1.5, &x).is_err());
        assert!(sol.evaluate(-0.1, &x).is_err());
    }

    #[test]
    fn vertex_evaluation_is_nodal() {
        let prob = transport_1d(|t, x| (1.0 - t) * (x[0] - 0.5).abs(), 0.3);
        let mesh = Arc::new(Mesh::build_interval_grid(0.0, 1.0, 16).unwrap());
        let sol = solve(&prob, mesh, 0.125, &SolveOptions::default()).unwrap();
        let level = sol.level(2).unwrap().to_vec();
        for i in 0..=16 {
            let x = sol.mesh().vertex(i).to_vec();
            assert_eq!(sol.evaluate(2.0 * 0.125, &x).unwrap(), level[i]);
        }
    }

    #[test]
    fn retention_drops_unrequested_levels() {
        let prob = transport_1d(|_, _| 0.0, 0.2);
        let mesh = Arc::new(Mesh::build_interval_grid(0.0, 1.0, 10).unwrap());
        let opts = SolveOptions {
            retention: Retention::Levels(vec![0, 4]),
            ..Default::default()
        };
        let sol = solve(&prob, mesh, 0.25, &opts).unwrap();
        assert!(sol.level(0).is_ok());
        assert!(sol.level(4).is_ok());
        assert!(matches!(
            sol.level(2),
            Err(Error::LevelNotRetained { level: 2 })
        ));
        assert!(matches!(
            sol.evaluate(0.6, &[0.5]),
            Err(Error::LevelNotRetained { .. })
        ));
    }

    #[test]
    fn gradient_of_affine_terminal_data() {
        // No dynamics reach t=T data through one zero-cost step with a=0
        // available, so the terminal plane survives; its gradient is exact.
        let prob = Problem {
            domain: Domain::Rectangle {
                lo: [0.0, 0.0],
                hi: [1.0, 1.0],
            },
            horizon: 0.1,
            p: 1,
            drift: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
            diffusion: Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)),
            cost: Arc::new(|_, _, _| 0.0),
            boundary: Arc::new(|_, x: &[f64]| 2.0 * x[0] - 3.0 * x[1] + 0.7),
            controls: ControlSet::explicit(vec![0.0, 0.0], 2).unwrap(),
            autonomous: true,
            autonomous_cost: true,
        };
        let mesh = Arc::new(Mesh::build_rect_grid([0.0, 0.0], [1.0, 1.0], 20, 20).unwrap());
        let sol = solve(&prob, mesh, 0.05, &SolveOptions::default()).unwrap();
        let g = sol.gradient(0.0, &[0.4, 0.6], 0.05).unwrap();
        assert!((g[0] - 2.0).abs() <= 1e-10);
        assert!((g[1] + 3.0).abs() <= 1e-10);
        // Stencil poking out of the domain is refused.
        assert!(matches!(
            sol.gradient(0.0, &[0.01, 0.5], 0.05),
            Err(Error::StencilOutside { .. })
        ));
    }

    #[test]
    fn raising_boundary_data_never_lowers_values() {
        let mesh = Arc::new(Mesh::build_interval_grid(0.0, 1.0, 25).unwrap());
        let base = transport_1d(|t, x| if x[0] <= 0.0 { 1.0 - t } else { 0.0 }, 0.35);
        let raised = transport_1d(|t, x| if x[0] <= 0.0 { 1.2 - t } else { 0.1 }, 0.35);
        let a = solve(&base, Arc::clone(&mesh), 0.04, &SolveOptions::default()).unwrap();
        let b = solve(&raised, Arc::clone(&mesh), 0.04, &SolveOptions::default()).unwrap();
        for k in 0..=a.n_steps() {
            let la = a.level(k).unwrap();
            let lb = b.level(k).unwrap();
            for i in 0..la.len() {
                assert!(lb[i] >= la[i] - 1e-14, "level {k} node {i}");
            }
        }
    }

    #[test]
    fn stored_controls_line_up_with_interior() {
        let prob = transport_1d(|t, x| (1.0 - t) * (1.0 - x[0]), 0.0);
        let mesh = Arc::new(Mesh::build_interval_grid(0.0, 1.0, 10).unwrap());
        let opts = SolveOptions {
            store_controls: true,
            ..Default::default()
        };
        let sol = solve(&prob, mesh, 0.1, &opts).unwrap();
        let am = sol.argmin_controls(0).unwrap();
        assert_eq!(am.len(), sol.mesh().interior_vertices().len());
        assert!(am.iter().all(|&j| j < 3));
    }
}
