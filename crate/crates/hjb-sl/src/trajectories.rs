//! Feedback-controlled Euler simulation of state trajectories driven by a
//! computed value function.
//!
//! Controls are read off the solution as Proj(-D_x v) with the gradient
//! taken by finite differences at the mesh resolution (optionally the
//! stored argmin controls instead), and the state follows an
//! Euler-Maruyama step at half the solver's time step by default.
//! Randomness comes from ChaCha8 seeded per trajectory, with normals via
//! Marsaglia's polar method; one draw per diffusion column per step, in
//! column order, so records are reproducible bit for bit across platforms
//! and thread counts.

use crate::operator::Problem;
use crate::problems::ProblemSpec;
use crate::solver::Solution;
use crate::{fmt_f64, Error, Result};
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

/// Starting points used by the room-escape demonstrations.
pub const ROOM_STARTS: [[f64; 2]; 6] = [
    [-0.1, -0.3],
    [-0.1, 0.1],
    [-0.1, 0.3],
    [0.2, -0.3],
    [0.3, 0.2],
    [0.2, 0.3],
];

/// Clamp a vector onto the closed unit ball, in place.
pub fn project_unit_ball(z: &mut [f64]) {
    let n2: f64 = z.iter().map(|c| c * c).sum();
    if n2 > 1.0 {
        let inv = 1.0 / n2.sqrt();
        for c in z {
            *c *= inv;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feedback {
    /// Proj onto the unit ball of -D_x v, v differenced at mesh resolution.
    Gradient,
    /// Nearest-vertex argmin control stored during the solve.
    ArgminControl,
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub seed: u64,
    /// Euler substep; defaults to half the solver's time step.
    pub substep: Option<f64>,
    /// Skip the noise term entirely; no randomness is consumed, so the
    /// record does not depend on the seed.
    pub sigma_off: bool,
    pub feedback: Feedback,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            seed: 0,
            substep: None,
            sigma_off: false,
            feedback: Feedback::Gradient,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Terminal {
    Exited {
        time: f64,
        point: Vec<f64>,
        label: String,
    },
    Horizon,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub x0: Vec<f64>,
    pub seed: u64,
    pub substep: f64,
    /// (t, position) samples including the start and the final point; all
    /// positions are strictly inside the domain except the last one when
    /// the trajectory exited.
    pub path: Vec<(f64, Vec<f64>)>,
    pub terminal: Terminal,
    /// Accumulated running cost along the realized control.
    pub running_cost: f64,
    /// Boundary data charged at the exit point, or at the horizon.
    pub terminal_charge: f64,
}

impl TrajectoryRecord {
    pub fn total_cost(&self) -> f64 {
        self.running_cost + self.terminal_charge
    }

    /// One sample per row, trailing status as a comment line.
    pub fn to_csv(&self) -> String {
        let dim = self.x0.len();
        let mut out = String::from(if dim == 1 { "t,x1\n" } else { "t,x1,x2\n" });
        for (t, x) in &self.path {
            out.push_str(&fmt_f64(*t));
            for c in x {
                out.push(',');
                out.push_str(&fmt_f64(*c));
            }
            out.push('\n');
        }
        match &self.terminal {
            Terminal::Exited { time, point, label } => {
                let pt = point
                    .iter()
                    .map(|c| fmt_f64(*c))
                    .collect::<Vec<_>>()
                    .join(" ");
                out.push_str(&format!(
                    "# status=exited label={label} t_exit={} x_exit={pt} running_cost={} terminal_charge={}\n",
                    fmt_f64(*time),
                    fmt_f64(self.running_cost),
                    fmt_f64(self.terminal_charge)
                ));
            }
            Terminal::Horizon => {
                out.push_str(&format!(
                    "# status=horizon running_cost={} terminal_charge={}\n",
                    fmt_f64(self.running_cost),
                    fmt_f64(self.terminal_charge)
                ));
            }
        }
        out
    }
}

/// ChaCha8-backed standard normal source (Marsaglia polar, spare cached).
struct GaussianSource {
    rng: rand_chacha::ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    fn new(seed: u64) -> Self {
        GaussianSource {
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * m);
                return u * m;
            }
        }
    }
}

/// Central differences where the stencil fits, one-sided next to the
/// boundary, halving the step a few times before giving up.
fn gradient_with_fallback(sol: &Solution, t: f64, x: &[f64], h0: f64) -> Result<Vec<f64>> {
    let domain = sol.mesh().domain().clone();
    let dim = domain.dim();
    let mut h = h0;
    for _ in 0..4 {
        match sol.gradient(t, x, h) {
            Ok(g) => return Ok(g),
            Err(Error::StencilOutside { .. }) => {
                let v0 = sol.evaluate(t, x)?;
                let mut g = vec![0.0; dim];
                let mut ok = true;
                let mut probe = x.to_vec();
                for c in 0..dim {
                    probe.copy_from_slice(x);
                    probe[c] = x[c] + h;
                    if domain.inside(&probe) {
                        g[c] = (sol.evaluate(t, &probe)? - v0) / h;
                        continue;
                    }
                    probe[c] = x[c] - h;
                    if domain.inside(&probe) {
                        g[c] = (v0 - sol.evaluate(t, &probe)?) / h;
                        continue;
                    }
                    ok = false;
                    break;
                }
                if ok {
                    return Ok(g);
                }
                h *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::StencilOutside { point: x.to_vec() })
}

fn argmin_feedback(sol: &Solution, problem: &Problem, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let k = sol.level_index_of(t)?.min(sol.n_steps() - 1);
    let argmins = sol.argmin_controls(k)?;
    let hit = sol.mesh().locate(x)?;
    let verts = sol.mesh().element_vertices(hit.element);
    let mut best = 0;
    for c in 1..3 {
        if hit.bary[c] > hit.bary[best] {
            best = c;
        }
    }
    let j = argmins[verts[best] as usize] as usize;
    Ok(problem.controls.point(j).to_vec())
}

/// Run one feedback trajectory from `x0` at t = 0 until it leaves the
/// domain or reaches the horizon.
pub fn simulate(
    sol: &Solution,
    spec: &ProblemSpec,
    x0: &[f64],
    opts: &SimOptions,
) -> Result<TrajectoryRecord> {
    let problem = &spec.problem;
    let domain = &problem.domain;
    let dim = domain.dim();
    if x0.len() != dim {
        return Err(Error::Config(format!(
            "start point has {} coordinates, domain is {dim}-dimensional",
            x0.len()
        )));
    }
    if !domain.inside(x0) {
        return Err(Error::Config(format!(
            "start point {x0:?} is not strictly inside the domain"
        )));
    }
    let horizon = sol.horizon();
    let h = match opts.substep {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::Config(format!("substep {s} must be positive"))),
        None => 0.5 * sol.dt(),
    };
    let grad_step = sol.mesh().dx();
    let p = problem.p;
    let mut gauss = GaussianSource::new(opts.seed);

    let mut y = x0.to_vec();
    let mut path = vec![(0.0, y.clone())];
    let mut running = 0.0;
    let mut a = vec![0.0; dim];
    let mut b = [0.0; 2];
    let mut sig = [0.0; 2];
    let mut k = 0u64;
    loop {
        let s = k as f64 * h;
        let h_step = (horizon - s).min(h);
        if h_step <= 1e-12 * horizon.max(1.0) {
            let terminal_charge = problem.eval_boundary(horizon, &y);
            return Ok(TrajectoryRecord {
                x0: x0.to_vec(),
                seed: opts.seed,
                substep: h,
                path,
                terminal: Terminal::Horizon,
                running_cost: running,
                terminal_charge,
            });
        }

        match opts.feedback {
            Feedback::Gradient => {
                let g = gradient_with_fallback(sol, s, &y, grad_step)?;
                for c in 0..dim {
                    a[c] = -g[c];
                }
                project_unit_ball(&mut a);
            }
            Feedback::ArgminControl => a = argmin_feedback(sol, problem, s, &y)?,
        }
        let f = problem.eval_cost(s, &y, &a);
        problem.eval_drift(s, &y, &a, &mut b[..dim]);
        let mut ynew = y.clone();
        for c in 0..dim {
            ynew[c] += h_step * b[c];
        }
        if !opts.sigma_off {
            // One scalar increment per diffusion column, drawn in column
            // order even where sigma vanishes, so the stream position only
            // depends on the step count.
            let root_h = h_step.sqrt();
            for l in 0..p {
                let xi = gauss.normal();
                problem.eval_diffusion(s, &y, &a, l, &mut sig[..dim]);
                for c in 0..dim {
                    ynew[c] += sig[c] * root_h * xi;
                }
            }
        }

        if !domain.inside(&ynew) {
            // The step crossed the boundary: domains are convex, so the
            // segment [y, ynew] crosses exactly once; bisect on membership.
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            let mut probe = y.clone();
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                for c in 0..dim {
                    probe[c] = y[c] + mid * (ynew[c] - y[c]);
                }
                if domain.inside(&probe) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let theta = 0.5 * (lo + hi);
            for c in 0..dim {
                probe[c] = y[c] + theta * (ynew[c] - y[c]);
            }
            let snapped = domain.project_boundary(&probe);
            let exit_point = snapped[..dim].to_vec();
            let exit_time = s + theta * h_step;
            running += theta * h_step * f;
            let terminal_charge = problem.eval_boundary(exit_time, &exit_point);
            let label = match &spec.boundary_label {
                Some(lbl) => lbl(&exit_point).to_string(),
                None => "boundary".to_string(),
            };
            path.push((exit_time, exit_point.clone()));
            return Ok(TrajectoryRecord {
                x0: x0.to_vec(),
                seed: opts.seed,
                substep: h,
                path,
                terminal: Terminal::Exited {
                    time: exit_time,
                    point: exit_point,
                    label,
                },
                running_cost: running,
                terminal_charge,
            });
        }

        running += h_step * f;
        y = ynew;
        k += 1;
        path.push((k as f64 * h, y.clone()));
    }
}

/// Simulate one trajectory per start point, seeded `base_seed + index`,
/// in parallel; the output order matches the input order.
pub fn simulate_batch(
    sol: &Solution,
    spec: &ProblemSpec,
    starts: &[Vec<f64>],
    base_seed: u64,
    opts: &SimOptions,
) -> Result<Vec<TrajectoryRecord>> {
    starts
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let opts = SimOptions {
                seed: base_seed.wrapping_add(i as u64),
                ..opts.clone()
            };
            simulate(sol, spec, x0, &opts)
        })
        .collect()
}

/// Aggregate exit statistics over a batch, grouped by boundary label.
pub fn batch_summary_json(records: &[TrajectoryRecord]) -> String {
    use std::collections::BTreeMap;
    #[derive(Default)]
    struct Agg {
        count: usize,
        time_sum: f64,
        cost_sum: f64,
    }
    let mut by_label: BTreeMap<&str, Agg> = BTreeMap::new();
    let mut horizon_count = 0usize;
    for r in records {
        match &r.terminal {
            Terminal::Exited { time, label, .. } => {
                let agg = by_label.entry(label).or_default();
                agg.count += 1;
                agg.time_sum += time;
                agg.cost_sum += r.total_cost();
            }
            Terminal::Horizon => horizon_count += 1,
        }
    }
    let exits: serde_json::Map<String, serde_json::Value> = by_label
        .iter()
        .map(|(label, agg)| {
            (
                label.to_string(),
                serde_json::json!({
                    "count": agg.count,
                    "mean_exit_time": agg.time_sum / agg.count as f64,
                    "mean_total_cost": agg.cost_sum / agg.count as f64,
                }),
            )
        })
        .collect();
    let recs: Vec<serde_json::Value> = records
        .iter()
        .map(|r| {
            let mut obj = serde_json::json!({
                "x0": r.x0,
                "seed": r.seed,
                "substep": r.substep,
                "steps": r.path.len() - 1,
                "running_cost": r.running_cost,
                "terminal_charge": r.terminal_charge,
                "total_cost": r.total_cost(),
            });
            match &r.terminal {
                Terminal::Exited { time, point, label } => {
                    obj["status"] = "exited".into();
                    obj["label"] = label.as_str().into();
                    obj["exit_time"] = (*time).into();
                    obj["exit_point"] = serde_json::json!(point);
                }
                Terminal::Horizon => obj["status"] = "horizon".into(),
            }
            obj
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "n": records.len(),
        "horizon_reached": horizon_count,
        "exits": exits,
        "records": recs,
    }))
    .expect("summary serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{builtin, BuiltinParams};
    use crate::solver::{solve, SolveOptions};
    use std::sync::Arc;

    #[test]
    fn ball_projection_cases() {
        let mut z = [0.3, -0.4];
        project_unit_ball(&mut z);
        assert_eq!(z, [0.3, -0.4]);
        let mut z = [2.0, 0.0];
        project_unit_ball(&mut z);
        assert_eq!(z, [1.0, 0.0]);
        let mut z = [0.0, 0.0];
        project_unit_ball(&mut z);
        assert_eq!(z, [0.0, 0.0]);
        let mut z = [3.0, -4.0];
        project_unit_ball(&mut z);
        assert!((z[0] - 0.6).abs() <= 1e-15 && (z[1] + 0.8).abs() <= 1e-15);
    }

    #[test]
    fn gaussian_source_moments() {
        let mut g = GaussianSource::new(2024);
        let n = 100_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let z = g.normal();
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        // 4-sigma bands for the sample mean and variance of 1e5 draws.
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!(
            (var - 1.0).abs() <= 4.0 * (2.0 / n as f64).sqrt(),
            "var {var}"
        );
    }

    fn transport_solution() -> (crate::problems::ProblemSpec, Solution) {
        let spec = builtin("test1", &BuiltinParams::default()).unwrap();
        let mesh = Arc::new(spec.build_mesh(0.05).unwrap());
        let sol = solve(&spec.problem, mesh, 0.05, &SolveOptions::default()).unwrap();
        (spec, sol)
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let (spec, sol) = transport_solution();
        let opts = SimOptions {
            seed: 9,
            ..Default::default()
        };
        let r1 = simulate(&sol, &spec, &[0.5], &opts).unwrap();
        let r2 = simulate(&sol, &spec, &[0.5], &opts).unwrap();
        assert_eq!(r1.path.len(), r2.path.len());
        for (a, b) in r1.path.iter().zip(&r2.path) {
            assert_eq!(a.0.to_bits(), b.0.to_bits());
            assert_eq!(a.1[0].to_bits(), b.1[0].to_bits());
        }
        assert_eq!(r1.terminal, r2.terminal);
        assert_eq!(r1.running_cost.to_bits(), r2.running_cost.to_bits());

        let r3 = simulate(&sol, &spec, &[0.5], &SimOptions { seed: 10, ..opts }).unwrap();
        let same = r1.path.len() == r3.path.len()
            && r1
                .path
                .iter()
                .zip(&r3.path)
                .all(|(a, b)| a.1[0].to_bits() == b.1[0].to_bits());
        assert!(!same, "different seeds produced identical noisy paths");
    }

    #[test]
    fn sigma_off_ignores_the_seed() {
        let (spec, sol) = transport_solution();
        let base = SimOptions {
            sigma_off: true,
            ..Default::default()
        };
        let r1 = simulate(
            &sol,
            &spec,
            &[0.5],
            &SimOptions {
                seed: 1,
                ..base.clone()
            },
        )
        .unwrap();
        let r2 = simulate(&sol, &spec, &[0.5], &SimOptions { seed: 2, ..base }).unwrap();
        assert_eq!(r1.path.len(), r2.path.len());
        for (a, b) in r1.path.iter().zip(&r2.path) {
            assert_eq!(a.1[0].to_bits(), b.1[0].to_bits());
        }
    }

    #[test]
    fn noisy_exit_lands_on_the_boundary() {
        let (spec, sol) = transport_solution();
        let mut exits = 0;
        for seed in 0..8u64 {
            let r = simulate(
                &sol,
                &spec,
                &[0.6],
                &SimOptions {
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            for (i, (_, x)) in r.path.iter().enumerate() {
                let inside = spec.problem.domain.inside(x);
                if i + 1 < r.path.len() {
                    assert!(inside, "intermediate point {x:?} not strictly inside");
                }
            }
            if let Terminal::Exited { point, time, .. } = &r.terminal {
                exits += 1;
                let on_wall = point[0].min(1.0 - point[0]).abs();
                assert!(on_wall <= 1e-10, "exit point {point:?} off the boundary");
                assert!(*time > 0.0 && *time < sol.horizon());
                assert_eq!(r.path.last().unwrap().1[0], point[0]);
            }
        }
        assert!(
            exits >= 1,
            "no exits over 8 seeds; feedback or noise is off"
        );
    }

    #[test]
    fn deterministic_descent_follows_negative_gradient() {
        // First-order front problem: sigma is identically zero, v(0,.) is
        // the pyramid distance, so from (0.3, 0.25) the feedback drives the
        // state straight toward the nearest wall x = 0 at unit speed.
        let spec = builtin("test3", &BuiltinParams::default()).unwrap();
        let mesh = Arc::new(spec.build_mesh(0.125).unwrap());
        let sol = solve(&spec.problem, mesh, 0.125, &SolveOptions::default()).unwrap();
        let opts = SimOptions {
            sigma_off: true,
            ..Default::default()
        };
        let r = simulate(&sol, &spec, &[0.3, 0.25], &opts).unwrap();
        let h = r.substep;
        assert_eq!(h, 0.0625);
        match &r.terminal {
            Terminal::Exited { point, label, .. } => {
                assert!(
                    point[0].abs() <= 1e-10,
                    "should exit through x=0, got {point:?}"
                );
                assert!((point[1] - 0.25).abs() <= 0.1, "drifted too far: {point:?}");
                assert_eq!(label, "boundary");
            }
            Terminal::Horizon => panic!("descent failed to exit"),
        }
        // Steps advance by the fixed substep and move at (near) unit speed.
        for w in r.path.windows(2).take(r.path.len() - 2) {
            let dt = w[1].0 - w[0].0;
            assert!((dt - h).abs() <= 1e-12);
            let step = ((w[1].1[0] - w[0].1[0]).powi(2) + (w[1].1[1] - w[0].1[1]).powi(2)).sqrt();
            assert!(step <= h * 1.05, "step length {step} exceeds h|a|max");
            assert!(
                step >= h * 0.5,
                "step length {step} too short for a descent"
            );
        }
        // Strictly toward the wall.
        for w in r.path.windows(2) {
            assert!(w[1].1[0] < w[0].1[0] + 1e-12);
        }
    }

    #[test]
    fn batch_summary_counts_labels() {
        let (spec, sol) = transport_solution();
        let starts: Vec<Vec<f64>> = vec![vec![0.4], vec![0.5], vec![0.6]];
        let recs = simulate_batch(&sol, &spec, &starts, 100, &SimOptions::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].seed, 101);
        // Batch equals the same trajectories run one by one.
        let solo = simulate(
            &sol,
            &spec,
            &[0.5],
            &SimOptions {
                seed: 101,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(solo.path.len(), recs[1].path.len());
        for (a, b) in solo.path.iter().zip(&recs[1].path) {
            assert_eq!(a.1[0].to_bits(), b.1[0].to_bits());
        }
        let summary: serde_json::Value = serde_json::from_str(&batch_summary_json(&recs)).unwrap();
        assert_eq!(summary["n"], 3);
        let exited: usize = summary["exits"]
            .as_object()
            .unwrap()
            .values()
            .map(|v| v["count"].as_u64().unwrap() as usize)
            .sum();
        assert_eq!(
            exited + summary["horizon_reached"].as_u64().unwrap() as usize,
            3
        );
        assert_eq!(summary["records"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn csv_has_header_rows_and_status() {
        let (spec, sol) = transport_solution();
        let r = simulate(&sol, &spec, &[0.5], &SimOptions::default()).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,x1");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0.0000000000000000e0,"));
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("# status="), "missing status line: {last}");
        assert_eq!(csv.lines().count(), r.path.len() + 2);
    }

    #[test]
    fn argmin_feedback_uses_stored_controls() {
        let spec = builtin("test1", &BuiltinParams::default()).unwrap();
        let mesh = Arc::new(spec.build_mesh(0.05).unwrap());
        let no_controls =
            solve(&spec.problem, mesh.clone(), 0.05, &SolveOptions::default()).unwrap();
        let opts = SimOptions {
            feedback: Feedback::ArgminControl,
            ..Default::default()
        };
        assert!(simulate(&no_controls, &spec, &[0.5], &opts).is_err());

        let with_controls = solve(
            &spec.problem,
            mesh,
            0.05,
            &SolveOptions {
                store_controls: true,
                ..Default::default()
            },
        )
        .unwrap();
        let r = simulate(&with_controls, &spec, &[0.5], &opts).unwrap();
        assert!(r.path.len() > 1);
    }

    #[test]
    fn rejects_bad_start_points() {
        let (spec, sol) = transport_solution();
        assert!(simulate(&sol, &spec, &[0.0], &SimOptions::default()).is_err());
        assert!(simulate(&sol, &spec, &[1.2], &SimOptions::default()).is_err());
        assert!(simulate(&sol, &spec, &[0.2, 0.2], &SimOptions::default()).is_err());
    }
}
