//! Built-in test problems and control-set constructors.
//!
//! Four problems cover the solver's regimes: a 1D transport with tunable
//! viscosity whose vanishing-viscosity limit is known in closed form, a
//! disk-domain problem with a degenerate diffusion and a smooth manufactured
//! solution, a first-order front problem on the square whose t=0 solution is
//! a pyramid distance function, and a two-door room-escape problem with
//! discontinuous boundary data and a spatially degenerate diffusion.

use crate::geometry::{Domain, Mesh};
use crate::operator::{ControlDescriptor, ControlSet, Problem};
use crate::Result;
use std::collections::BTreeMap;
use std::sync::Arc;

/// A smooth space-time function with analytic derivatives, used by the
/// consistency harness as the test function phi.
#[derive(Clone)]
pub struct SmoothField {
    pub value: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    pub time_deriv: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    /// Spatial gradient, written into a dim-length slice.
    pub grad: Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>,
    /// Spatial Hessian, row-major dim x dim into a 4-length slice.
    pub hess: Arc<dyn Fn(f64, &[f64], &mut [f64; 4]) + Send + Sync>,
}

/// How a characteristic spacing maps onto a mesh for this problem.
#[derive(Clone, Copy, Debug)]
enum MeshRule {
    Interval {
        lo: f64,
        hi: f64,
    },
    /// `dx_is_diagonal`: the quoted spacing is the cell diagonal (square
    /// cells), not the side; used where the reference resolution is stated
    /// as a maximum element diameter.
    Rect {
        lo: [f64; 2],
        hi: [f64; 2],
        dx_is_diagonal: bool,
    },
    /// Crossed uniform grid, spacing = cell side = max element diameter.
    /// The right mesh for solutions with kink lines of mixed orientation:
    /// a fixed-diagonal split lets the control search exploit the one-sided
    /// interpolation undershoot along kinks crossing its diagonal, which
    /// inflates E^inf by an order of magnitude.
    Cross {
        lo: [f64; 2],
        hi: [f64; 2],
    },
    Disk {
        radius: f64,
    },
}

/// A named problem with everything the verification harness needs besides
/// the PDE data itself.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    /// Parameters the instance was built with, for report provenance.
    pub params: BTreeMap<String, f64>,
    pub problem: Problem,
    /// Exact solution at t = 0 where known.
    pub exact_t0: Option<Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>>,
    /// Exact classical solution with derivatives where one exists.
    pub exact_field: Option<SmoothField>,
    /// sup of |Psi| over the parabolic boundary and of |f|; the stability
    /// bound checks use these. Analytic where stated, otherwise a sampled
    /// estimate inflated by 1%.
    pub psi_sup: f64,
    pub f_sup: f64,
    /// False when the boundary data is discontinuous, which the convergence
    /// theory does not cover; reports carry this flag.
    pub theory_covered: bool,
    /// Names the boundary segment a point belongs to, for exit statistics.
    pub boundary_label: Option<Arc<dyn Fn(&[f64]) -> &'static str + Send + Sync>>,
    mesh_rule: MeshRule,
}

impl ProblemSpec {
    /// Default mesh at characteristic spacing `dx` (lattice spacing for
    /// rectangles, target element diameter for disks and diagonal-quoted
    /// rectangles).
    pub fn build_mesh(&self, dx: f64) -> Result<Mesh> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(crate::Error::Config(format!(
                "mesh spacing {dx} must be positive"
            )));
        }
        match self.mesh_rule {
            MeshRule::Interval { lo, hi } => {
                let nx = (((hi - lo) / dx).round() as usize).max(1);
                Mesh::build_interval_grid(lo, hi, nx)
            }
            MeshRule::Rect {
                lo,
                hi,
                dx_is_diagonal,
            } => {
                let h = if dx_is_diagonal { dx / 2f64.sqrt() } else { dx };
                let nx = (((hi[0] - lo[0]) / h).round() as usize).max(1);
                let ny = (((hi[1] - lo[1]) / h).round() as usize).max(1);
                Mesh::build_rect_grid(lo, hi, nx, ny)
            }
            MeshRule::Cross { lo, hi } => {
                let nx = (((hi[0] - lo[0]) / dx).round() as usize).max(1);
                let ny = (((hi[1] - lo[1]) / dx).round() as usize).max(1);
                Mesh::build_cross_grid(lo, hi, nx, ny)
            }
            MeshRule::Disk { radius } => Mesh::build_disk_mesh(radius, dx),
        }
    }
}

/// Knobs for the built-in problems.
#[derive(Clone, Copy, Debug)]
pub struct BuiltinParams {
    /// Viscosity of the 1D transport problem (>= 0).
    pub nu: f64,
    /// Lattice points per dimension for box control sets.
    pub box_points: usize,
    /// Rings and angles-per-ring for ball control sets.
    pub rings: usize,
    pub angles: usize,
}

impl Default for BuiltinParams {
    fn default() -> Self {
        BuiltinParams {
            nu: 0.1,
            box_points: 21,
            rings: 8,
            angles: 24,
        }
    }
}

/// Tensor lattice / polar sample realizing a control-set descriptor.
pub fn control_grid(desc: &ControlDescriptor) -> Result<ControlSet> {
    let points = match desc {
        ControlDescriptor::Box { lo, hi, counts } => {
            if lo.len() != hi.len() || lo.len() != counts.len() || lo.is_empty() {
                return Err(crate::Error::Config(
                    "box descriptor dimensions disagree".into(),
                ));
            }
            if counts.iter().any(|&c| c == 0) {
                return Err(crate::Error::Config(
                    "box control counts must be positive".into(),
                ));
            }
            let dim = lo.len();
            let mut axes: Vec<Vec<f64>> = Vec::with_capacity(dim);
            for c in 0..dim {
                let n = counts[c];
                let axis = if n == 1 {
                    vec![0.5 * (lo[c] + hi[c])]
                } else {
                    (0..n)
                        .map(|i| {
                            if i == n - 1 {
                                hi[c]
                            } else {
                                lo[c] + i as f64 * (hi[c] - lo[c]) / (n - 1) as f64
                            }
                        })
                        .collect()
                };
                axes.push(axis);
            }
            let total: usize = counts.iter().product();
            let mut pts = Vec::with_capacity(total * dim);
            for flat in 0..total {
                let mut rem = flat;
                // Row-major: the last dimension varies fastest.
                for c in 0..dim {
                    let stride: usize = counts[c + 1..].iter().product();
                    pts.push(axes[c][(rem / stride) % counts[c]]);
                    rem %= stride.max(1);
                }
            }
            pts
        }
        ControlDescriptor::Disk {
            radius,
            rings,
            angles,
        } => {
            if *rings == 0 || *angles == 0 {
                return Err(crate::Error::Config(
                    "disk control counts must be positive".into(),
                ));
            }
            let mut pts = vec![0.0, 0.0];
            for j in 1..=*rings {
                let r = radius * j as f64 / *rings as f64;
                for q in 0..*angles {
                    let th = 2.0 * std::f64::consts::PI * q as f64 / *angles as f64;
                    pts.push(r * th.cos());
                    pts.push(r * th.sin());
                }
            }
            pts
        }
        ControlDescriptor::Explicit => {
            return Err(crate::Error::Config(
                "explicit descriptor carries no grid".into(),
            ))
        }
    };
    let dim = match desc {
        ControlDescriptor::Box { lo, .. } => lo.len(),
        _ => 2,
    };
    Ok(ControlSet::from_parts(points, dim, desc.clone()))
}

pub fn builtin(name: &str, params: &BuiltinParams) -> Result<ProblemSpec> {
    match name {
        "test1" => test1(params),
        "test2" => test2(params),
        "test3" => test3(params),
        "test4" => test4(params),
        other => Err(crate::Error::Config(format!(
            "unknown problem {other:?} (expected test1, test2, test3 or test4)"
        ))),
    }
}

/// 1D transport with viscosity nu on (0,1): the value function of steering
/// toward the left endpoint, whose payoff decays in time. At nu = 0 the
/// exact solution is 1-t at x = 0 and 0 elsewhere.
fn test1(params: &BuiltinParams) -> Result<ProblemSpec> {
    if !(params.nu >= 0.0 && params.nu.is_finite()) {
        return Err(crate::Error::Config(format!(
            "nu = {} must be nonnegative",
            params.nu
        )));
    }
    let nu = params.nu;
    let sigma = (2.0 * nu).sqrt();
    let controls = control_grid(&ControlDescriptor::Box {
        lo: vec![-1.0],
        hi: vec![1.0],
        counts: vec![params.box_points],
    })?;
    let problem = Problem {
        domain: Domain::Interval { lo: 0.0, hi: 1.0 },
        horizon: 1.0,
        p: 1,
        drift: Arc::new(|_, _, a: &[f64], out: &mut [f64]| out[0] = a[0]),
        diffusion: Arc::new(move |_, _, _, _, out: &mut [f64]| out[0] = sigma),
        cost: Arc::new(|_, _, _| 0.0),
        boundary: Arc::new(|t, x: &[f64]| if x[0] <= 0.0 { 1.0 - t } else { 0.0 }),
        controls,
        autonomous: true,
        autonomous_cost: true,
    };
    let exact_t0: Option<Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>> = if nu == 0.0 {
        Some(Arc::new(|x: &[f64]| if x[0] <= 0.0 { 1.0 } else { 0.0 }))
    } else {
        None
    };
    Ok(ProblemSpec {
        name: "test1".into(),
        params: BTreeMap::from([
            ("nu".to_string(), nu),
            ("control_points".to_string(), params.box_points as f64),
        ]),
        problem,
        exact_t0,
        exact_field: None,
        psi_sup: 1.0,
        f_sup: 0.0,
        theory_covered: true,
        boundary_label: None,
        mesh_rule: MeshRule::Interval { lo: 0.0, hi: 1.0 },
    })
}

/// Disk-domain problem with a rank-one diffusion that degenerates along a
/// rotating direction; the running cost is manufactured so that
/// (t+1/2) sin(x1) sin(x2) solves the equation exactly.
fn test2(params: &BuiltinParams) -> Result<ProblemSpec> {
    let controls = control_grid(&ControlDescriptor::Disk {
        radius: 1.0,
        rings: params.rings,
        angles: params.angles,
    })?;
    let running = |t: f64, x: &[f64]| -> f64 {
        let (s1, c1) = x[0].sin_cos();
        let (s2, c2) = x[1].sin_cos();
        let (s12, c12) = (x[0] + x[1]).sin_cos();
        (t - 0.5) * s1 * s2
            + (t + 0.5)
                * ((c1 * c1 * s2 * s2 + s1 * s1 * c2 * c2).sqrt() - 2.0 * s12 * c12 * c1 * c2)
    };
    let problem = Problem {
        domain: Domain::Disk {
            center: [0.0, 0.0],
            radius: 1.0,
        },
        horizon: 1.0,
        p: 2,
        drift: Arc::new(|_, _, a: &[f64], out: &mut [f64]| out.copy_from_slice(a)),
        diffusion: Arc::new(|_, x: &[f64], _, l, out: &mut [f64]| {
            if l == 0 {
                let (s, c) = (x[0] + x[1]).sin_cos();
                out[0] = 2f64.sqrt() * s;
                out[1] = 2f64.sqrt() * c;
            } else {
                out[0] = 0.0;
                out[1] = 0.0;
            }
        }),
        cost: Arc::new(move |t, x: &[f64], _| running(t, x)),
        boundary: Arc::new(|t, x: &[f64]| (t + 0.5) * x[0].sin() * x[1].sin()),
        controls,
        autonomous: true,
        autonomous_cost: false,
    };
    // sup of |sin(x1) sin(x2)| over the closed disk sits on the boundary
    // diagonal; |f| is sampled (it is affine in t, so endpoints suffice).
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let psi_sup = 1.5 * r.sin() * r.sin();
    let mut f_sup = 0.0f64;
    for i in 0..=200 {
        for q in 0..512 {
            let rr = i as f64 / 200.0;
            let th = 2.0 * std::f64::consts::PI * q as f64 / 512.0;
            let x = [rr * th.cos(), rr * th.sin()];
            f_sup = f_sup
                .max(running(0.0, &x).abs())
                .max(running(1.0, &x).abs());
        }
    }
    f_sup *= 1.01;

    let value = |t: f64, x: &[f64]| (t + 0.5) * x[0].sin() * x[1].sin();
    let exact_field = SmoothField {
        value: Arc::new(value),
        time_deriv: Arc::new(|_, x: &[f64]| x[0].sin() * x[1].sin()),
        grad: Arc::new(|t, x: &[f64], out: &mut [f64]| {
            out[0] = (t + 0.5) * x[0].cos() * x[1].sin();
            out[1] = (t + 0.5) * x[0].sin() * x[1].cos();
        }),
        hess: Arc::new(|t, x: &[f64], out: &mut [f64; 4]| {
            let w = t + 0.5;
            out[0] = -w * x[0].sin() * x[1].sin();
            out[1] = w * x[0].cos() * x[1].cos();
            out[2] = out[1];
            out[3] = out[0];
        }),
    };
    Ok(ProblemSpec {
        name: "test2".into(),
        params: BTreeMap::from([
            ("control_rings".to_string(), params.rings as f64),
            ("control_angles".to_string(), params.angles as f64),
        ]),
        problem,
        exact_t0: Some(Arc::new(move |x: &[f64]| value(0.0, x))),
        exact_field: Some(exact_field),
        psi_sup,
        f_sup,
        theory_covered: true,
        boundary_label: None,
        mesh_rule: MeshRule::Disk { radius: 1.0 },
    })
}

/// The pyramid distance function on the unit square, rescaled per axis.
pub fn pyramid(x: &[f64]) -> f64 {
    x[0].min(1.0 - x[0]).min(2.0 * x[1]).min(2.0 * (1.0 - x[1]))
}

/// First-order front problem on the unit square: no diffusion, a quadratic
/// control penalty, and terminal data -2 pyramid; by t = 0 the solution has
/// relaxed onto the pyramid itself.
fn test3(params: &BuiltinParams) -> Result<ProblemSpec> {
    let controls = control_grid(&ControlDescriptor::Box {
        lo: vec![-2.0, -2.0],
        hi: vec![2.0, 2.0],
        counts: vec![params.box_points, params.box_points],
    })?;
    let horizon = 1.5;
    let problem = Problem {
        domain: Domain::Rectangle {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        },
        horizon,
        p: 1,
        drift: Arc::new(|_, _, a: &[f64], out: &mut [f64]| out.copy_from_slice(a)),
        diffusion: Arc::new(|_, _, _, _, out: &mut [f64]| {
            out[0] = 0.0;
            out[1] = 0.0;
        }),
        cost: Arc::new(|_, _, a: &[f64]| 1.0 + 0.25 * a[0] * a[0] + a[1] * a[1]),
        boundary: Arc::new(move |t, x: &[f64]| if t >= horizon { -2.0 * pyramid(x) } else { 0.0 }),
        controls,
        autonomous: true,
        autonomous_cost: true,
    };
    Ok(ProblemSpec {
        name: "test3".into(),
        params: BTreeMap::from([("control_points".to_string(), params.box_points as f64)]),
        problem,
        exact_t0: Some(Arc::new(pyramid)),
        exact_field: None,
        psi_sup: 1.0,
        f_sup: 6.0,
        theory_covered: true,
        boundary_label: None,
        mesh_rule: MeshRule::Cross {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        },
    })
}

const DOOR_HALF_WIDTH: f64 = 0.2;

/// Room with two doors: running cost rewards exiting fast, walls charge
/// 100, the left door is free and the right door charges 0.2. A rank-one
/// diffusion acts horizontally inside the central disk of radius 0.4.
/// The data is discontinuous where doors meet walls.
fn test4(params: &BuiltinParams) -> Result<ProblemSpec> {
    let controls = control_grid(&ControlDescriptor::Disk {
        radius: 1.0,
        rings: params.rings,
        angles: params.angles,
    })?;
    let horizon = 5.0;
    let label = |x: &[f64]| -> &'static str {
        // Doors are closed sets: the seam points belong to the doors.
        if x[0] <= -1.0 + 1e-9 && x[1].abs() <= DOOR_HALF_WIDTH {
            "door_left"
        } else if x[0] >= 1.0 - 1e-9 && x[1].abs() <= DOOR_HALF_WIDTH {
            "door_right"
        } else {
            "wall"
        }
    };
    let problem = Problem {
        domain: Domain::Rectangle {
            lo: [-1.0, -0.5],
            hi: [1.0, 0.5],
        },
        horizon,
        p: 2,
        drift: Arc::new(|_, _, a: &[f64], out: &mut [f64]| out.copy_from_slice(a)),
        diffusion: Arc::new(|_, x: &[f64], _, l, out: &mut [f64]| {
            if l == 0 {
                out[0] = 10.0 * (0.16 - x[0] * x[0] - x[1] * x[1]).max(0.0);
                out[1] = 0.0;
            } else {
                out[0] = 0.0;
                out[1] = 0.0;
            }
        }),
        cost: Arc::new(|_, _, a: &[f64]| 0.5 * (a[0] * a[0] + a[1] * a[1]) + 40.0),
        boundary: Arc::new(move |t, x: &[f64]| {
            if t >= horizon {
                0.0
            } else {
                match label(x) {
                    "door_left" => 0.0,
                    "door_right" => 0.2,
                    _ => 100.0,
                }
            }
        }),
        controls,
        autonomous: true,
        autonomous_cost: true,
    };
    Ok(ProblemSpec {
        name: "test4".into(),
        params: BTreeMap::from([
            ("control_rings".to_string(), params.rings as f64),
            ("control_angles".to_string(), params.angles as f64),
        ]),
        problem,
        exact_t0: None,
        exact_field: None,
        psi_sup: 100.0,
        f_sup: 40.5,
        theory_covered: false,
        boundary_label: Some(Arc::new(label)),
        mesh_rule: MeshRule::Rect {
            lo: [-1.0, -0.5],
            hi: [1.0, 0.5],
            dx_is_diagonal: true,
        },
    })
}
