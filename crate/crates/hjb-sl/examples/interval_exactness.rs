//! The 1D transport problem with a discontinuous boundary charge: at nu = 0
//! the scheme reproduces the exact value function on the nodes, because the
//! optimal feet land on nodes and no interpolation error is created.
//!
//!     cargo run --release --example interval_exactness

use hjb_sl::problems::{builtin, BuiltinParams};
use hjb_sl::solver::{solve, Retention, SolveOptions};
use std::sync::Arc;

fn main() {
    let params = BuiltinParams {
        nu: 0.0,
        ..Default::default()
    };
    let spec = builtin("test1", &params).unwrap();
    let mesh = Arc::new(spec.build_mesh(0.01).unwrap());
    let opts = SolveOptions {
        retention: Retention::All,
        ..Default::default()
    };
    let sol = solve(&spec.problem, Arc::clone(&mesh), 0.01, &opts).unwrap();

    // Interior nodes at t = 0 must vanish exactly: the stay-put control
    // costs nothing and every exit is charged zero away from x = 0.
    let mut interior_max = 0.0f64;
    let v0 = sol.level(0).unwrap();
    for i in 0..mesh.n_vertices() {
        if !mesh.is_boundary(i) {
            interior_max = interior_max.max(v0[i].abs());
        }
    }
    println!("nu = 0, dx = dt = 0.01");
    println!("  max |V(0, x)| over interior nodes: {interior_max:.3e}");

    // The left boundary node carries the ramp 1 - t at every level.
    let mut ramp_max = 0.0f64;
    for k in 0..=sol.n_steps() {
        let t = k as f64 * sol.dt();
        ramp_max = ramp_max.max((sol.level(k).unwrap()[0] - (1.0 - t)).abs());
    }
    println!("  max |V(t, 0) - (1 - t)| over all levels:  {ramp_max:.3e}");

    // With viscosity the solution smooths out but stays inside [0, 1];
    // a non-monotone discretization would overshoot near the jump.
    for nu in [1.0, 0.1, 0.01] {
        let spec = builtin(
            "test1",
            &BuiltinParams {
                nu,
                ..Default::default()
            },
        )
        .unwrap();
        let mesh = Arc::new(spec.build_mesh(0.01).unwrap());
        let sol = solve(&spec.problem, mesh, 0.01, &SolveOptions::default()).unwrap();
        let v0 = sol.level(0).unwrap();
        let (lo, hi) = v0
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        println!("nu = {nu}: V(0, .) range [{lo:.6}, {hi:.6}]");
    }
}
