//! Assembling a problem from scratch instead of using a built-in: plain
//! Brownian motion on a square, no control, no running cost, and a harmonic
//! boundary charge g(x) = x1^2 - x2^2. Then E[g(X_exit)] = g(x) exactly (g
//! composed with the motion is a martingale), so the solved field must match
//! g up to discretization error at every node and every time.
//!
//!     cargo run --release --example custom_problem

use hjb_sl::geometry::{Domain, Mesh};
use hjb_sl::operator::{ControlSet, Problem};
use hjb_sl::solver::{solve, Retention, SolveOptions};
use std::sync::Arc;

fn g(x: &[f64]) -> f64 {
    x[0] * x[0] - x[1] * x[1]
}

fn main() {
    let root2 = 2f64.sqrt();
    let problem = Problem {
        domain: Domain::Rectangle {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        },
        horizon: 0.4,
        p: 2,
        drift: Arc::new(|_t, _x, _a, out: &mut [f64]| out.fill(0.0)),
        // Columns sqrt(2) e1 and sqrt(2) e2, so 1/2 sigma sigma^T = I and
        // the generator is the Laplacian.
        diffusion: Arc::new(move |_t, _x, _a, l, out: &mut [f64]| {
            out.fill(0.0);
            out[l] = root2;
        }),
        cost: Arc::new(|_t, _x, _a| 0.0),
        boundary: Arc::new(|_t, x| g(x)),
        controls: ControlSet::explicit(vec![0.0, 0.0], 2).unwrap(),
        autonomous: true,
        autonomous_cost: true,
    };

    let mesh = Arc::new(Mesh::build_rect_grid([0.0, 0.0], [1.0, 1.0], 40, 40).unwrap());
    let opts = SolveOptions {
        retention: Retention::All,
        ..Default::default()
    };
    let sol = solve(&problem, Arc::clone(&mesh), 0.0125, &opts).unwrap();

    let mut worst = 0.0f64;
    for k in 0..=sol.n_steps() {
        let vals = sol.level(k).unwrap();
        for i in 0..mesh.n_vertices() {
            worst = worst.max((vals[i] - g(mesh.vertex(i))).abs());
        }
    }
    println!(
        "harmonic martingale check on {} nodes, {} levels: max |V - g| = {worst:.3e}",
        mesh.n_vertices(),
        sol.n_steps() + 1
    );

    // Space-time evaluation off the nodes goes through the interpolant.
    let v = sol.evaluate(0.13, &[0.481, 0.307]).unwrap();
    println!(
        "V(0.13, (0.481, 0.307)) = {v:.6}, g = {:.6}",
        g(&[0.481, 0.307])
    );
}
