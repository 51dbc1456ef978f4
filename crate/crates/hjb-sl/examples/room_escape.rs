//! Exit from a square room with two doors: solve the value function, then
//! drive noisy Euler trajectories by the projected negative gradient.
//! Walls charge a prohibitive exit cost, doors are cheap, and a circular
//! cost bump in the middle of the room pushes paths around it.
//!
//!     cargo run --release --example room_escape

use hjb_sl::problems::{builtin, BuiltinParams};
use hjb_sl::solver::{solve, SolveOptions};
use hjb_sl::trajectories::{simulate_batch, SimOptions, Terminal, ROOM_STARTS};
use std::sync::Arc;

fn main() {
    let spec = builtin("test4", &BuiltinParams::default()).unwrap();
    let dx = 2f64.sqrt() / 50.0;
    let mesh = Arc::new(spec.build_mesh(dx).unwrap());
    let sol = solve(&spec.problem, mesh, dx, &SolveOptions::default()).unwrap();
    println!(
        "solved on {} nodes, {} steps, sup|V| = {:.2}",
        sol.mesh().n_vertices(),
        sol.n_steps(),
        sol.sup_norm()
    );

    let starts: Vec<Vec<f64>> = ROOM_STARTS.iter().map(|p| p.to_vec()).collect();
    let records = simulate_batch(&sol, &spec, &starts, 0, &SimOptions::default()).unwrap();
    for rec in &records {
        match &rec.terminal {
            Terminal::Exited { time, point, label } => println!(
                "start {:?}: exited {label} at t = {time:.3}, point ({:.3}, {:.3}), cost {:.3}",
                rec.x0,
                point[0],
                point[1],
                rec.total_cost()
            ),
            Terminal::Horizon => {
                println!(
                    "start {:?}: still inside at the horizon, cost {:.3}",
                    rec.x0,
                    rec.total_cost()
                )
            }
        }
    }
}
