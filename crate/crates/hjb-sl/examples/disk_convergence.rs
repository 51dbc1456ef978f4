//! Refinement study on the disk: distance-to-boundary value function with a
//! degenerate (rank-one, rotating) diffusion. The exact solution is known,
//! so the study reports true errors and observed orders.
//!
//!     cargo run --release --example disk_convergence

use hjb_sl::analysis::refine_study;
use hjb_sl::problems::{builtin, BuiltinParams};
use hjb_sl::solver::SolveOptions;

fn main() {
    let spec = builtin("test2", &BuiltinParams::default()).unwrap();
    // dt = dx/2; four meshes from target spacing 0.5 down to 0.0625.
    let report = refine_study(&spec, 0.5, 4, 0.5, &SolveOptions::default()).unwrap();
    print!("{}", report.to_csv());
    for pair in report.rows.windows(2) {
        println!(
            "order {:.2} between dx = {} and dx = {}",
            pair[1].order.unwrap(),
            pair[0].dx,
            pair[1].dx
        );
    }
}
