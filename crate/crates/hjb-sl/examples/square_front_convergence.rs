//! First-order front propagation on the unit square (zero diffusion,
//! anisotropic quadratic Hamiltonian). Runs the refinement study at the two
//! hyperbolic couplings dt = dx and dt = 2 dx; both converge at order one.
//!
//!     cargo run --release --example square_front_convergence

use hjb_sl::analysis::refine_study;
use hjb_sl::problems::{builtin, BuiltinParams};
use hjb_sl::solver::SolveOptions;

fn main() {
    let spec = builtin("test3", &BuiltinParams::default()).unwrap();
    for cfl in [1.0, 2.0] {
        println!("dt = {cfl} * dx:");
        let report = refine_study(&spec, 0.04, 4, cfl, &SolveOptions::default()).unwrap();
        print!("{}", report.to_csv());
    }
}
