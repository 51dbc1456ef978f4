//! Numerical consistency check of the one-step operator: plugging a smooth
//! exact solution into [phi - S(phi)] / tau must reproduce the generator up
//! to a residual that vanishes under simultaneous refinement dt = dx, but
//! stalls when dx is held fixed and only dt shrinks (the dx^2/dt term).
//!
//!     cargo run --release --example consistency_decay

use hjb_sl::analysis::{property_consistency_decay, property_consistency_negative_control};
use hjb_sl::problems::{builtin, BuiltinParams};

fn main() {
    let spec = builtin("test2", &BuiltinParams::default()).unwrap();

    let (decay, residuals) =
        property_consistency_decay(&spec, &[0.5, 0.25, 0.125, 0.0625]).unwrap();
    println!("{decay}");
    for pair in residuals.windows(2) {
        println!("  ratio {:.2}", pair[0] / pair[1]);
    }

    // The first halvings still improve (the sqrt(dt) diffusion terms dominate
    // at this dx); the tail must show the dx^2/dt blow-up taking over.
    let (control, _) = property_consistency_negative_control(
        &spec,
        0.25,
        &[0.125, 0.03125, 0.0078125, 0.001953125],
    )
    .unwrap();
    println!("{control}");
}
