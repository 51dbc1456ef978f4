//! Semi-Lagrangian solver for time-dependent, possibly degenerate,
//! second-order Hamilton-Jacobi-Bellman equations
//!
//! ```text
//!     -dv/dt + max_a { -1/2 Tr[sigma sigma^T(t,x,a) D^2v] - b(t,x,a).Dv - f(t,x,a) } = 0
//!     v = psi     on the parabolic boundary ({T} x closure(Omega)) U ([0,T) x dOmega)
//! ```
//!
//! on a bounded convex domain, discretized backward in time by following the
//! stochastic characteristics. For each node x, control a and Brownian column
//! sigma_l the operator places a pair of feet
//!
//! ```text
//!     y+- = x + lambda dt b(t,x,a) +- sqrt(p lambda dt) sigma_l(t,x,a)
//! ```
//!
//! where lambda in (0,1] is the first exit fraction of the (quadratic in
//! sqrt(lambda)) path from Omega. Feet that stay inside interpolate the next
//! time level; feet that exit charge the Dirichlet data at the truncated exit
//! time instead. The exit-fraction-dependent weights gamma+-, pi_l and the
//! rescaled step tau keep the operator a convex combination (monotone) and
//! consistent with the equation, which is what carries convergence to the
//! viscosity solution even when sigma degenerates.
//!
//! Module map: [`geometry`] (domains, meshes, exit fractions),
//! [`interpolation`] (P1 over simplices), [`characteristics`] (feet and
//! weights), [`operator`] (the controlled one-step operator), [`solver`]
//! (backward sweep and space-time evaluation), [`problems`] (built-in
//! benchmark problems), [`analysis`] (errors, orders, consistency residuals),
//! [`trajectories`] (feedback Euler-Maruyama paths), [`cli`] (command-line
//! frontend; `hjb-sl solve|converge|check|trajectories`).

pub mod analysis;
pub mod characteristics;
pub mod cli;
pub mod geometry;
pub mod interpolation;
pub mod operator;
pub mod problems;
pub mod solver;
pub mod trajectories;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mesh parse error at line {line}: {msg}")]
    MeshParse { line: usize, msg: String },
    #[error("invalid mesh: {0}")]
    MeshInvalid(String),
    #[error("point {point:?} lies outside the mesh")]
    OutOfDomain { point: Vec<f64> },
    #[error("time {t} outside [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },
    #[error("time level {level} was not retained by the solve")]
    LevelNotRetained { level: usize },
    #[error("non-finite value produced at time level {level}, node {node}")]
    NonFinite { level: usize, node: usize },
    #[error("gradient stencil at {point:?} leaves the domain")]
    StencilOutside { point: Vec<f64> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Formats a float with 17 significant digits, enough to round-trip f64
/// exactly. All CSV/mesh writers use this so downstream order computations
/// are not rounding-limited.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}
