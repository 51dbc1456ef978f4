//! Domains, meshes and the geometric queries the scheme stands on.
//!
//! A [`Domain`] is one of four bounded convex shapes (interval, rectangle,
//! disk, convex polygon). A [`Mesh`] is a regular triangulation of it with
//! boundary vertices exactly on the boundary; [`Mesh::locate`] returns an
//! element with barycentric coordinates, projecting near-boundary queries
//! onto the polyhedral hull first (the projection moves a point on a curved
//! boundary by O(dx^2)).
//!
//! [`first_exit`] finds where a characteristic path leaves the domain. With
//! the substitution s = sqrt(lambda) the path
//!
//! ```text
//!     path(s) = x + s^2 u + s v,    u = dt b,  v = +- sqrt(p dt) sigma_l
//! ```
//!
//! is quadratic in s, i.e. a quadratic Bezier curve with control points
//! x, x + v/2, x + u + v. On a convex domain the whole curve stays inside
//! whenever those three points do, which settles the common case without
//! sampling. Otherwise intervals and rectangles are solved per wall in
//! closed form, and curved/polygonal domains fall back to a 64-sample scan
//! of the inside predicate plus bisection.

pub mod io;
mod mesh;

pub use io::{load_mesh, mesh_from_str, mesh_to_string, save_mesh};
pub use mesh::{ElementHit, Mesh};

/// Tolerance for "first exit" bisection in the s = sqrt(lambda) variable.
pub const EXIT_TOL: f64 = 1e-12;

const SAMPLES: usize = 64;

/// A bounded open convex domain in dimension 1 or 2.
///
/// `inside` is strict: points on the boundary are outside. Polygon vertices
/// must be listed counterclockwise.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Interval { lo: f64, hi: f64 },
    Rectangle { lo: [f64; 2], hi: [f64; 2] },
    Disk { center: [f64; 2], radius: f64 },
    ConvexPolygon { vertices: Vec<[f64; 2]> },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            _ => 2,
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Interval { lo, hi } => hi - lo,
            Domain::Rectangle { lo, hi } => {
                ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
            }
            Domain::Disk { radius, .. } => 2.0 * radius,
            Domain::ConvexPolygon { vertices } => {
                let mut d2: f64 = 0.0;
                for i in 0..vertices.len() {
                    for j in i + 1..vertices.len() {
                        d2 = d2.max(dist2(&vertices[i], &vertices[j]));
                    }
                }
                d2.sqrt()
            }
        }
    }

    /// Strict interior test; false on the boundary.
    pub fn inside(&self, x: &[f64]) -> bool {
        match self {
            Domain::Interval { lo, hi } => *lo < x[0] && x[0] < *hi,
            Domain::Rectangle { lo, hi } => {
                lo[0] < x[0] && x[0] < hi[0] && lo[1] < x[1] && x[1] < hi[1]
            }
            Domain::Disk { center, radius } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                dx * dx + dy * dy < radius * radius
            }
            Domain::ConvexPolygon { vertices } => {
                let n = vertices.len();
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    // CCW: interior is strictly left of every edge.
                    if (b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0]) <= 0.0 {
                        return false;
                    }
                }
                true
            }
        }
    }

    /// Nearest boundary point. Exact for walls and circles, so the result
    /// sits on the boundary to machine precision.
    pub fn project_boundary(&self, x: &[f64]) -> [f64; 2] {
        match self {
            Domain::Interval { lo, hi } => {
                let q = if (x[0] - lo).abs() <= (hi - x[0]).abs() {
                    *lo
                } else {
                    *hi
                };
                [q, 0.0]
            }
            Domain::Rectangle { lo, hi } => {
                let cx = x[0].clamp(lo[0], hi[0]);
                let cy = x[1].clamp(lo[1], hi[1]);
                if cx != x[0] || cy != x[1] {
                    return [cx, cy];
                }
                // Interior: push the coordinate closest to a wall onto it.
                let cands = [
                    (x[0] - lo[0], [lo[0], x[1]]),
                    (hi[0] - x[0], [hi[0], x[1]]),
                    (x[1] - lo[1], [x[0], lo[1]]),
                    (hi[1] - x[1], [x[0], hi[1]]),
                ];
                let mut best = cands[0];
                for c in &cands[1..] {
                    if c.0 < best.0 {
                        best = *c;
                    }
                }
                best.1
            }
            Domain::Disk { center, radius } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let r = (dx * dx + dy * dy).sqrt();
                if r == 0.0 {
                    return [center[0] + radius, center[1]];
                }
                [center[0] + radius * dx / r, center[1] + radius * dy / r]
            }
            Domain::ConvexPolygon { vertices } => {
                let n = vertices.len();
                let mut best = vertices[0];
                let mut best_d2 = f64::INFINITY;
                for i in 0..n {
                    let q = nearest_on_segment(&vertices[i], &vertices[(i + 1) % n], x);
                    let d2 = dist2(&q, &[x[0], x[1]]);
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = q;
                    }
                }
                best
            }
        }
    }
}

pub(crate) fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

pub(crate) fn nearest_on_segment(a: &[f64; 2], b: &[f64; 2], x: &[f64]) -> [f64; 2] {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return *a;
    }
    let t = (((x[0] - a[0]) * ab[0] + (x[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

/// Evaluates path(s) = x + s^2 u + s v into `out` (first `dim` entries).
fn path_at(x: &[f64], u: &[f64], v: &[f64], s: f64, out: &mut [f64; 2]) {
    let s2 = s * s;
    for c in 0..x.len() {
        out[c] = x[c] + s2 * u[c] + s * v[c];
    }
}

/// First exit of the characteristic path s -> x + s^2 u + s v from the
/// domain, for s in (0, 1].
///
/// Returns the exit parameter and the exit point snapped onto the boundary,
/// or `None` when the whole path stays inside. `x` must be strictly inside.
///
/// Intervals and rectangles are solved per wall as quadratics in s; other
/// shapes are scanned with 64 uniform samples of the inside predicate and the
/// first inside/outside bracket is bisected to |ds| <= 1e-12. A path whose
/// excursion outside is too brief for the scan to see is treated as interior,
/// which only ever relaxes the truncation.
pub fn first_exit(domain: &Domain, x: &[f64], u: &[f64], v: &[f64]) -> Option<(f64, [f64; 2])> {
    debug_assert!(domain.inside(x), "first_exit requires an interior start");
    let dim = domain.dim();

    // Quadratic Bezier hull: control points x, x + v/2, x + u + v. All three
    // inside a convex domain puts the whole curve inside.
    let mut p1 = [0.0; 2];
    let mut p2 = [0.0; 2];
    for c in 0..dim {
        p1[c] = x[c] + 0.5 * v[c];
        p2[c] = x[c] + u[c] + v[c];
    }
    if domain.inside(&p1[..dim]) && domain.inside(&p2[..dim]) {
        return None;
    }

    match domain {
        Domain::Interval { lo, hi } => exit_axis_walls(domain, x, u, v, &[(*lo, *hi)]),
        Domain::Rectangle { lo, hi } => {
            exit_axis_walls(domain, x, u, v, &[(lo[0], hi[0]), (lo[1], hi[1])])
        }
        _ => exit_sampled(domain, x, u, v),
    }
}

/// Closed-form exit through axis-aligned walls: coordinate c crosses wall w
/// where u_c s^2 + v_c s + (x_c - w) = 0. The smallest root in (0, 1] over
/// all walls is the first boundary contact.
fn exit_axis_walls(
    domain: &Domain,
    x: &[f64],
    u: &[f64],
    v: &[f64],
    walls: &[(f64, f64)],
) -> Option<(f64, [f64; 2])> {
    let mut s_exit = f64::INFINITY;
    for (c, (lo, hi)) in walls.iter().enumerate() {
        for w in [*lo, *hi] {
            if let Some(s) = smallest_root_in_unit(u[c], v[c], x[c] - w) {
                if s < s_exit {
                    s_exit = s;
                }
            }
        }
    }
    if s_exit.is_finite() {
        let mut p = [0.0; 2];
        path_at(x, u, v, s_exit, &mut p);
        Some((s_exit, domain.project_boundary(&p[..walls.len()])))
    } else {
        None
    }
}

/// Smallest root of a s^2 + b s + c = 0 in (0, 1], None if there is none.
fn smallest_root_in_unit(a: f64, b: f64, c: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut push = |s: f64| {
        if s > 0.0 && s <= 1.0 && best.map_or(true, |t| s < t) {
            best = Some(s);
        }
    };
    if a == 0.0 {
        if b != 0.0 {
            push(-c / b);
        }
        return best;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Stable pairing: q has the sign that avoids cancellation.
    let q = -0.5 * (b + b.signum() * sq);
    if b == 0.0 {
        let r = (sq / (2.0 * a)).abs();
        push(r);
        push(-r);
    } else {
        push(q / a);
        if q != 0.0 {
            push(c / q);
        }
    }
    best
}

/// Generic fallback: uniform scan for the first sample outside, then
/// bisection on the bracketing interval (inside on the left, outside on the
/// right throughout).
fn exit_sampled(domain: &Domain, x: &[f64], u: &[f64], v: &[f64]) -> Option<(f64, [f64; 2])> {
    let dim = domain.dim();
    let mut p = [0.0; 2];
    let mut lo = 0.0_f64;
    let mut hi = f64::NAN;
    for j in 1..=SAMPLES {
        let s = j as f64 / SAMPLES as f64;
        path_at(x, u, v, s, &mut p);
        if domain.inside(&p[..dim]) {
            lo = s;
        } else {
            hi = s;
            break;
        }
    }
    if hi.is_nan() {
        return None;
    }
    while hi - lo > EXIT_TOL {
        let mid = 0.5 * (lo + hi);
        path_at(x, u, v, mid, &mut p);
        if domain.inside(&p[..dim]) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    path_at(x, u, v, s, &mut p);
    Some((s, domain.project_boundary(&p[..dim])))
}
