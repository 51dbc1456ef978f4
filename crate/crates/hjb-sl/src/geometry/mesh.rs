//! Simplicial meshes (segments in 1D, triangles in 2D) with exact boundary
//! vertices, a bucket-grid point locator and hull projection.

use super::{dist2, nearest_on_segment, Domain};
use crate::{Error, Result};

/// Relative tolerance for boundary-vertex placement checks.
const BOUNDARY_TOL: f64 = 1e-10;
/// Barycentric coordinates down to this are accepted as "inside".
const BARY_TOL: f64 = -1e-12;
/// Safety net for sliver elements: a candidate this close still wins if
/// nothing passes the strict test (weights are clamped at interpolation).
const BARY_RESCUE: f64 = -1e-9;
/// Barycentric weights this close to 1 snap to an exact vertex hit.
const ONE_HOT_TOL: f64 = 1e-12;

/// Result of a point location query.
#[derive(Clone, Copy, Debug)]
pub struct ElementHit {
    pub element: usize,
    /// Barycentric coordinates of `point` in the element; the first dim+1
    /// entries are meaningful. Entries may undershoot 0 by at most 1e-12.
    pub bary: [f64; 3],
    /// The located point: the query itself, or its projection onto the mesh
    /// hull when the query falls in the sliver between hull and curved
    /// boundary (|x - point| <= c dx^2 there).
    pub point: [f64; 2],
}

/// A conforming simplicial mesh of a convex domain.
///
/// Invariants established at construction: boundary-flagged vertices lie on
/// the domain boundary (to 1e-10 relative), unflagged vertices are strictly
/// inside, elements are positively oriented and non-degenerate, and the
/// recorded regularity constant delta in (0,1) bounds inradius/dx from below
/// and enclosing-radius/dx from above for every element.
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    boundary: Vec<bool>,
    elements: Vec<u32>,
    interior: Vec<u32>,
    dx: f64,
    delta: f64,
    domain: Domain,
    lattice: Option<Lattice>,
    buckets: Buckets,
    /// Hull boundary faces as vertex pairs (degenerate [v,v] in 1D), each
    /// with its owning element; used for hull projection.
    bfaces: Vec<[u32; 2]>,
    bface_elem: Vec<u32>,
}

/// Uniform-lattice fast path recorded by `build_rect_grid`.
#[derive(Clone, Debug)]
struct Lattice {
    lo: [f64; 2],
    hi: [f64; 2],
    h: [f64; 2],
    n: [usize; 2],
    /// Four triangles per cell around a center vertex instead of a
    /// fixed-diagonal two-split.
    cross: bool,
}

struct Buckets {
    lo: [f64; 2],
    cell: f64,
    n: [usize; 2],
    elem_off: Vec<u32>,
    elem_items: Vec<u32>,
    face_off: Vec<u32>,
    face_items: Vec<u32>,
}

impl std::fmt::Debug for Mesh {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mesh")
            .field("dim", &self.dim)
            .field("vertices", &self.n_vertices())
            .field("elements", &self.n_elements())
            .field("dx", &self.dx)
            .field("delta", &self.delta)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl Mesh {
    /// Uniform triangulated grid on the rectangle `[lo, hi]`, `nx` by `ny`
    /// cells, each cell split along the same diagonal. Vertices on the
    /// outermost lattice lines are boundary-flagged and placed exactly on
    /// the walls.
    pub fn build_rect_grid(lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize) -> Result<Mesh> {
        if !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(Error::Config(format!(
                "degenerate rectangle bounds {lo:?}..{hi:?}"
            )));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::Config(
                "grid needs at least one cell per direction".into(),
            ));
        }
        let h = [(hi[0] - lo[0]) / nx as f64, (hi[1] - lo[1]) / ny as f64];
        let mut coords = Vec::with_capacity((nx + 1) * (ny + 1) * 2);
        let mut flags = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            let y = if j == ny {
                hi[1]
            } else {
                lo[1] + j as f64 * h[1]
            };
            for i in 0..=nx {
                let x = if i == nx {
                    hi[0]
                } else {
                    lo[0] + i as f64 * h[0]
                };
                coords.push(x);
                coords.push(y);
                flags.push(i == 0 || i == nx || j == 0 || j == ny);
            }
        }
        let vid = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
        let mut elements = Vec::with_capacity(nx * ny * 6);
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10, v01, v11) =
                    (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
                elements.extend_from_slice(&[v00, v10, v11]);
                elements.extend_from_slice(&[v00, v11, v01]);
            }
        }
        let mut mesh = Mesh::from_parts(
            2,
            coords,
            flags,
            elements,
            Some(Domain::Rectangle { lo, hi }),
        )?;
        mesh.lattice = Some(Lattice {
            lo,
            hi,
            h,
            n: [nx, ny],
            cross: false,
        });
        Ok(mesh)
    }

    /// Crossed variant of the uniform grid: every cell gets a center vertex
    /// and four triangles. Both diagonal directions appear symmetrically, so
    /// piecewise-linear reads of a kinked field carry no orientation bias;
    /// the two-split grid favors kink lines aligned with its one diagonal.
    /// Max element diameter is the cell side (the diagonals are halved).
    pub fn build_cross_grid(lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize) -> Result<Mesh> {
        if !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(Error::Config(format!(
                "degenerate rectangle bounds {lo:?}..{hi:?}"
            )));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::Config(
                "grid needs at least one cell per direction".into(),
            ));
        }
        let h = [(hi[0] - lo[0]) / nx as f64, (hi[1] - lo[1]) / ny as f64];
        let n_lat = (nx + 1) * (ny + 1);
        let mut coords = Vec::with_capacity((n_lat + nx * ny) * 2);
        let mut flags = Vec::with_capacity(n_lat + nx * ny);
        for j in 0..=ny {
            let y = if j == ny {
                hi[1]
            } else {
                lo[1] + j as f64 * h[1]
            };
            for i in 0..=nx {
                let x = if i == nx {
                    hi[0]
                } else {
                    lo[0] + i as f64 * h[0]
                };
                coords.push(x);
                coords.push(y);
                flags.push(i == 0 || i == nx || j == 0 || j == ny);
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                coords.push(lo[0] + (i as f64 + 0.5) * h[0]);
                coords.push(lo[1] + (j as f64 + 0.5) * h[1]);
                flags.push(false);
            }
        }
        let vid = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
        let cid = |i: usize, j: usize| (n_lat + j * nx + i) as u32;
        let mut elements = Vec::with_capacity(nx * ny * 12);
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10, v01, v11) =
                    (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
                let c = cid(i, j);
                // Order matters: locate_lattice addresses south/east/north/west
                // as base..base+3 with matching vertex order.
                elements.extend_from_slice(&[v00, v10, c]);
                elements.extend_from_slice(&[v10, v11, c]);
                elements.extend_from_slice(&[v11, v01, c]);
                elements.extend_from_slice(&[v01, v00, c]);
            }
        }
        let mut mesh = Mesh::from_parts(
            2,
            coords,
            flags,
            elements,
            Some(Domain::Rectangle { lo, hi }),
        )?;
        mesh.lattice = Some(Lattice {
            lo,
            hi,
            h,
            n: [nx, ny],
            cross: true,
        });
        Ok(mesh)
    }

    /// Uniform mesh of the interval `[lo, hi]` with `nx` cells.
    pub fn build_interval_grid(lo: f64, hi: f64, nx: usize) -> Result<Mesh> {
        if !(hi > lo) {
            return Err(Error::Config(format!(
                "degenerate interval bounds {lo}..{hi}"
            )));
        }
        if nx == 0 {
            return Err(Error::Config("grid needs at least one cell".into()));
        }
        let h = (hi - lo) / nx as f64;
        let mut coords = Vec::with_capacity(nx + 1);
        let mut flags = Vec::with_capacity(nx + 1);
        for i in 0..=nx {
            coords.push(if i == nx { hi } else { lo + i as f64 * h });
            flags.push(i == 0 || i == nx);
        }
        let mut elements = Vec::with_capacity(nx * 2);
        for i in 0..nx as u32 {
            elements.extend_from_slice(&[i, i + 1]);
        }
        let mut mesh = Mesh::from_parts(
            1,
            coords,
            flags,
            elements,
            Some(Domain::Interval { lo, hi }),
        )?;
        mesh.lattice = Some(Lattice {
            lo: [lo, 0.0],
            hi: [hi, 0.0],
            h: [h, 0.0],
            n: [nx, 1],
            cross: false,
        });
        Ok(mesh)
    }

    /// Polar-structured triangulation of the disk of given radius centered
    /// at the origin: concentric rings stitched by an angular two-pointer
    /// walk. Outer-ring vertices sit exactly on the circle. Ring spacing is
    /// target_h/sqrt(3), which reproduces the vertex density of a typical
    /// unstructured mesh whose maximum edge is target_h while keeping every
    /// element diameter at or below target_h.
    pub fn build_disk_mesh(radius: f64, target_h: f64) -> Result<Mesh> {
        if !(target_h > 0.0 && target_h < radius) {
            return Err(Error::Config(format!(
                "disk mesh needs 0 < target_h < radius, got target_h = {target_h}, radius = {radius}"
            )));
        }
        let spacing = target_h / 3f64.sqrt();
        let n_rings = (radius / spacing).ceil() as usize;
        let gap = radius / n_rings as f64;

        let mut coords = vec![0.0, 0.0];
        let mut flags = vec![false];
        let mut ring_start = vec![0usize; n_rings + 1];
        let mut ring_count = vec![1usize; n_rings + 1];
        for j in 1..=n_rings {
            let r = radius * j as f64 / n_rings as f64;
            let m = ((2.0 * std::f64::consts::PI * r) / gap).ceil().max(6.0) as usize;
            ring_start[j] = flags.len();
            ring_count[j] = m;
            for q in 0..m {
                let th = 2.0 * std::f64::consts::PI * q as f64 / m as f64;
                coords.push(r * th.cos());
                coords.push(r * th.sin());
                flags.push(j == n_rings);
            }
        }

        let mut elements: Vec<u32> = Vec::new();
        // Center fan.
        let m1 = ring_count[1];
        for q in 0..m1 {
            elements.extend_from_slice(&[
                0,
                (ring_start[1] + q) as u32,
                (ring_start[1] + (q + 1) % m1) as u32,
            ]);
        }
        // Bands between consecutive rings: advance whichever side's next
        // vertex comes first in angle.
        for j in 2..=n_rings {
            let (s_in, m_in) = (ring_start[j - 1], ring_count[j - 1]);
            let (s_out, m_out) = (ring_start[j], ring_count[j]);
            let (mut i, mut o) = (0usize, 0usize);
            while i < m_in || o < m_out {
                let a_i = (i + 1) as f64 / m_in as f64;
                let a_o = (o + 1) as f64 / m_out as f64;
                if o < m_out && (i == m_in || a_o <= a_i) {
                    elements.extend_from_slice(&[
                        (s_in + i % m_in) as u32,
                        (s_out + o % m_out) as u32,
                        (s_out + (o + 1) % m_out) as u32,
                    ]);
                    o += 1;
                } else {
                    elements.extend_from_slice(&[
                        (s_in + i % m_in) as u32,
                        (s_out + o % m_out) as u32,
                        (s_in + (i + 1) % m_in) as u32,
                    ]);
                    i += 1;
                }
            }
        }

        Mesh::from_parts(
            2,
            coords,
            flags,
            elements,
            Some(Domain::Disk {
                center: [0.0, 0.0],
                radius,
            }),
        )
    }

    /// Assembles and validates a mesh. With `domain = None` (loaded meshes)
    /// the domain is reconstructed as the hull polygon / interval spanned by
    /// the boundary faces; it must come out convex.
    pub fn from_parts(
        dim: usize,
        coords: Vec<f64>,
        boundary: Vec<bool>,
        mut elements: Vec<u32>,
        domain: Option<Domain>,
    ) -> Result<Mesh> {
        if dim != 1 && dim != 2 {
            return Err(Error::MeshInvalid(format!(
                "dimension {dim} not supported (1 or 2)"
            )));
        }
        if coords.len() % dim != 0 {
            return Err(Error::MeshInvalid(
                "coordinate array length not a multiple of dim".into(),
            ));
        }
        let n = coords.len() / dim;
        if boundary.len() != n {
            return Err(Error::MeshInvalid(
                "boundary flag count differs from vertex count".into(),
            ));
        }
        let k = dim + 1;
        if elements.len() % k != 0 {
            return Err(Error::MeshInvalid(
                "element array length not a multiple of dim+1".into(),
            ));
        }
        let m = elements.len() / k;
        if n == 0 || m == 0 {
            return Err(Error::MeshInvalid(
                "mesh has no vertices or no elements".into(),
            ));
        }
        for &v in &elements {
            if v as usize >= n {
                return Err(Error::MeshInvalid(format!(
                    "element references vertex {v} out of range"
                )));
            }
        }

        // Orientation, degeneracy, size and regularity per element.
        let vx = |i: u32| &coords[i as usize * dim..i as usize * dim + dim];
        let mut dx = 0.0f64;
        let mut min_ratio_in = f64::INFINITY; // inradius / diameter
        let mut max_ratio_out = 0.0f64; // enclosing radius / diameter (tracked vs dx below)
        let mut enclosing = Vec::with_capacity(m);
        let mut inradius = Vec::with_capacity(m);
        for e in 0..m {
            let el = &mut elements[e * k..(e + 1) * k];
            if dim == 1 {
                if el[0] == el[1] {
                    return Err(Error::MeshInvalid(format!(
                        "element {e} is degenerate (repeated vertex)"
                    )));
                }
                if coords[el[0] as usize] > coords[el[1] as usize] {
                    el.swap(0, 1);
                }
                let len = coords[el[1] as usize] - coords[el[0] as usize];
                if len <= 0.0 {
                    return Err(Error::MeshInvalid(format!("element {e} has zero length")));
                }
                dx = dx.max(len);
                inradius.push(0.5 * len);
                enclosing.push(0.5 * len);
            } else {
                let (a, b, c) = (el[0], el[1], el[2]);
                let (pa, pb, pc) = (vx(a), vx(b), vx(c));
                let signed2 = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]);
                if signed2 == 0.0 {
                    return Err(Error::MeshInvalid(format!(
                        "element {e} is degenerate (zero area, vertices {a} {b} {c})"
                    )));
                }
                if signed2 < 0.0 {
                    elements[e * k..(e + 1) * k].swap(1, 2);
                }
                let el = &elements[e * k..(e + 1) * k];
                let (pa, pb, pc) = (vx(el[0]), vx(el[1]), vx(el[2]));
                let la = ((pb[0] - pc[0]).powi(2) + (pb[1] - pc[1]).powi(2)).sqrt();
                let lb = ((pa[0] - pc[0]).powi(2) + (pa[1] - pc[1]).powi(2)).sqrt();
                let lc = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                let area = 0.5 * signed2.abs();
                let diam = la.max(lb).max(lc);
                dx = dx.max(diam);
                inradius.push(2.0 * area / (la + lb + lc));
                // Smallest enclosing ball: circumball for acute triangles,
                // half the longest edge otherwise.
                let (mut s, mut t, mut u) = (la, lb, lc);
                if s < t {
                    std::mem::swap(&mut s, &mut t);
                }
                if s < u {
                    std::mem::swap(&mut s, &mut u);
                }
                let r_enc = if s * s >= t * t + u * u {
                    0.5 * s
                } else {
                    la * lb * lc / (4.0 * area)
                };
                enclosing.push(r_enc);
            }
        }
        let mut delta = f64::INFINITY;
        for e in 0..m {
            min_ratio_in = min_ratio_in.min(inradius[e] / dx);
            max_ratio_out = max_ratio_out.max(enclosing[e] / dx);
            delta = delta.min((inradius[e] / dx).min(dx / enclosing[e]));
        }
        let _ = (min_ratio_in, max_ratio_out);
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::MeshInvalid(format!(
                "regularity constant {delta} outside (0,1)"
            )));
        }

        // Hull faces: faces used by exactly one element.
        let (bfaces, bface_elem) = hull_faces(dim, n, m, &elements)?;
        let mut on_hull = vec![false; n];
        for f in &bfaces {
            on_hull[f[0] as usize] = true;
            on_hull[f[1] as usize] = true;
        }
        for i in 0..n {
            if boundary[i] != on_hull[i] {
                return Err(Error::MeshInvalid(format!(
                    "vertex {i}: boundary flag {} but hull membership {}",
                    boundary[i], on_hull[i]
                )));
            }
        }

        let domain = match domain {
            Some(d) => d,
            None => reconstruct_domain(dim, &coords, &bfaces)?,
        };
        if domain.dim() != dim {
            return Err(Error::MeshInvalid(
                "domain dimension differs from mesh dimension".into(),
            ));
        }

        // Flagged vertices on the boundary, unflagged strictly inside.
        let diam = domain.diameter();
        for i in 0..n {
            let x = &coords[i * dim..i * dim + dim];
            if boundary[i] {
                let q = domain.project_boundary(x);
                let d2 = if dim == 1 {
                    (x[0] - q[0]).powi(2)
                } else {
                    dist2(&q, &[x[0], x[1]])
                };
                if d2.sqrt() > BOUNDARY_TOL * diam {
                    return Err(Error::MeshInvalid(format!(
                        "boundary vertex {i} lies {} away from the domain boundary",
                        d2.sqrt()
                    )));
                }
            } else if !domain.inside(x) {
                return Err(Error::MeshInvalid(format!(
                    "interior vertex {i} is not strictly inside"
                )));
            }
        }

        let interior: Vec<u32> = (0..n as u32).filter(|&i| !boundary[i as usize]).collect();
        let buckets = Buckets::build(dim, &coords, &elements, &bfaces, dx);
        Ok(Mesh {
            dim,
            coords,
            boundary,
            elements,
            interior,
            dx,
            delta,
            domain,
            lattice: None,
            buckets,
            bfaces,
            bface_elem,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }
    pub fn n_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }
    /// Maximum element diameter.
    pub fn dx(&self) -> f64 {
        self.dx
    }
    /// Regularity constant: every element contains a ball of radius
    /// delta*dx and fits in one of radius dx/delta.
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }
    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }
    /// Interior vertex ids in increasing order.
    pub fn interior_vertices(&self) -> &[u32] {
        &self.interior
    }
    pub fn element_vertices(&self, e: usize) -> &[u32] {
        &self.elements[e * (self.dim + 1)..(e + 1) * (self.dim + 1)]
    }

    /// Locates `x` in the mesh: its containing element, or the element whose
    /// hull face carries the nearest-point projection when `x` sits in the
    /// gap between the polyhedral hull and a curved boundary. Errors when
    /// `x` is more than one element diameter outside the hull.
    pub fn locate(&self, x: &[f64]) -> Result<ElementHit> {
        debug_assert_eq!(x.len(), self.dim);
        if let Some(lat) = &self.lattice {
            return self.locate_lattice(lat, x);
        }
        // Containment scan over the bucket's candidates.
        let (b0, b1) = self.buckets.bucket_of(x);
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for &e in self.buckets.elems_in(b0, b1) {
            let bary = self.bary_in(e as usize, x);
            let min = bary[0]
                .min(bary[1])
                .min(if self.dim == 2 { bary[2] } else { bary[0] });
            if min >= BARY_TOL {
                return Ok(self.finish_hit(
                    e as usize,
                    bary,
                    [x[0], if self.dim == 2 { x[1] } else { 0.0 }],
                ));
            }
            if best.map_or(true, |(bm, _, _)| min > bm) {
                best = Some((min, e as usize, bary));
            }
        }
        if let Some((min, e, bary)) = best {
            if min >= BARY_RESCUE {
                return Ok(self.finish_hit(
                    e,
                    bary,
                    [x[0], if self.dim == 2 { x[1] } else { 0.0 }],
                ));
            }
        }
        // Outside the hull: project onto the nearest boundary face.
        self.locate_projected(x)
    }

    fn locate_projected(&self, x: &[f64]) -> Result<ElementHit> {
        let xq = [x[0], if self.dim == 2 { x[1] } else { 0.0 }];
        let (b0, b1) = self.buckets.bucket_of(x);
        let candidates = self.buckets.faces_in(b0, b1);
        let scan_all;
        let faces: &[u32] = if candidates.is_empty() {
            scan_all = (0..self.bfaces.len() as u32).collect::<Vec<_>>();
            &scan_all
        } else {
            candidates
        };
        let mut best = (f64::INFINITY, 0usize, [0.0; 2]);
        for &fi in faces {
            let f = self.bfaces[fi as usize];
            let q = if self.dim == 1 {
                [self.coords[f[0] as usize], 0.0]
            } else {
                let a = [
                    self.coords[f[0] as usize * 2],
                    self.coords[f[0] as usize * 2 + 1],
                ];
                let b = [
                    self.coords[f[1] as usize * 2],
                    self.coords[f[1] as usize * 2 + 1],
                ];
                nearest_on_segment(&a, &b, x)
            };
            let d2 = dist2(&q, &xq);
            if d2 < best.0 {
                best = (d2, fi as usize, q);
            }
        }
        if !best.0.is_finite() || best.0.sqrt() > self.dx {
            return Err(Error::OutOfDomain { point: x.to_vec() });
        }
        let e = self.bface_elem[best.1] as usize;
        let bary = self.bary_in(e, &best.2[..self.dim]);
        Ok(self.finish_hit(e, bary, best.2))
    }

    fn locate_lattice(&self, lat: &Lattice, x: &[f64]) -> Result<ElementHit> {
        let mut cell = [0usize; 2];
        let mut frac = [0.0f64; 2];
        let mut point = [0.0f64; 2];
        for c in 0..self.dim {
            if x[c] < lat.lo[c] - self.dx || x[c] > lat.hi[c] + self.dx {
                return Err(Error::OutOfDomain { point: x.to_vec() });
            }
            let clamped = x[c].clamp(lat.lo[c], lat.hi[c]);
            point[c] = clamped;
            let rel = ((clamped - lat.lo[c]) / lat.h[c]).clamp(0.0, lat.n[c] as f64);
            let i = (rel.floor() as usize).min(lat.n[c] - 1);
            cell[c] = i;
            frac[c] = (rel - i as f64).clamp(0.0, 1.0);
        }
        if self.dim == 1 {
            let e = cell[0];
            return Ok(self.finish_hit(e, [1.0 - frac[0], frac[0], 0.0], point));
        }
        let nx = lat.n[0];
        let (fx, fy) = (frac[0], frac[1]);
        if lat.cross {
            // Quadrants around the cell center, in construction order
            // south/east/north/west; third vertex of each is the center.
            let base = 4 * (cell[1] * nx + cell[0]);
            let (d1, d2) = (fx - fy, fx + fy - 1.0);
            let (e, bary) = if d1 >= 0.0 && d2 <= 0.0 {
                (base, [-d2, d1, 2.0 * fy])
            } else if d1 >= 0.0 {
                (base + 1, [d1, d2, 2.0 * (1.0 - fx)])
            } else if d2 >= 0.0 {
                (base + 2, [d2, -d1, 2.0 * (1.0 - fy)])
            } else {
                (base + 3, [-d1, -d2, 2.0 * fx])
            };
            return Ok(self.finish_hit(e, bary, point));
        }
        let base = 2 * (cell[1] * nx + cell[0]);
        // Cells are split along the v00-v11 diagonal; the lower triangle is
        // (v00, v10, v11), the upper (v00, v11, v01).
        let (e, bary) = if fx >= fy {
            (base, [1.0 - fx, fx - fy, fy])
        } else {
            (base + 1, [1.0 - fy, fx, fy - fx])
        };
        Ok(self.finish_hit(e, bary, point))
    }

    fn finish_hit(&self, element: usize, mut bary: [f64; 3], point: [f64; 2]) -> ElementHit {
        for k in 0..=self.dim {
            if bary[k] >= 1.0 - ONE_HOT_TOL {
                bary = [0.0; 3];
                bary[k] = 1.0;
                break;
            }
        }
        ElementHit {
            element,
            bary,
            point,
        }
    }

    /// Barycentric coordinates of `x` in element `e` (may be negative when
    /// `x` is outside of it).
    fn bary_in(&self, e: usize, x: &[f64]) -> [f64; 3] {
        let el = self.element_vertices(e);
        if self.dim == 1 {
            let a = self.coords[el[0] as usize];
            let b = self.coords[el[1] as usize];
            let t = (x[0] - a) / (b - a);
            return [1.0 - t, t, 0.0];
        }
        let pa = self.vertex(el[0] as usize);
        let pb = self.vertex(el[1] as usize);
        let pc = self.vertex(el[2] as usize);
        let m = [pb[0] - pa[0], pc[0] - pa[0], pb[1] - pa[1], pc[1] - pa[1]];
        let det = m[0] * m[3] - m[1] * m[2];
        let rx = x[0] - pa[0];
        let ry = x[1] - pa[1];
        let w1 = (rx * m[3] - m[1] * ry) / det;
        let w2 = (m[0] * ry - rx * m[2]) / det;
        [1.0 - w1 - w2, w1, w2]
    }
}

/// Faces incident to exactly one element, with that element. Faces shared by
/// more than two elements are rejected.
fn hull_faces(
    dim: usize,
    n: usize,
    m: usize,
    elements: &[u32],
) -> Result<(Vec<[u32; 2]>, Vec<u32>)> {
    use std::collections::HashMap;
    let k = dim + 1;
    let mut count: HashMap<[u32; 2], (u32, u32)> = HashMap::new();
    for e in 0..m {
        let el = &elements[e * k..(e + 1) * k];
        let faces: &[[u32; 2]] = &match dim {
            1 => vec![[el[0], el[0]], [el[1], el[1]]],
            _ => vec![[el[0], el[1]], [el[1], el[2]], [el[2], el[0]]],
        };
        for f in faces {
            let key = if f[0] <= f[1] { *f } else { [f[1], f[0]] };
            let entry = count.entry(key).or_insert((0, e as u32));
            entry.0 += 1;
            if entry.0 > 2 {
                return Err(Error::MeshInvalid(format!(
                    "face {key:?} is shared by more than two elements"
                )));
            }
            if entry.0 == 1 {
                entry.1 = e as u32;
            }
        }
    }
    let _ = n;
    let mut bfaces = Vec::new();
    let mut owners = Vec::new();
    let mut keys: Vec<_> = count.iter().filter(|(_, v)| v.0 == 1).collect();
    keys.sort();
    for (f, (_, e)) in keys {
        bfaces.push(*f);
        owners.push(*e);
    }
    if bfaces.is_empty() {
        return Err(Error::MeshInvalid("mesh has no boundary faces".into()));
    }
    Ok((bfaces, owners))
}

/// Domain of a loaded mesh: the interval / hull polygon spanned by its
/// boundary faces. The polygon must be a single convex cycle.
fn reconstruct_domain(dim: usize, coords: &[f64], bfaces: &[[u32; 2]]) -> Result<Domain> {
    if dim == 1 {
        let lo = coords.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return Ok(Domain::Interval { lo, hi });
    }
    use std::collections::HashMap;
    let mut adj: HashMap<u32, Vec<u32>> = HashMap::new();
    for f in bfaces {
        adj.entry(f[0]).or_default().push(f[1]);
        adj.entry(f[1]).or_default().push(f[0]);
    }
    for (v, ns) in &adj {
        if ns.len() != 2 {
            return Err(Error::MeshInvalid(format!(
                "boundary vertex {v} has {} hull neighbors, expected 2",
                ns.len()
            )));
        }
    }
    let start = *adj.keys().min().unwrap();
    let mut cycle = vec![start];
    let mut prev = start;
    let mut cur = adj[&start][0];
    while cur != start {
        cycle.push(cur);
        let ns = &adj[&cur];
        let next = if ns[0] == prev { ns[1] } else { ns[0] };
        prev = cur;
        cur = next;
    }
    if cycle.len() != adj.len() {
        return Err(Error::MeshInvalid(
            "mesh boundary is not a single closed curve".into(),
        ));
    }
    let mut verts: Vec<[f64; 2]> = cycle
        .iter()
        .map(|&v| [coords[v as usize * 2], coords[v as usize * 2 + 1]])
        .collect();
    // Orient counterclockwise.
    let mut area2 = 0.0;
    for i in 0..verts.len() {
        let a = verts[i];
        let b = verts[(i + 1) % verts.len()];
        area2 += a[0] * b[1] - b[0] * a[1];
    }
    if area2 < 0.0 {
        verts.reverse();
    }
    // Convexity (collinear runs allowed: straight walls have many vertices).
    let scale = area2.abs().sqrt().max(1e-300);
    let nv = verts.len();
    for i in 0..nv {
        let a = verts[i];
        let b = verts[(i + 1) % nv];
        let c = verts[(i + 2) % nv];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross < -1e-10 * scale * scale {
            return Err(Error::MeshInvalid(
                "mesh hull is not convex; only convex domains are supported".into(),
            ));
        }
    }
    Ok(Domain::ConvexPolygon { vertices: verts })
}

impl Buckets {
    fn build(
        dim: usize,
        coords: &[f64],
        elements: &[u32],
        bfaces: &[[u32; 2]],
        dx: f64,
    ) -> Buckets {
        let n = coords.len() / dim;
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for i in 0..n {
            for c in 0..dim {
                lo[c] = lo[c].min(coords[i * dim + c]);
                hi[c] = hi[c].max(coords[i * dim + c]);
            }
        }
        for c in dim..2 {
            lo[c] = 0.0;
            hi[c] = 0.0;
        }
        let cell = 2.0 * dx;
        let mut nb = [1usize; 2];
        for c in 0..dim {
            nb[c] = (((hi[c] - lo[c]) / cell).ceil() as usize).max(1);
        }
        let nbuckets = nb[0] * nb[1];
        let k = dim + 1;
        let m = elements.len() / k;

        let range_of = |amin: [f64; 2], amax: [f64; 2], pad: f64| {
            let mut r = [(0usize, 0usize); 2];
            for c in 0..dim {
                let b0 = (((amin[c] - pad - lo[c]) / cell).floor() as isize)
                    .clamp(0, nb[c] as isize - 1);
                let b1 = (((amax[c] + pad - lo[c]) / cell).floor() as isize)
                    .clamp(0, nb[c] as isize - 1);
                r[c] = (b0 as usize, b1 as usize);
            }
            r
        };

        let elem_bbox = |e: usize| {
            let el = &elements[e * k..(e + 1) * k];
            let mut amin = [f64::INFINITY; 2];
            let mut amax = [f64::NEG_INFINITY; 2];
            for &v in el {
                for c in 0..dim {
                    amin[c] = amin[c].min(coords[v as usize * dim + c]);
                    amax[c] = amax[c].max(coords[v as usize * dim + c]);
                }
            }
            (amin, amax)
        };
        let face_bbox = |f: &[u32; 2]| {
            let mut amin = [f64::INFINITY; 2];
            let mut amax = [f64::NEG_INFINITY; 2];
            for &v in f {
                for c in 0..dim {
                    amin[c] = amin[c].min(coords[v as usize * dim + c]);
                    amax[c] = amax[c].max(coords[v as usize * dim + c]);
                }
            }
            (amin, amax)
        };

        // CSR fill in two passes; bucket id = b1 * nb[0] + b0.
        let mut elem_cnt = vec![0u32; nbuckets + 1];
        for e in 0..m {
            let (amin, amax) = elem_bbox(e);
            let r = range_of(amin, amax, 0.0);
            for by in r[1].0..=r[1].1 {
                for bx in r[0].0..=r[0].1 {
                    elem_cnt[by * nb[0] + bx + 1] += 1;
                }
            }
        }
        for i in 0..nbuckets {
            elem_cnt[i + 1] += elem_cnt[i];
        }
        let mut elem_items = vec![0u32; elem_cnt[nbuckets] as usize];
        let mut cursor = elem_cnt.clone();
        for e in 0..m {
            let (amin, amax) = elem_bbox(e);
            let r = range_of(amin, amax, 0.0);
            for by in r[1].0..=r[1].1 {
                for bx in r[0].0..=r[0].1 {
                    let b = by * nb[0] + bx;
                    elem_items[cursor[b] as usize] = e as u32;
                    cursor[b] += 1;
                }
            }
        }

        // Boundary faces registered with a one-cell pad so projection
        // queries just outside the hull still find their candidates.
        let mut face_cnt = vec![0u32; nbuckets + 1];
        for f in bfaces {
            let (amin, amax) = face_bbox(f);
            let r = range_of(amin, amax, cell);
            for by in r[1].0..=r[1].1 {
                for bx in r[0].0..=r[0].1 {
                    face_cnt[by * nb[0] + bx + 1] += 1;
                }
            }
        }
        for i in 0..nbuckets {
            face_cnt[i + 1] += face_cnt[i];
        }
        let mut face_items = vec![0u32; face_cnt[nbuckets] as usize];
        let mut cursor = face_cnt.clone();
        for (fi, f) in bfaces.iter().enumerate() {
            let (amin, amax) = face_bbox(f);
            let r = range_of(amin, amax, cell);
            for by in r[1].0..=r[1].1 {
                for bx in r[0].0..=r[0].1 {
                    let b = by * nb[0] + bx;
                    face_items[cursor[b] as usize] = fi as u32;
                    cursor[b] += 1;
                }
            }
        }

        Buckets {
            lo,
            cell,
            n: nb,
            elem_off: elem_cnt,
            elem_items,
            face_off: face_cnt,
            face_items,
        }
    }

    fn bucket_of(&self, x: &[f64]) -> (usize, usize) {
        let mut b = [0usize; 2];
        for c in 0..x.len().min(2) {
            b[c] = (((x[c] - self.lo[c]) / self.cell).floor() as isize)
                .clamp(0, self.n[c] as isize - 1) as usize;
        }
        (b[0], b[1])
    }

    fn elems_in(&self, b0: usize, b1: usize) -> &[u32] {
        let b = b1 * self.n[0] + b0;
        &self.elem_items[self.elem_off[b] as usize..self.elem_off[b + 1] as usize]
    }

    fn faces_in(&self, b0: usize, b1: usize) -> &[u32] {
        let b = b1 * self.n[0] + b0;
        &self.face_items[self.face_off[b] as usize..self.face_off[b + 1] as usize]
    }
}
