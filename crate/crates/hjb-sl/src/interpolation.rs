//! Piecewise-linear interpolation of nodal fields.
//!
//! Evaluation composes point location with the barycentric weights of the
//! containing element, so queries in the sliver between a curved boundary
//! and the mesh hull are first pulled onto the hull. Weights form a convex
//! combination; tiny negatives from floating-point location are clamped to
//! zero and renormalized, which keeps interpolation monotone in the nodal
//! values.

use crate::geometry::Mesh;
use crate::{fmt_f64, Error, Result};

/// Nodal values at one time level.
#[derive(Clone, Copy)]
pub struct ValueField<'a> {
    mesh: &'a Mesh,
    values: &'a [f64],
    /// Time this level lives at.
    pub t: f64,
}

impl<'a> ValueField<'a> {
    pub fn new(mesh: &'a Mesh, values: &'a [f64], t: f64) -> Result<Self> {
        if values.len() != mesh.n_vertices() {
            return Err(Error::Config(format!(
                "field has {} values for {} vertices",
                values.len(),
                mesh.n_vertices()
            )));
        }
        Ok(ValueField { mesh, values, t })
    }

    pub fn mesh(&self) -> &'a Mesh {
        self.mesh
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let (idx, w) = stencil(self.mesh, x)?;
        Ok(apply_stencil(&idx, &w, self.values))
    }

    /// One `x1,...,xd,value` row per vertex, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let dim = self.mesh.dim();
        let mut out = String::new();
        out.push_str(if dim == 1 {
            "x1,value\n"
        } else {
            "x1,x2,value\n"
        });
        for i in 0..self.mesh.n_vertices() {
            for c in self.mesh.vertex(i) {
                out.push_str(&fmt_f64(*c));
                out.push(',');
            }
            out.push_str(&fmt_f64(self.values[i]));
            out.push('\n');
        }
        out
    }
}

/// Vertex indices and convex weights for evaluating any nodal field at `x`.
/// In 1D the third slot is a zero weight on vertex 0.
pub fn stencil(mesh: &Mesh, x: &[f64]) -> Result<([u32; 3], [f64; 3])> {
    let hit = mesh.locate(x)?;
    let el = mesh.element_vertices(hit.element);
    let mut idx = [0u32; 3];
    let mut w = [0.0f64; 3];
    let k = mesh.dim() + 1;
    idx[..k].copy_from_slice(el);
    w[..k].copy_from_slice(&hit.bary[..k]);
    let mut sum = 0.0;
    let mut clamped = false;
    for wi in &mut w[..k] {
        if *wi < 0.0 {
            *wi = 0.0;
            clamped = true;
        }
        sum += *wi;
    }
    if clamped {
        for wi in &mut w[..k] {
            *wi /= sum;
        }
    }
    Ok((idx, w))
}

#[inline]
pub fn apply_stencil(idx: &[u32; 3], w: &[f64; 3], values: &[f64]) -> f64 {
    w[0] * values[idx[0] as usize] + w[1] * values[idx[1] as usize] + w[2] * values[idx[2] as usize]
}

pub fn interpolate(field: &ValueField, x: &[f64]) -> Result<f64> {
    field.eval(x)
}
