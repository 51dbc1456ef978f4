//! Plain-text mesh files.
//!
//! ```text
//! DIM 2
//! VERTICES 4
//! 0.0 0.0 1
//! 1.0 0.0 1
//! 1.0 1.0 1
//! 0.0 1.0 1
//! ELEMENTS 2
//! 0 1 2
//! 0 2 3
//! ```
//!
//! Each vertex line holds the coordinates followed by a flag, 1 on the
//! boundary and 0 inside. Element lines hold dim+1 zero-based vertex
//! indices. `#` starts a comment, blank lines are skipped. Coordinates are
//! written with 17 significant digits so a save/load cycle reproduces the
//! exact same floating-point values.

use super::Mesh;
use crate::{fmt_f64, Error, Result};
use std::path::Path;

pub fn mesh_to_string(mesh: &Mesh) -> String {
    let dim = mesh.dim();
    let n = mesh.n_vertices();
    let m = mesh.n_elements();
    let mut out = String::new();
    out.push_str(&format!("DIM {dim}\n"));
    out.push_str(&format!("VERTICES {n}\n"));
    for i in 0..n {
        for c in mesh.vertex(i) {
            out.push_str(&fmt_f64(*c));
            out.push(' ');
        }
        out.push_str(if mesh.is_boundary(i) { "1\n" } else { "0\n" });
    }
    out.push_str(&format!("ELEMENTS {m}\n"));
    for e in 0..m {
        let el = mesh.element_vertices(e);
        let row: Vec<String> = el.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn mesh_from_str(text: &str) -> Result<Mesh> {
    // Non-blank lines with comments stripped, tagged with 1-based line numbers.
    struct Cursor<'a> {
        lines: Vec<(usize, &'a str)>,
        pos: usize,
    }
    impl<'a> Cursor<'a> {
        fn next(&mut self) -> Option<(usize, &'a str)> {
            let item = self.lines.get(self.pos).copied();
            self.pos += 1;
            item
        }
        fn expect(&mut self, kw: &str) -> Result<(usize, Vec<&'a str>)> {
            let (ln, body) = self.next().ok_or_else(|| Error::MeshParse {
                line: 0,
                msg: format!("unexpected end of file, expected {kw}"),
            })?;
            let mut toks = body.split_whitespace();
            let head = toks.next().unwrap();
            if head != kw {
                return Err(Error::MeshParse {
                    line: ln,
                    msg: format!("expected {kw}, found {head}"),
                });
            }
            Ok((ln, toks.collect()))
        }
    }
    let mut lines = Cursor {
        lines: text
            .lines()
            .enumerate()
            .filter_map(|(i, raw)| {
                let body = match raw.find('#') {
                    Some(p) => &raw[..p],
                    None => raw,
                };
                let body = body.trim();
                if body.is_empty() {
                    None
                } else {
                    Some((i + 1, body))
                }
            })
            .collect(),
        pos: 0,
    };

    let fail = |line: usize, msg: String| Error::MeshParse { line, msg };

    let (ln, args) = lines.expect("DIM")?;
    if args.len() != 1 {
        return Err(fail(ln, "DIM takes exactly one value".into()));
    }
    let dim: usize = args[0]
        .parse()
        .map_err(|_| fail(ln, format!("invalid dimension {:?}", args[0])))?;
    if dim != 1 && dim != 2 {
        return Err(fail(ln, format!("dimension {dim} not supported (1 or 2)")));
    }

    let (ln, args) = lines.expect("VERTICES")?;
    if args.len() != 1 {
        return Err(fail(ln, "VERTICES takes exactly one value".into()));
    }
    let n: usize = args[0]
        .parse()
        .map_err(|_| fail(ln, format!("invalid vertex count {:?}", args[0])))?;

    let mut coords = Vec::with_capacity(n * dim);
    let mut flags = Vec::with_capacity(n);
    for k in 0..n {
        let (ln, body) = lines
            .next()
            .ok_or_else(|| fail(0, format!("file ends inside vertex list ({k} of {n} read)")))?;
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != dim + 1 {
            return Err(fail(
                ln,
                format!(
                    "vertex line needs {} coordinates and a flag, found {} fields",
                    dim,
                    toks.len()
                ),
            ));
        }
        for t in &toks[..dim] {
            let v: f64 = t
                .parse()
                .map_err(|_| fail(ln, format!("invalid coordinate {t:?}")))?;
            if !v.is_finite() {
                return Err(fail(ln, format!("non-finite coordinate {t:?}")));
            }
            coords.push(v);
        }
        flags.push(match toks[dim] {
            "0" => false,
            "1" => true,
            other => {
                return Err(fail(
                    ln,
                    format!("boundary flag must be 0 or 1, found {other:?}"),
                ))
            }
        });
    }

    let (ln, args) = lines.expect("ELEMENTS")?;
    if args.len() != 1 {
        return Err(fail(ln, "ELEMENTS takes exactly one value".into()));
    }
    let m: usize = args[0]
        .parse()
        .map_err(|_| fail(ln, format!("invalid element count {:?}", args[0])))?;

    let mut elements = Vec::with_capacity(m * (dim + 1));
    for k in 0..m {
        let (ln, body) = lines.next().ok_or_else(|| {
            fail(
                0,
                format!("file ends inside element list ({k} of {m} read)"),
            )
        })?;
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != dim + 1 {
            return Err(fail(
                ln,
                format!(
                    "element line needs {} vertex indices, found {}",
                    dim + 1,
                    toks.len()
                ),
            ));
        }
        for t in &toks {
            let v: u64 = t
                .parse()
                .map_err(|_| fail(ln, format!("invalid vertex index {t:?}")))?;
            if v >= n as u64 {
                return Err(fail(
                    ln,
                    format!("vertex index {v} out of range ({n} vertices)"),
                ));
            }
            elements.push(v as u32);
        }
    }

    if let Some((ln, body)) = lines.next() {
        return Err(fail(
            ln,
            format!("unexpected content after element list: {body:?}"),
        ));
    }

    Mesh::from_parts(dim, coords, flags, elements, None)
}

pub fn save_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, mesh_to_string(mesh))?;
    Ok(())
}

pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    mesh_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT_SQUARE: &str = "\
# two triangles
DIM 2
VERTICES 4
0.0 0.0 1
1.0 0.0 1
1.0 1.0 1
0.0 1.0 1
ELEMENTS 2
0 1 2
0 2 3
";

    #[test]
    fn parses_unit_square() {
        let m = mesh_from_str(UNIT_SQUARE).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_elements(), 2);
        assert_eq!(m.interior_vertices().len(), 0);
    }

    #[test]
    fn repeated_vertex_index_is_degenerate() {
        let text = UNIT_SQUARE.replace("0 1 2", "0 1 1");
        let err = mesh_from_str(&text).unwrap_err();
        assert!(matches!(err, Error::MeshInvalid(ref msg) if msg.contains("degenerate")));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = UNIT_SQUARE.replace("1.0 1.0 1", "1.0 1.0 7");
        match mesh_from_str(&text).unwrap_err() {
            Error::MeshParse { line, msg } => {
                assert_eq!(line, 6);
                assert!(msg.contains("flag"));
            }
            other => panic!("unexpected error {other:?}"),
        }
        match mesh_from_str("DIM 3\n").unwrap_err() {
            Error::MeshParse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn roundtrip_is_bitwise_exact() {
        let orig = Mesh::build_disk_mesh(1.0, 0.4).unwrap();
        let text = mesh_to_string(&orig);
        let back = mesh_from_str(&text).unwrap();
        assert_eq!(orig.n_vertices(), back.n_vertices());
        assert_eq!(orig.n_elements(), back.n_elements());
        for i in 0..orig.n_vertices() {
            assert_eq!(orig.vertex(i), back.vertex(i), "vertex {i}");
            assert_eq!(orig.is_boundary(i), back.is_boundary(i));
        }
        for e in 0..orig.n_elements() {
            assert_eq!(orig.element_vertices(e), back.element_vertices(e));
        }
    }

    #[test]
    fn loaded_rect_mesh_reconstructs_convex_hull() {
        let grid = Mesh::build_rect_grid([0.0, 0.0], [1.0, 1.0], 4, 3).unwrap();
        let back = mesh_from_str(&mesh_to_string(&grid)).unwrap();
        // Hull polygon contains the same points as the exact rectangle.
        for p in [[0.5, 0.5], [0.01, 0.01], [0.99, 0.7]] {
            assert!(back.domain().inside(&p));
        }
        assert!(!back.domain().inside(&[1.01, 0.5]));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("square.mesh");
        let m = Mesh::build_rect_grid([0.0, 0.0], [1.0, 1.0], 2, 2).unwrap();
        save_mesh(&m, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.n_vertices(), 9);
    }
}
