//! OBJ mesh loading restricted to geometry: `v` records and `f` records with
//! fan triangulation of polygons. Normals, textures and materials are
//! ignored.

use std::path::Path;

use crate::error::Result;
use crate::io::{io_err, ParseError, TriangleMesh};

fn parse_face_index(
    path: &Path,
    line_no: usize,
    token: &str,
    vertex_count: usize,
) -> Result<usize> {
    // Accept v, v/vt, v//vn, v/vt/vn; only the vertex index matters.
    let raw = token.split('/').next().unwrap_or("");
    let idx: i64 = raw.parse().map_err(|_| {
        ParseError::at_line(path, line_no, format!("invalid face index {token:?}"))
    })?;
    let resolved = if idx > 0 {
        (idx - 1) as usize
    } else if idx < 0 {
        // Negative indices are relative to the current end of the vertex list.
        let back = (-idx) as usize;
        if back > vertex_count {
            return Err(ParseError::at_line(
                path,
                line_no,
                format!("relative index {idx} out of range"),
            ));
        }
        vertex_count - back
    } else {
        return Err(ParseError::at_line(path, line_no, "face index 0 is invalid"));
    };
    if resolved >= vertex_count {
        return Err(ParseError::at_line(
            path,
            line_no,
            format!("face index {token:?} exceeds vertex count {vertex_count}"),
        ));
    }
    Ok(resolved)
}

fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

pub(crate) fn load(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut dropped = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    let token = tokens.next().ok_or_else(|| {
                        ParseError::at_line(path, line_no, "vertex needs 3 coordinates")
                    })?;
                    *c = token.parse().map_err(|_| {
                        ParseError::at_line(path, line_no, format!("invalid number {token:?}"))
                    })?;
                }
                vertices.push(coords);
            }
            Some("f") => {
                let corners: Vec<usize> = tokens
                    .map(|t| parse_face_index(path, line_no, t, vertices.len()))
                    .collect::<Result<_>>()?;
                if corners.len() < 3 {
                    return Err(ParseError::at_line(
                        path,
                        line_no,
                        format!("face has {} vertices, need at least 3", corners.len()),
                    ));
                }
                for i in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[i], corners[i + 1]];
                    if triangle_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]) == 0.0 {
                        dropped += 1;
                    } else {
                        faces.push(tri);
                    }
                }
            }
            // vn/vt/vp, groups, materials, smoothing: geometry-irrelevant.
            Some(_) => continue,
            None => continue,
        }
    }

    if faces.is_empty() {
        return Err(ParseError::at_line(
            path,
            1,
            "mesh has no non-degenerate faces",
        ));
    }
    Ok(TriangleMesh {
        vertices,
        faces,
        dropped_degenerate: dropped,
    })
}
