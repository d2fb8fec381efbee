//! Cloud and mesh ingestion: XYZ text, PLY (ascii and binary little-endian),
//! OBJ with surface sampling. Every malformed input turns into a typed
//! [`ParseError`] carrying the file position; nothing panics.

mod obj;
mod ply;
mod sample;
mod xyz;

use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub use sample::sample_mesh;

#[derive(Debug, thiserror::Error)]
pub struct ParseError {
    pub path: String,
    pub line: Option<usize>,
    pub byte_offset: Option<u64>,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.path)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(offset) = self.byte_offset {
            write!(f, " (byte {offset})")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl ParseError {
    pub(crate) fn at_line(path: &Path, line: usize, message: impl Into<String>) -> Error {
        Error::Parse(ParseError {
            path: path.display().to_string(),
            line: Some(line),
            byte_offset: None,
            message: message.into(),
        })
    }

    pub(crate) fn at_offset(path: &Path, offset: u64, message: impl Into<String>) -> Error {
        Error::Parse(ParseError {
            path: path.display().to_string(),
            line: None,
            byte_offset: Some(offset),
            message: message.into(),
        })
    }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    PlyAscii,
    PlyBinary,
}

/// Triangle soup loaded from an OBJ file. Zero-area faces are dropped at
/// load time; `dropped_degenerate` reports how many.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub dropped_degenerate: usize,
}

impl TriangleMesh {
    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cx = u[1] * v[2] - u[2] * v[1];
        let cy = u[2] * v[0] - u[0] * v[2];
        let cz = u[0] * v[1] - u[1] * v[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    }
}

/// Loads a point cloud, detecting the format from the extension
/// (`.ply` vs anything else = XYZ text) unless one is forced.
pub fn load_cloud(path: impl AsRef<Path>, format: Option<CloudFormat>) -> Result<PointCloud> {
    let path = path.as_ref();
    let is_ply = match format {
        Some(CloudFormat::Xyz) => false,
        Some(_) => true,
        None => path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("ply"))
            .unwrap_or(false),
    };
    let cloud = if is_ply {
        ply::load(path)?
    } else {
        xyz::load(path)?
    };
    Ok(match path.file_stem().and_then(|s| s.to_str()) {
        Some(stem) => cloud.with_name(stem),
        None => cloud,
    })
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        CloudFormat::Xyz => xyz::write(cloud, path),
        CloudFormat::PlyAscii => ply::write(cloud, path, false),
        CloudFormat::PlyBinary => ply::write(cloud, path, true),
    }
}

/// Loads a triangle mesh from an OBJ file.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    obj::load(path.as_ref())
}
