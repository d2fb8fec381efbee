//! PLY reader/writer covering the subset registration needs: `ascii` and
//! `binary_little_endian` files whose vertex element has scalar `x`, `y`,
//! `z` properties (float or double); other properties are skipped.
//! Big-endian files are rejected rather than misread.

use std::io::Write;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::Result;
use crate::io::{io_err, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(token: &str) -> Option<Self> {
        match token {
            "char" | "int8" => Some(Scalar::I8),
            "uchar" | "uint8" => Some(Scalar::U8),
            "short" | "int16" => Some(Scalar::I16),
            "ushort" | "uint16" => Some(Scalar::U16),
            "int" | "int32" => Some(Scalar::I32),
            "uint" | "uint32" => Some(Scalar::U32),
            "float" | "float32" => Some(Scalar::F32),
            "double" | "float64" => Some(Scalar::F64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            Scalar::I8 => bytes[0] as i8 as f64,
            Scalar::U8 => bytes[0] as f64,
            Scalar::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: Scalar,
    is_list: bool,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    /// Byte offset just past `end_header\n`.
    body_start: usize,
    header_lines: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut lines = Vec::new();
    // Header is ASCII lines terminated by '\n' (tolerating '\r\n').
    loop {
        let rest = &bytes[offset..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| {
            ParseError::at_line(path, line_no + 1, "header not terminated by end_header")
        })?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| ParseError::at_line(path, line_no + 1, "non-ASCII header line"))?
            .trim_end_matches('\r')
            .to_string();
        offset += end + 1;
        line_no += 1;
        let done = line.trim() == "end_header";
        lines.push(line);
        if done {
            break;
        }
        if line_no > 10_000 {
            return Err(ParseError::at_line(path, line_no, "header too large"));
        }
    }

    if lines.first().map(|l| l.trim()) != Some("ply") {
        return Err(ParseError::at_line(path, 1, "missing 'ply' magic"));
    }

    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let line_no = idx + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            None | Some("comment") | Some("obj_info") | Some("end_header") => continue,
            Some("format") => {
                let kind = tokens.next().unwrap_or("");
                encoding = Some(match kind {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLittleEndian,
                    "binary_big_endian" => {
                        return Err(ParseError::at_line(
                            path,
                            line_no,
                            "binary_big_endian files are not supported",
                        ))
                    }
                    other => {
                        return Err(ParseError::at_line(
                            path,
                            line_no,
                            format!("unknown format {other:?}"),
                        ))
                    }
                });
            }
            Some("element") => {
                let name = tokens.next().unwrap_or("").to_string();
                let count: usize = tokens
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| ParseError::at_line(path, line_no, "bad element count"))?;
                elements.push(Element {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements.last_mut().ok_or_else(|| {
                    ParseError::at_line(path, line_no, "property before any element")
                })?;
                let first = tokens.next().unwrap_or("");
                if first == "list" {
                    // list <count-type> <item-type> <name>
                    let _count_type = tokens.next();
                    let item = tokens.next().unwrap_or("");
                    let kind = Scalar::parse(item).ok_or_else(|| {
                        ParseError::at_line(path, line_no, format!("unknown type {item:?}"))
                    })?;
                    let name = tokens.next().unwrap_or("").to_string();
                    element.properties.push(Property {
                        name,
                        kind,
                        is_list: true,
                    });
                } else {
                    let kind = Scalar::parse(first).ok_or_else(|| {
                        ParseError::at_line(path, line_no, format!("unknown type {first:?}"))
                    })?;
                    let name = tokens.next().unwrap_or("").to_string();
                    element.properties.push(Property {
                        name,
                        kind,
                        is_list: false,
                    });
                }
            }
            Some(other) => {
                return Err(ParseError::at_line(
                    path,
                    line_no,
                    format!("unknown header keyword {other:?}"),
                ))
            }
        }
    }

    Ok(Header {
        encoding: encoding
            .ok_or_else(|| ParseError::at_line(path, 1, "header has no format line"))?,
        elements,
        body_start: offset,
        header_lines: line_no,
    })
}

pub(crate) fn load(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let header = parse_header(path, &bytes)?;

    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| ParseError::at_line(path, 1, "no vertex element"))?;
    let vertex = &header.elements[vertex_pos];
    if vertex.count == 0 {
        return Err(ParseError::at_line(path, 1, "vertex element has zero entries"));
    }
    let coord_cols: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|name| {
            vertex
                .properties
                .iter()
                .position(|p| p.name == *name && !p.is_list)
                .ok_or_else(|| {
                    ParseError::at_line(path, 1, format!("vertex element lacks property {name}"))
                })
        })
        .collect::<Result<_>>()?;
    for (i, p) in vertex.properties.iter().enumerate() {
        if coord_cols.contains(&i) && !matches!(p.kind, Scalar::F32 | Scalar::F64) {
            return Err(ParseError::at_line(
                path,
                1,
                format!("coordinate property {} must be float or double", p.name),
            ));
        }
    }

    match header.encoding {
        Encoding::Ascii => load_ascii(path, &bytes, &header, vertex_pos, &coord_cols),
        Encoding::BinaryLittleEndian => load_binary(path, &bytes, &header, vertex_pos, &coord_cols),
    }
}

fn load_ascii(
    path: &Path,
    bytes: &[u8],
    header: &Header,
    vertex_pos: usize,
    coord_cols: &[usize],
) -> Result<PointCloud> {
    let body = std::str::from_utf8(&bytes[header.body_start..])
        .map_err(|_| ParseError::at_line(path, header.header_lines + 1, "body is not text"))?;
    let mut lines = body.lines().enumerate();
    let mut data = Vec::new();
    for element_idx in 0..header.elements.len() {
        let element = &header.elements[element_idx];
        for _ in 0..element.count {
            let (idx, line) = lines.next().ok_or_else(|| {
                ParseError::at_line(
                    path,
                    header.header_lines,
                    format!("file ends inside element {}", element.name),
                )
            })?;
            let line_no = header.header_lines + idx + 1;
            if element_idx != vertex_pos {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() < element.properties.len() {
                return Err(ParseError::at_line(
                    path,
                    line_no,
                    format!(
                        "{} values, expected {}",
                        tokens.len(),
                        element.properties.len()
                    ),
                ));
            }
            for &col in coord_cols {
                let value: f64 = tokens[col].parse().map_err(|_| {
                    ParseError::at_line(path, line_no, format!("invalid number {:?}", tokens[col]))
                })?;
                data.push(value);
            }
        }
        if element_idx == vertex_pos {
            break;
        }
    }
    PointCloud::new(3, data)
}

fn load_binary(
    path: &Path,
    bytes: &[u8],
    header: &Header,
    vertex_pos: usize,
    coord_cols: &[usize],
) -> Result<PointCloud> {
    let mut offset = header.body_start;
    // Elements preceding vertex must be fixed-size so we can skip them.
    for element in &header.elements[..vertex_pos] {
        if element.properties.iter().any(|p| p.is_list) {
            return Err(ParseError::at_offset(
                path,
                offset as u64,
                format!(
                    "cannot skip binary element {:?} with list properties before vertex data",
                    element.name
                ),
            ));
        }
        let row: usize = element.properties.iter().map(|p| p.kind.size()).sum();
        offset += row * element.count;
    }
    let vertex = &header.elements[vertex_pos];
    let row: usize = vertex.properties.iter().map(|p| p.kind.size()).sum();
    if vertex.properties.iter().any(|p| p.is_list) {
        return Err(ParseError::at_offset(
            path,
            offset as u64,
            "list properties in the vertex element are not supported",
        ));
    }
    let needed = offset + row * vertex.count;
    if bytes.len() < needed {
        return Err(ParseError::at_offset(
            path,
            bytes.len() as u64,
            format!(
                "truncated payload: need {needed} bytes, file has {}",
                bytes.len()
            ),
        ));
    }

    let mut col_offsets = vec![0usize; vertex.properties.len()];
    let mut acc = 0;
    for (i, p) in vertex.properties.iter().enumerate() {
        col_offsets[i] = acc;
        acc += p.kind.size();
    }

    let mut data = Vec::with_capacity(vertex.count * 3);
    for v in 0..vertex.count {
        let base = offset + v * row;
        for &col in coord_cols {
            let p = &vertex.properties[col];
            data.push(p.kind.read_le(&bytes[base + col_offsets[col]..]));
        }
    }
    PointCloud::new(3, data)
}

pub(crate) fn write(cloud: &PointCloud, path: &Path, binary: bool) -> Result<()> {
    if cloud.dim() != 3 {
        return Err(crate::error::Error::UnsupportedDimension(cloud.dim()));
    }
    let mut out = Vec::new();
    let format = if binary { "binary_little_endian" } else { "ascii" };
    write!(
        out,
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )
    .unwrap();
    if binary {
        for c in cloud.coords() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    } else {
        for p in cloud.points() {
            writeln!(out, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]).unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn ascii_ply_three_vertices() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0.5 0.25 -1\n",
        )
        .unwrap();
        let cloud = load(&path).unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.point(2), &[0.5, 0.25, -1.0]);
    }

    #[test]
    fn binary_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.ply");
        let cloud = PointCloud::new(
            3,
            vec![
                std::f64::consts::PI,
                -1.0 / 3.0,
                1e-308,
                f64::MIN_POSITIVE,
                42.0,
                -0.0,
            ],
        )
        .unwrap();
        write(&cloud, &path, true).unwrap();
        let back = load(&path).unwrap();
        let orig: Vec<u64> = cloud.coords().iter().map(|c| c.to_bits()).collect();
        let got: Vec<u64> = back.coords().iter().map(|c| c.to_bits()).collect();
        assert_eq!(orig, got);
    }

    #[test]
    fn ascii_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.ply");
        let cloud = PointCloud::new(3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap();
        write(&cloud, &path, false).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(cloud.coords(), back.coords());
    }

    #[test]
    fn extra_vertex_properties_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.ply");
        let mut bytes = Vec::new();
        write!(
            bytes,
            "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty uchar red\nproperty double x\nproperty double y\nproperty double z\nend_header\n"
        )
        .unwrap();
        for (r, p) in [(7u8, [1.0f64, 2.0, 3.0]), (9u8, [4.0, 5.0, 6.0])] {
            bytes.push(r);
            for c in p {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        std::fs::write(&path, bytes).unwrap();
        let cloud = load(&path).unwrap();
        assert_eq!(cloud.point(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn big_endian_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.ply");
        std::fs::write(
            &path,
            "ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        )
        .unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("big_endian"), "{err}");
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.ply");
        let mut bytes = Vec::new();
        write!(
            bytes,
            "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n"
        )
        .unwrap();
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(err.contains("byte"), "{err}");
    }
}
