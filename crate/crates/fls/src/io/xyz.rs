//! Plain-text clouds: one point per line, whitespace-separated coordinates,
//! `#` starts a comment.

use std::io::Write;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::Result;
use crate::io::{io_err, ParseError};

pub(crate) fn load(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut dim = 0usize;
    let mut data = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut coords = Vec::with_capacity(3);
        for token in line.split_whitespace() {
            let value: f64 = token.parse().map_err(|_| {
                ParseError::at_line(path, line_no, format!("invalid number {token:?}"))
            })?;
            coords.push(value);
        }
        if dim == 0 {
            dim = coords.len();
            if !(1..=3).contains(&dim) {
                return Err(ParseError::at_line(
                    path,
                    line_no,
                    format!("{dim} columns; expected 1 to 3 coordinates per line"),
                ));
            }
        } else if coords.len() != dim {
            return Err(ParseError::at_line(
                path,
                line_no,
                format!("{} columns, expected {dim}", coords.len()),
            ));
        }
        data.extend(coords);
    }
    if data.is_empty() {
        return Err(ParseError::at_line(path, 1, "no points in file"));
    }
    PointCloud::new(dim, data)
}

pub(crate) fn write(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for p in cloud.points() {
        let mut first = true;
        for c in p {
            if !first {
                out.push(b' ');
            }
            // 17 significant digits round-trip any f64 exactly.
            write!(out, "{c:.16e}").unwrap();
            first = false;
        }
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn basic_parse() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.xyz");
        std::fs::write(&path, "0 0 0\n1 2 3\n").unwrap();
        let cloud = load(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.point(1), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn comments_and_blanks_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.xyz");
        std::fs::write(&path, "# header\n\n1 2 3  # trailing\n\n4 5 6\n").unwrap();
        let cloud = load(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.point(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn bad_token_reports_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.xyz");
        std::fs::write(&path, "1 2 3\n4 five 6\n").unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains(":2"), "{err}");
        assert!(err.contains("five"), "{err}");
    }

    #[test]
    fn inconsistent_columns_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.xyz");
        std::fs::write(&path, "1 2 3\n4 5\n").unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.xyz");
        let cloud = PointCloud::new(
            3,
            vec![
                0.1, -0.2, 0.3,
                std::f64::consts::PI, 1e-300, -1.0 / 3.0,
            ],
        )
        .unwrap();
        write(&cloud, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(cloud.coords(), back.coords());
    }
}
