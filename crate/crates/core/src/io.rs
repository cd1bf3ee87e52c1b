//! File formats: field dumps, contour and label CSVs, surface tension
//! files and 8-bit PGM images.
//!
//! A field dump starts with the text line `nx ny lx ly boundary`. Files
//! ending in `.bin` continue with `nx * ny` little-endian `f64` values,
//! anything else with `ny` comma separated rows of `nx` values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Boundary, FrontPolyline, GridSpec, Point, ScalarField2D};
use crate::multiphase::SurfaceTensionMatrix;
use crate::tdyn::PartitionField;

fn header(spec: &GridSpec) -> String {
    format!("{} {} {} {} {}\n", spec.nx(), spec.ny(), spec.lx(), spec.ly(), spec.boundary())
}

fn parse_header(line: &str) -> Result<GridSpec> {
    let t: Vec<&str> = line.split_whitespace().collect();
    if t.len() != 5 {
        return Err(Error::Parse(format!("field header needs 'nx ny lx ly boundary', got '{line}'")));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("bad grid size '{s}': {e}")));
    let real = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("bad domain size '{s}': {e}")));
    GridSpec::new(int(t[0])?, int(t[1])?, real(t[2])?, real(t[3])?, t[4].parse::<Boundary>()?)
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

pub fn write_field(path: &Path, field: &ScalarField2D) -> Result<()> {
    let spec = field.spec();
    let mut bytes = header(spec).into_bytes();
    if is_binary(path) {
        for v in field.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    } else {
        let mut s = String::new();
        for row in field.values().chunks(spec.nx()) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        bytes.extend_from_slice(s.as_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<ScalarField2D> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse(format!("{}: missing header line", path.display())))?;
    let head = std::str::from_utf8(&bytes[..nl]).map_err(|e| Error::Parse(e.to_string()))?;
    let spec = parse_header(head.trim())?;
    let body = &bytes[nl + 1..];
    let values: Vec<f64> = if is_binary(path) {
        if body.len() != 8 * spec.len() {
            return Err(Error::Parse(format!("expected {} bytes of data, found {}", 8 * spec.len(), body.len())));
        }
        body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
    } else {
        let text = std::str::from_utf8(body).map_err(|e| Error::Parse(e.to_string()))?;
        text.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("bad value '{t}': {e}"))))
            .collect::<Result<_>>()?
    };
    ScalarField2D::new(spec, values)
}

/// CSV with header `curve_id,x,y`; closed curves repeat their first point.
pub fn polylines_to_csv(curves: &[FrontPolyline]) -> String {
    let mut s = String::from("curve_id,x,y\n");
    for (id, c) in curves.iter().enumerate() {
        for p in c.points() {
            let _ = writeln!(s, "{id},{:.17e},{:.17e}", p.x, p.y);
        }
        if c.is_closed() {
            let p = c.points()[0];
            let _ = writeln!(s, "{id},{:.17e},{:.17e}", p.x, p.y);
        }
    }
    s
}

pub fn polylines_from_csv(text: &str) -> Result<Vec<FrontPolyline>> {
    let mut groups: Vec<(usize, Vec<Point>)> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split(',').map(str::trim).collect();
        if t.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected curve_id,x,y", n + 1)));
        }
        let bad = |e: String| Error::Parse(format!("line {}: {e}", n + 1));
        let id: usize = t[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        let x: f64 = t[1].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        let y: f64 = t[2].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        match groups.last_mut() {
            Some((g, pts)) if *g == id => pts.push(Point::new(x, y)),
            _ => groups.push((id, vec![Point::new(x, y)])),
        }
    }
    groups
        .into_iter()
        .map(|(_, mut pts)| {
            let closed = pts.len() > 3 && pts.first() == pts.last();
            if closed {
                pts.pop();
            }
            FrontPolyline::new(pts, closed)
        })
        .collect()
}

/// Label grid as `ny` CSV rows of 1-based phase labels.
pub fn labels_to_csv(part: &PartitionField) -> String {
    let mut s = String::new();
    for row in part.labels().chunks(part.spec().nx()) {
        let cells: Vec<String> = row.iter().map(|l| (l + 1).to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn labels_from_csv(text: &str, spec: GridSpec, n_phases: usize) -> Result<PartitionField> {
    let labels = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<u16>() {
            Ok(l) if l >= 1 => Ok(l - 1),
            _ => Err(Error::Parse(format!("bad phase label '{t}'"))),
        })
        .collect::<Result<Vec<u16>>>()?;
    PartitionField::new(spec, labels, n_phases)
}

pub fn read_sigma(path: &Path) -> Result<SurfaceTensionMatrix> {
    SurfaceTensionMatrix::parse(&fs::read_to_string(path)?)
}

/// Reads a binary (P5) 8-bit PGM as values in `[0, 1]`. Image row `r` is
/// grid row `j = r`; the cell size is `1 / width`.
pub fn read_pgm(path: &Path, boundary: Boundary) -> Result<ScalarField2D> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Parse("only binary PGM (P5) is supported".into()));
    }
    let num = |s: String| s.parse::<usize>().map_err(|e| Error::Parse(format!("bad PGM header value '{s}': {e}")));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("only 8-bit PGM is supported, maxval {maxval}")));
    }
    let data = &bytes[pos + 1..];
    if data.len() < w * h {
        return Err(Error::Parse(format!("PGM data has {} bytes, expected {}", data.len(), w * h)));
    }
    let spec = GridSpec::new(w, h, 1.0, h as f64 / w as f64, boundary)?;
    ScalarField2D::new(spec, data[..w * h].iter().map(|&b| b as f64 / maxval as f64).collect())
}

/// Writes values clamped to `[0, 1]` as an 8-bit P5 PGM.
pub fn write_pgm(path: &Path, field: &ScalarField2D) -> Result<()> {
    let spec = field.spec();
    let mut bytes = format!("P5\n{} {}\n255\n", spec.nx(), spec.ny()).into_bytes();
    bytes.extend(field.values().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(5, 4, 1.0, 0.8, Boundary::Reflect).unwrap();
        let f = ScalarField2D::from_fn(spec, |p| p.x.sin() - 1e-20 * p.y);
        for name in ["f.csv", "f.bin"] {
            let path = dir.path().join(name);
            write_field(&path, &f).unwrap();
            assert_eq!(read_field(&path).unwrap(), f);
        }
    }

    #[test]
    fn polylines_round_trip() {
        let a = FrontPolyline::circle(Point::new(0.5, 0.5), 0.2, 12);
        let b = FrontPolyline::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.5)], false).unwrap();
        let back = polylines_from_csv(&polylines_to_csv(&[a.clone(), b.clone()])).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn labels_round_trip() {
        let spec = GridSpec::unit(4).unwrap();
        let part = PartitionField::new(spec, (0..16).map(|k| (k % 3) as u16).collect(), 3).unwrap();
        let csv = labels_to_csv(&part);
        assert!(csv.starts_with("1,2,3,1\n"));
        assert_eq!(labels_from_csv(&csv, spec, 3).unwrap(), part);
        assert!(labels_from_csv("0,1", spec, 3).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(6, 4, 1.0, 4.0 / 6.0, Boundary::Reflect).unwrap();
        let f = ScalarField2D::new(spec, (0..24).map(|k| k as f64 / 255.0).collect()).unwrap();
        let path = dir.path().join("a.pgm");
        write_pgm(&path, &f).unwrap();
        let g = read_pgm(&path, Boundary::Reflect).unwrap();
        assert!(f.max_abs_diff(&g) < 1e-12);
        fs::write(&path, b"P2\n1 1\n255\n0").unwrap();
        assert!(read_pgm(&path, Boundary::Reflect).is_err());
    }

    #[test]
    fn pgm_header_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# made by hand\n4 4\n# max\n255\n".to_vec();
        bytes.extend_from_slice(&[51; 16]);
        let n = bytes.len();
        bytes[n - 16] = 255;
        fs::write(&path, bytes).unwrap();
        let g = read_pgm(&path, Boundary::Clamped).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.get(3, 3), 0.2);
    }
}
