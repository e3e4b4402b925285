use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{Point, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    /// Read-only; faces are ignored.
    Off,
    PlyAscii,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        ext.parse()
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" => Ok(CloudFormat::Xyz),
            "off" => Ok(CloudFormat::Off),
            "ply" | "ply_ascii" => Ok(CloudFormat::PlyAscii),
            other => Err(Error::invalid(format!("unknown point cloud format '{other}'"))),
        }
    }
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let points = match format {
        CloudFormat::Xyz => parse_xyz(path, &text)?,
        CloudFormat::Off => parse_off(path, &text)?,
        CloudFormat::PlyAscii => parse_ply(path, &text)?,
    };
    let mut cloud = PointCloud::new(points).map_err(|e| parse_err(path, 0, e.to_string()))?;
    cloud.source_path = Some(path.display().to_string());
    Ok(cloud)
}

pub fn write_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let mut out = String::with_capacity(cloud.len() * 40);
    match format {
        CloudFormat::Xyz => {}
        CloudFormat::PlyAscii => {
            out.push_str("ply\nformat ascii 1.0\n");
            let _ = writeln!(out, "element vertex {}", cloud.len());
            out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
        }
        CloudFormat::Off => return Err(Error::invalid("OFF is a read-only format")),
    }
    for p in &cloud.points {
        let _ = writeln!(out, "{} {} {}", sig9(p[0]), sig9(p[1]), sig9(p[2]));
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Positional decimal with 9 significant digits, which round-trips any f32.
pub(crate) fn sig9(v: f32) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let x = f64::from(v);
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (8 - exponent).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_point(path: &Path, line_no: usize, fields: &[&str]) -> Result<Point> {
    if fields.len() < 3 {
        return Err(parse_err(path, line_no, format!("expected 3 coordinates, found {}", fields.len())));
    }
    let mut p = [0.0f32; 3];
    for (d, tok) in fields.iter().take(3).enumerate() {
        p[d] = tok
            .parse::<f32>()
            .map_err(|_| parse_err(path, line_no, format!("non-numeric token '{tok}'")))?;
    }
    Ok(p)
}

fn parse_xyz(path: &Path, text: &str) -> Result<Vec<Point>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(path, i + 1, format!("expected 3 coordinates, found {}", fields.len())));
        }
        points.push(parse_point(path, i + 1, &fields)?);
    }
    Ok(points)
}

/// Content lines with their 1-based line numbers, comments and blanks removed.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_off(path: &Path, text: &str) -> Result<Vec<Point>> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, "OFF")) => {}
        Some((n, other)) => return Err(parse_err(path, n, format!("expected 'OFF' header, found '{other}'"))),
        None => return Err(parse_err(path, 1, "empty file")),
    }
    let (counts_line, counts) = lines
        .next()
        .ok_or_else(|| parse_err(path, 2, "missing counts line"))?;
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(path, counts_line, format!("bad count '{t}'"))))
        .collect::<Result<_>>()?;
    if counts.len() != 3 {
        return Err(parse_err(path, counts_line, "counts line must be 'V F E'"));
    }
    let vertices = counts[0];
    let mut points = Vec::with_capacity(vertices);
    let mut last = counts_line;
    for (n, line) in lines.take(vertices) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        points.push(parse_point(path, n, &fields)?);
        last = n;
    }
    if points.len() != vertices {
        return Err(parse_err(
            path,
            last,
            format!("declared {vertices} vertices but found {}", points.len()),
        ));
    }
    Ok(points)
}

fn parse_ply(path: &Path, text: &str) -> Result<Vec<Point>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    if !matches!(lines.next(), Some((_, "ply"))) {
        return Err(parse_err(path, 1, "missing 'ply' magic"));
    }
    let mut vertices = None;
    let mut props = Vec::new();
    let mut header_end = None;
    for (n, line) in lines.by_ref() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(parse_err(path, n, format!("unsupported PLY format '{other}'"))),
            ["comment", ..] | [] => {}
            ["element", "vertex", count] => {
                vertices = Some(
                    count
                        .parse::<usize>()
                        .map_err(|_| parse_err(path, n, format!("bad vertex count '{count}'")))?,
                );
            }
            ["element", ..] => return Err(parse_err(path, n, "only a vertex element is supported")),
            ["property", "float" | "double", name] => props.push(name.to_string()),
            ["property", ..] => return Err(parse_err(path, n, "unsupported property type")),
            ["end_header"] => {
                header_end = Some(n);
                break;
            }
            _ => return Err(parse_err(path, n, format!("unexpected header line '{line}'"))),
        }
    }
    let header_end = header_end.ok_or_else(|| parse_err(path, 1, "missing end_header"))?;
    let vertices = vertices.ok_or_else(|| parse_err(path, header_end, "missing vertex element"))?;
    if props != ["x", "y", "z"] {
        return Err(parse_err(path, header_end, format!("expected properties x y z, found {props:?}")));
    }
    let mut points = Vec::with_capacity(vertices);
    let mut last = header_end;
    for (n, line) in lines.filter(|(_, l)| !l.is_empty()).take(vertices) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(path, n, format!("expected 3 values, found {}", fields.len())));
        }
        points.push(parse_point(path, n, &fields)?);
        last = n;
    }
    if points.len() != vertices {
        return Err(parse_err(
            path,
            last,
            format!("declared {vertices} vertices but found {}", points.len()),
        ));
    }
    Ok(points)
}
