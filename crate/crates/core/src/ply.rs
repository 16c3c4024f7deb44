//! ASCII PLY point clouds: `x y z` as doubles, optional `nx ny nz`, optional
//! `red green blue` as uchar.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Vec3};

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, to_ply_string(cloud))?;
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    parse_ply(&std::fs::read_to_string(path)?)
}

/// Floats use Rust's shortest round-trip formatting (at most 17 significant
/// digits), so reading back yields identical values.
pub fn to_ply_string(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(64 * cloud.len() + 256);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(s, "property double {p}");
    }
    if cloud.normals.is_some() {
        for p in ["nx", "ny", "nz"] {
            let _ = writeln!(s, "property double {p}");
        }
    }
    if cloud.colors.is_some() {
        for p in ["red", "green", "blue"] {
            let _ = writeln!(s, "property uchar {p}");
        }
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = &cloud.normals {
            let _ = write!(s, " {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        if let Some(c) = &cloud.colors {
            let _ = write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        s.push('\n');
    }
    s
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::parse(1, "missing `ply` magic")),
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => return Err(Error::parse(n, format!("unsupported format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse(n, format!("bad element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", _, _, name] | ["property", _, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse(n, "property before any element"))?
                .properties
                .push(name.to_string()),
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(Error::parse(n, format!("unexpected header line `{line}`"))),
        }
    }
    if !saw_format || !header_done {
        return Err(Error::parse(1, "incomplete header"));
    }

    let mut cloud = PointCloud::default();
    for element in &elements {
        if element.name != "vertex" {
            for _ in 0..element.count {
                lines
                    .next()
                    .ok_or_else(|| Error::parse(0, format!("missing `{}` rows", element.name)))?;
            }
            continue;
        }
        let col = |name: &str| element.properties.iter().position(|p| p == name);
        let xyz = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => [x, y, z],
            _ => return Err(Error::parse(0, "vertex element needs x, y and z properties")),
        };
        let normal_cols = match (col("nx"), col("ny"), col("nz")) {
            (Some(x), Some(y), Some(z)) => Some([x, y, z]),
            _ => None,
        };
        let color_cols = match (col("red"), col("green"), col("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        let mut normals = Vec::new();
        let mut colors = Vec::new();
        cloud.points.reserve(element.count);
        for _ in 0..element.count {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, "fewer vertex rows than declared"))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != element.properties.len() {
                return Err(Error::parse(
                    n,
                    format!("expected {} values, got {}", element.properties.len(), vals.len()),
                ));
            }
            let num = |c: usize| -> Result<f64> {
                vals[c]
                    .parse()
                    .map_err(|_| Error::parse(n, format!("bad number `{}`", vals[c])))
            };
            cloud.points.push(Point3::new(num(xyz[0])?, num(xyz[1])?, num(xyz[2])?));
            if let Some(c) = normal_cols {
                normals.push(Vec3::new(num(c[0])?, num(c[1])?, num(c[2])?));
            }
            if let Some(c) = color_cols {
                let byte = |k: usize| -> Result<u8> {
                    vals[c[k]]
                        .parse()
                        .map_err(|_| Error::parse(n, format!("bad color `{}`", vals[c[k]])))
                };
                colors.push([byte(0)?, byte(1)?, byte(2)?]);
            }
        }
        if normal_cols.is_some() {
            cloud.normals = Some(normals);
        }
        if color_cols.is_some() {
            cloud.colors = Some(colors);
        }
    }
    Ok(cloud)
}
