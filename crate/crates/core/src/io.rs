//! ASCII point-cloud and mesh formats (XYZ, PLY, OFF) plus area-weighted
//! surface sampling of triangle meshes.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{Point, PointCloud};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
    #[error("missing OFF header")]
    MissingOffHeader,
    #[error("bad PLY header: {0}")]
    PlyHeader(String),
    #[error("face {face} references vertex {index}, but the mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("unexpected end of file: expected {0}")]
    UnexpectedEof(String),
    #[error("mesh has zero total surface area")]
    ZeroArea,
    #[error("sample count must be at least 1")]
    NoSamples,
}

/// Triangle mesh with validated face indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh<T: Scalar> {
    vertices: Vec<Point<T>>,
    faces: Vec<[usize; 3]>,
}

impl<T: Scalar> TriMesh<T> {
    pub fn new(vertices: Vec<Point<T>>, faces: Vec<[usize; 3]>) -> Result<Self, FormatError> {
        if let Some(i) = vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(FormatError::NonFinite { line: i + 1 });
        }
        for (f, face) in faces.iter().enumerate() {
            if let Some(&index) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(FormatError::FaceIndexOutOfRange {
                    face: f,
                    index,
                    vertex_count: vertices.len(),
                });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, face: usize) -> [Point<T>; 3] {
        self.faces[face].map(|i| self.vertices[i])
    }
}

/// Formats with 6 significant digits, then prints the shortest decimal that
/// reproduces the rounded value.
pub fn format_sig6<T: Scalar>(v: T) -> String {
    let rounded: f64 = format!("{:.5e}", v.as_f64())
        .parse()
        .expect("rounded float parses");
    if rounded == 0.0 {
        return "0".into();
    }
    format!("{rounded}")
}

fn parse_number<T: Scalar>(tok: &str, line: usize) -> Result<T, FormatError> {
    let v: f64 = tok.parse().map_err(|_| FormatError::Parse {
        line,
        message: format!("invalid number {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(FormatError::NonFinite { line });
    }
    let t = T::of(v);
    if !t.is_finite() {
        return Err(FormatError::NonFinite { line });
    }
    Ok(t)
}

fn parse_triple<T: Scalar>(tokens: &[&str], line: usize) -> Result<Point<T>, FormatError> {
    if tokens.len() < 3 {
        return Err(FormatError::Parse {
            line,
            message: format!("expected 3 coordinates, found {}", tokens.len()),
        });
    }
    Ok([
        parse_number(tokens[0], line)?,
        parse_number(tokens[1], line)?,
        parse_number(tokens[2], line)?,
    ])
}

/// One point per line, exactly three numbers; blank lines and `#` comments skipped.
pub fn parse_xyz<T: Scalar>(text: &str) -> Result<PointCloud<T>, FormatError> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(FormatError::Parse {
                line: i + 1,
                message: format!("expected 3 coordinates, found {}", tokens.len()),
            });
        }
        points.push(parse_triple(&tokens, i + 1)?);
    }
    Ok(PointCloud::from_vec_unchecked(points))
}

pub fn write_xyz<T: Scalar>(pc: &PointCloud<T>) -> String {
    let mut out = String::with_capacity(pc.count() * 30);
    for p in pc.points() {
        let _ = writeln!(
            out,
            "{} {} {}",
            format_sig6(p[0]),
            format_sig6(p[1]),
            format_sig6(p[2])
        );
    }
    out
}

/// Vertex-only ASCII PLY 1.0.
pub fn write_ply<T: Scalar>(pc: &PointCloud<T>) -> String {
    let mut out = String::with_capacity(128 + pc.count() * 30);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", pc.count());
    out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    out.push_str(&write_xyz(pc));
    out
}

/// Reads the vertex positions of an ASCII PLY file.
///
/// Extra vertex properties and other elements (e.g. faces) are skipped.
pub fn parse_ply<T: Scalar>(text: &str) -> Result<PointCloud<T>, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(FormatError::PlyHeader("missing 'ply' magic".into())),
    }
    // (name, count, property names)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut header_done = false;
    for (i, raw) in lines.by_ref() {
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(FormatError::PlyHeader(format!("unsupported format {fmt}")));
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| FormatError::Parse {
                    line: i + 1,
                    message: format!("bad element count {count:?}"),
                })?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", .., name] => match elements.last_mut() {
                Some(e) => e.2.push(name.to_string()),
                None => return Err(FormatError::PlyHeader("property before element".into())),
            },
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => {
                return Err(FormatError::Parse {
                    line: i + 1,
                    message: format!("unrecognized header line {raw:?}"),
                })
            }
        }
    }
    if !header_done {
        return Err(FormatError::PlyHeader("missing end_header".into()));
    }
    let mut points = Vec::new();
    for (name, count, props) in &elements {
        let is_vertex = name == "vertex";
        let axes = if is_vertex {
            let find = |n: &str| {
                props.iter().position(|p| p == n).ok_or_else(|| {
                    FormatError::PlyHeader(format!("vertex element lacks property {n}"))
                })
            };
            Some([find("x")?, find("y")?, find("z")?])
        } else {
            None
        };
        let mut read = 0;
        while read < *count {
            let (i, raw) = lines
                .next()
                .ok_or_else(|| FormatError::UnexpectedEof(format!("{count} {name} rows")))?;
            let tokens: Vec<&str> = raw.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            read += 1;
            if let Some(axes) = axes {
                if tokens.len() < props.len() {
                    return Err(FormatError::Parse {
                        line: i + 1,
                        message: format!("expected {} values, found {}", props.len(), tokens.len()),
                    });
                }
                let sel = axes.map(|a| tokens[a]);
                points.push(parse_triple(&sel, i + 1)?);
            }
        }
    }
    Ok(PointCloud::from_vec_unchecked(points))
}

/// Reads an OFF mesh.
///
/// Accepts the ModelNet quirk where the counts follow the magic on the same
/// line, with or without a separating space (`OFF 8 6 0`, `OFF8 6 0`).
/// Polygons with more than three vertices are fan-triangulated.
pub fn parse_off<T: Scalar>(text: &str) -> Result<TriMesh<T>, FormatError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (header_line, header) = lines.next().ok_or(FormatError::MissingOffHeader)?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or(FormatError::MissingOffHeader)?;
    let (count_line, counts) = if rest.trim().is_empty() {
        lines
            .next()
            .ok_or_else(|| FormatError::UnexpectedEof("OFF element counts".into()))?
    } else {
        (header_line, rest.trim())
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| FormatError::Parse {
                line: count_line,
                message: format!("non-integer count {t:?}"),
            })
        })
        .collect::<Result<_, _>>()?;
    if counts.len() < 2 {
        return Err(FormatError::Parse {
            line: count_line,
            message: "expected vertex and face counts".into(),
        });
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, l) = lines
            .next()
            .ok_or_else(|| FormatError::UnexpectedEof(format!("{nv} vertices")))?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        vertices.push(parse_triple(&tokens, line)?);
    }

    let mut faces = Vec::with_capacity(nf);
    for f in 0..nf {
        let (line, l) = lines
            .next()
            .ok_or_else(|| FormatError::UnexpectedEof(format!("{nf} faces")))?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        let parse_idx = |t: &str| -> Result<usize, FormatError> {
            t.parse().map_err(|_| FormatError::Parse {
                line,
                message: format!("non-integer index {t:?}"),
            })
        };
        let k = parse_idx(tokens[0])?;
        if k < 3 || tokens.len() < k + 1 {
            return Err(FormatError::Parse {
                line,
                message: format!("face {f} declares {k} vertices, found {}", tokens.len() - 1),
            });
        }
        let idx: Vec<usize> = tokens[1..=k]
            .iter()
            .map(|t| parse_idx(t))
            .collect::<Result<_, _>>()?;
        if let Some(&index) = idx.iter().find(|&&i| i >= nv) {
            return Err(FormatError::FaceIndexOutOfRange {
                face: f,
                index,
                vertex_count: nv,
            });
        }
        for i in 1..k - 1 {
            faces.push([idx[0], idx[i], idx[i + 1]]);
        }
    }
    TriMesh::new(vertices, faces)
}

fn triangle_area(t: &[Point<f64>; 3]) -> f64 {
    let u = [t[1][0] - t[0][0], t[1][1] - t[0][1], t[1][2] - t[0][2]];
    let v = [t[2][0] - t[0][0], t[2][1] - t[0][1], t[2][2] - t[0][2]];
    let c = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

/// Draws `n` points uniformly over the mesh surface.
///
/// A triangle is picked by inverting the cumulative area table, then a point
/// inside it by the square-root barycentric map
/// `(1 - √r1) a + √r1 (1 - r2) b + √r1 r2 c`.
pub fn sample_surface<T: Scalar>(
    mesh: &TriMesh<T>,
    n: usize,
    seed: u64,
) -> Result<PointCloud<T>, FormatError> {
    if n == 0 {
        return Err(FormatError::NoSamples);
    }
    let tris: Vec<[Point<f64>; 3]> = (0..mesh.faces.len())
        .map(|f| mesh.triangle(f).map(|p| p.map(|c| c.as_f64())))
        .collect();
    let mut cumulative = Vec::with_capacity(tris.len());
    let mut total = 0.0;
    for t in &tris {
        total += triangle_area(t);
        cumulative.push(total);
    }
    if total.is_nan() || total <= 0.0 {
        return Err(FormatError::ZeroArea);
    }
    let mut rng = SplitMix64::new(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.next_f64() * total;
        let f = cumulative
            .partition_point(|&c| c <= target)
            .min(tris.len() - 1);
        let [a, b, c] = tris[f];
        let s = rng.next_f64().sqrt();
        let r2 = rng.next_f64();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        points.push([0, 1, 2].map(|k| T::of(wa * a[k] + wb * b[k] + wc * c[k])));
    }
    Ok(PointCloud::from_vec_unchecked(points))
}
