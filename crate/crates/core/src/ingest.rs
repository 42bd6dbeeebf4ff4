//! Point-cloud ingest: PLY I/O, manual crop, unit-sphere normalization and
//! object-frame assignment from two recorded axis directions.

use crate::se3::Rotation;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("PLY parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("all points coincide; cannot normalize")]
    DegenerateCloud,
    #[error("axis directions are degenerate: {0}")]
    DegenerateAxes(String),
    #[error("invalid crop box: min must be below max on every axis")]
    InvalidBox,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        location: location.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, colors: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Axis-aligned bounds `(min, max)`, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }
}

/// Crop region, read from `{"min": [x, y, z], "max": [x, y, z]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl CropBox {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub center: [f64; 3],
    pub radius: f64,
    pub scale: f64,
}

impl NormalizationParams {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - Vector3::from(self.center)) * self.scale
    }
}

/// Object axes expressed in point-cloud coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectFrame {
    pub rotation: Rotation,
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: Format,
    elements: Vec<Element>,
    lines: usize,
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header, IngestError> {
    let mut line = String::new();
    let mut lineno = 0;
    let mut next_line = |reader: &mut R, line: &mut String| -> Result<usize, IngestError> {
        line.clear();
        if reader.read_line(line)? == 0 {
            return Err(parse_err(format!("line {}", lineno + 1), "unexpected end of header"));
        }
        lineno += 1;
        Ok(lineno)
    };

    let n = next_line(reader, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(parse_err(format!("line {n}"), "missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let n = next_line(reader, &mut line)?;
        let loc = format!("line {n}");
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => format = Some(Format::Ascii),
            ["format", "binary_little_endian", _] => format = Some(Format::BinaryLe),
            ["format", other, ..] => return Err(parse_err(loc, format!("unsupported format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(&loc, format!("bad element count `{count}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let count = Scalar::parse(count).ok_or_else(|| parse_err(&loc, "bad list count type"))?;
                let item = Scalar::parse(item).ok_or_else(|| parse_err(&loc, "bad list item type"))?;
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(&loc, "property before element"))?
                    .properties
                    .push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| parse_err(&loc, format!("unknown type `{ty}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(&loc, "property before element"))?
                    .properties
                    .push(Property::Scalar { name: name.to_string(), ty });
            }
            _ => return Err(parse_err(loc, format!("unrecognized header line `{}`", line.trim_end()))),
        }
    }
    let format = format.ok_or_else(|| parse_err("header", "missing format line"))?;
    Ok(Header {
        format,
        elements,
        lines: lineno,
    })
}

/// Positions of x, y, z and optional r, g, b within a vertex record.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(el: &Element) -> Result<VertexLayout, IngestError> {
    let find = |want: &str| {
        el.properties.iter().position(|p| matches!(p, Property::Scalar { name, .. } if name == want))
    };
    let axis = |n: &str| find(n).ok_or_else(|| parse_err("header", format!("vertex element has no `{n}` property")));
    let xyz = [axis("x")?, axis("y")?, axis("z")?];
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    Ok(VertexLayout { xyz, rgb })
}

/// Reads a PLY file (ASCII or binary little-endian). Vertex positions come
/// from the `x`, `y`, `z` properties; `red`, `green`, `blue` are optional.
pub fn load_cloud(path: &Path) -> Result<PointCloud, IngestError> {
    let file = std::fs::File::open(path)?;
    read_ply(BufReader::new(file))
}

pub fn read_ply<R: BufRead>(mut reader: R) -> Result<PointCloud, IngestError> {
    let header = read_header(&mut reader)?;
    let vertex_idx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err("header", "no vertex element"))?;
    let layout = vertex_layout(&header.elements[vertex_idx])?;

    let mut cloud = PointCloud::default();
    let mut colors = layout.rgb.map(|_| Vec::new());
    match header.format {
        Format::Ascii => {
            let mut lineno = header.lines;
            let mut lines = reader.lines();
            let mut next = |lineno: &mut usize| -> Result<String, IngestError> {
                *lineno += 1;
                lines
                    .next()
                    .transpose()?
                    .ok_or_else(|| parse_err(format!("line {lineno}"), "unexpected end of file"))
            };
            for el in &header.elements[..vertex_idx] {
                for _ in 0..el.count {
                    next(&mut lineno)?;
                }
            }
            let el = &header.elements[vertex_idx];
            for _ in 0..el.count {
                let line = next(&mut lineno)?;
                let values = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| parse_err(format!("line {lineno}"), e.to_string()))?;
                if values.len() < el.properties.len() {
                    return Err(parse_err(format!("line {lineno}"), "too few values in vertex record"));
                }
                push_vertex(&mut cloud, colors.as_mut(), &layout, &values, format!("line {lineno}"))?;
            }
        }
        Format::BinaryLe => {
            let mut offset = 0usize;
            for el in &header.elements[..vertex_idx] {
                for _ in 0..el.count {
                    skip_binary_record(&mut reader, el, &mut offset)?;
                }
            }
            let el = &header.elements[vertex_idx];
            let mut buf = [0u8; 8];
            let mut values = vec![0.0; el.properties.len()];
            for _ in 0..el.count {
                let record_offset = offset;
                for (slot, prop) in values.iter_mut().zip(&el.properties) {
                    match prop {
                        Property::Scalar { ty, .. } => {
                            read_exact_at(&mut reader, &mut buf[..ty.size()], &mut offset)?;
                            *slot = ty.decode(&buf);
                        }
                        Property::List { count, item } => {
                            read_exact_at(&mut reader, &mut buf[..count.size()], &mut offset)?;
                            let n = count.decode(&buf) as usize;
                            skip_bytes(&mut reader, n * item.size(), &mut offset)?;
                        }
                    }
                }
                push_vertex(
                    &mut cloud,
                    colors.as_mut(),
                    &layout,
                    &values,
                    format!("byte offset {record_offset} after header"),
                )?;
            }
        }
    }
    if cloud.is_empty() {
        return Err(IngestError::EmptyCloud);
    }
    cloud.colors = colors;
    Ok(cloud)
}

fn push_vertex(
    cloud: &mut PointCloud,
    colors: Option<&mut Vec<[u8; 3]>>,
    layout: &VertexLayout,
    values: &[f64],
    location: String,
) -> Result<(), IngestError> {
    let p = Vector3::new(values[layout.xyz[0]], values[layout.xyz[1]], values[layout.xyz[2]]);
    if !p.iter().all(|v| v.is_finite()) {
        return Err(parse_err(location, "non-finite coordinate"));
    }
    cloud.points.push(p);
    if let (Some(colors), Some(rgb)) = (colors, layout.rgb) {
        colors.push(rgb.map(|i| values[i].clamp(0.0, 255.0) as u8));
    }
    Ok(())
}

fn read_exact_at<R: Read>(reader: &mut R, buf: &mut [u8], offset: &mut usize) -> Result<(), IngestError> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            parse_err(format!("byte offset {offset} after header"), "unexpected end of file")
        }
        _ => IngestError::Io(e),
    })?;
    *offset += buf.len();
    Ok(())
}

fn skip_bytes<R: Read>(reader: &mut R, n: usize, offset: &mut usize) -> Result<(), IngestError> {
    let copied = std::io::copy(&mut reader.by_ref().take(n as u64), &mut std::io::sink())?;
    if copied as usize != n {
        return Err(parse_err(format!("byte offset {offset} after header"), "unexpected end of file"));
    }
    *offset += n;
    Ok(())
}

fn skip_binary_record<R: Read>(reader: &mut R, el: &Element, offset: &mut usize) -> Result<(), IngestError> {
    let mut buf = [0u8; 8];
    for prop in &el.properties {
        match prop {
            Property::Scalar { ty, .. } => skip_bytes(reader, ty.size(), offset)?,
            Property::List { count, item } => {
                read_exact_at(reader, &mut buf[..count.size()], offset)?;
                let n = count.decode(&buf) as usize;
                skip_bytes(reader, n * item.size(), offset)?;
            }
        }
    }
    Ok(())
}

/// PLY encodings this crate can write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

/// Writes positions as doubles, plus uchar colors when present.
pub fn write_ply<W: Write>(mut out: W, cloud: &PointCloud, encoding: PlyEncoding) -> std::io::Result<()> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply\nformat {format} 1.0\nelement vertex {}", cloud.len())?;
    writeln!(out, "property double x\nproperty double y\nproperty double z")?;
    if cloud.colors.is_some() {
        writeln!(out, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        let rgb = cloud.colors.as_ref().map(|c| c[i]);
        match encoding {
            PlyEncoding::Ascii => {
                write!(out, "{} {} {}", p.x, p.y, p.z)?;
                if let Some([r, g, b]) = rgb {
                    write!(out, " {r} {g} {b}")?;
                }
                writeln!(out)?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in p.iter() {
                    out.write_all(&v.to_le_bytes())?;
                }
                if let Some(rgb) = rgb {
                    out.write_all(&rgb)?;
                }
            }
        }
    }
    out.flush()
}

pub fn save_cloud(path: &Path, cloud: &PointCloud, encoding: PlyEncoding) -> Result<(), IngestError> {
    let file = std::fs::File::create(path)?;
    write_ply(std::io::BufWriter::new(file), cloud, encoding)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Geometry

/// Keeps the points inside or on the boundary of `bounds`, in order.
pub fn crop(cloud: &PointCloud, bounds: &CropBox) -> Result<PointCloud, IngestError> {
    if (0..3).any(|i| !(bounds.min[i] < bounds.max[i])) {
        return Err(IngestError::InvalidBox);
    }
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| bounds.contains(&cloud.points[i])).collect();
    if keep.is_empty() {
        return Err(IngestError::EmptyCloud);
    }
    Ok(PointCloud {
        points: keep.iter().map(|&i| cloud.points[i]).collect(),
        colors: cloud.colors.as_ref().map(|c| keep.iter().map(|&i| c[i]).collect()),
    })
}

/// Centers the cloud on its bounding-box midpoint and scales it so the
/// farthest point sits on the unit sphere.
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, NormalizationParams), IngestError> {
    let (lo, hi) = cloud.bounds().ok_or(IngestError::EmptyCloud)?;
    let center = (lo + hi) * 0.5;
    let radius = cloud
        .points
        .iter()
        .map(|p| (p - center).norm())
        .fold(0.0, f64::max);
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(IngestError::DegenerateCloud);
    }
    let params = NormalizationParams {
        center: center.into(),
        radius,
        scale: 1.0 / radius,
    };
    // Divide rather than multiply by `scale` so the farthest point lands on 1 exactly.
    let points = cloud.points.iter().map(|p| (p - center) / radius).collect();
    Ok((
        PointCloud {
            points,
            colors: cloud.colors.clone(),
        },
        params,
    ))
}

/// Builds a right-handed object frame from a recorded x direction and an
/// approximate z direction, Gram–Schmidt style: x is kept, z loses its x
/// component, and y = z × x.
pub fn object_frame_from_axes(x_dir: &Vector3<f64>, z_dir: &Vector3<f64>) -> Result<ObjectFrame, IngestError> {
    let (xn, zn) = (x_dir.norm(), z_dir.norm());
    if !(xn > 0.0) || !(zn > 0.0) {
        return Err(IngestError::DegenerateAxes("zero-length direction".into()));
    }
    let x = x_dir / xn;
    let z_raw = z_dir / zn;
    let cos = x.dot(&z_raw).clamp(-1.0, 1.0);
    let angle = cos.acos().to_degrees();
    if !(angle > 5.0 && angle < 175.0) {
        return Err(IngestError::DegenerateAxes(format!(
            "x and z are {angle:.3}° apart; need (5°, 175°)"
        )));
    }
    let z = (z_raw - x * cos).normalize();
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    let rows = [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ];
    let rotation = Rotation::from_matrix(rows)
        .map_err(|e| IngestError::DegenerateAxes(e.to_string()))?;
    Ok(ObjectFrame { rotation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cube_corners() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64));
        }
        PointCloud::new(pts)
    }

    #[test]
    fn minimal_ascii_ply() {
        let text = "ply\nformat ascii 1.0\ncomment tiny\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0.5\n";
        let cloud = read_ply(text.as_bytes()).unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.points[2], Vector3::new(0.0, 1.0, 0.5));
        assert!(cloud.colors.is_none());
    }

    #[test]
    fn ply_with_faces_before_vertices() {
        let text = "ply\nformat ascii 1.0\nelement face 1\nproperty list uchar int vertex_indices\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n3 0 1 1\n1 2 3 255 0 10\n4 5 6 0 128 0\n";
        let cloud = read_ply(text.as_bytes()).unwrap();
        assert_eq!(cloud.points, vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(4.0, 5.0, 6.0)]);
        assert_eq!(cloud.colors, Some(vec![[255, 0, 10], [0, 128, 0]]));
    }

    #[test]
    fn binary_and_ascii_twins_agree() {
        let mut cloud = PointCloud::new(
            (0..50)
                .map(|i| {
                    let t = i as f64 * 0.37;
                    Vector3::new(t.sin(), t.cos() * 2.0, t * 0.01 - 0.3)
                })
                .collect(),
        );
        cloud.colors = Some((0..50u8).map(|i| [i, 255 - i, i / 2]).collect());
        let mut ascii = Vec::new();
        let mut binary = Vec::new();
        write_ply(&mut ascii, &cloud, PlyEncoding::Ascii).unwrap();
        write_ply(&mut binary, &cloud, PlyEncoding::BinaryLittleEndian).unwrap();
        let a = read_ply(ascii.as_slice()).unwrap();
        let b = read_ply(binary.as_slice()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, cloud);
    }

    #[test]
    fn binary_float32_with_trailing_faces() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for v in [1.5f32, -2.0, 0.25, 3.0, 4.0, 5.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.push(3);
        for i in [0i32, 1, 0] {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        let cloud = read_ply(bytes.as_slice()).unwrap();
        assert_eq!(cloud.points[0], Vector3::new(1.5, -2.0, 0.25));
        assert_eq!(cloud.points[1], Vector3::new(3.0, 4.0, 5.0));
    }

    #[test]
    fn malformed_files() {
        let no_vertex = "ply\nformat ascii 1.0\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n";
        assert!(matches!(read_ply(no_vertex.as_bytes()), Err(IngestError::Parse { .. })));
        let no_magic = "plx\nformat ascii 1.0\n";
        assert!(matches!(read_ply(no_magic.as_bytes()), Err(IngestError::Parse { .. })));
        let truncated = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        match read_ply(truncated.as_bytes()) {
            Err(IngestError::Parse { location, .. }) => assert_eq!(location, "line 9"),
            other => panic!("{other:?}"),
        }
        let bad_number = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 zero 0\n";
        match read_ply(bad_number.as_bytes()) {
            Err(IngestError::Parse { location, .. }) => assert_eq!(location, "line 8"),
            other => panic!("{other:?}"),
        }
        let empty = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        assert!(matches!(read_ply(empty.as_bytes()), Err(IngestError::EmptyCloud)));
    }

    #[test]
    fn crop_examples() {
        let cloud = cube_corners();
        let all = CropBox { min: [-1.0; 3], max: [2.0; 3] };
        assert_eq!(crop(&cloud, &all).unwrap(), cloud);
        let none = CropBox { min: [5.0; 3], max: [6.0; 3] };
        assert!(matches!(crop(&cloud, &none), Err(IngestError::EmptyCloud)));
        let corner = CropBox { min: [0.0; 3], max: [0.5; 3] };
        let out = crop(&cloud, &corner).unwrap();
        assert_eq!(out.points, vec![Vector3::zeros()]);
        let twice = crop(&out, &corner).unwrap();
        assert_eq!(twice, out);
        assert!(matches!(
            crop(&cloud, &CropBox { min: [0.0; 3], max: [0.0, 1.0, 1.0] }),
            Err(IngestError::InvalidBox)
        ));
    }

    #[test]
    fn normalize_examples() {
        let pair = PointCloud::new(vec![Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0)]);
        let (_, p) = normalize(&pair).unwrap();
        assert_eq!(p.center, [1.0, 0.0, 0.0]);
        assert_eq!(p.radius, 1.0);

        let (out, p) = normalize(&cube_corners()).unwrap();
        assert_eq!(p.center, [0.5, 0.5, 0.5]);
        assert!((p.radius - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert!((p.scale - 1.1547005383792515).abs() < 1e-12);
        for q in &out.points {
            assert!((q.norm() - 1.0).abs() < 1e-12);
        }

        let same = PointCloud::new(vec![Vector3::new(1.0, 1.0, 1.0); 4]);
        assert!(matches!(normalize(&same), Err(IngestError::DegenerateCloud)));
    }

    #[test]
    fn axes_examples() {
        let f = object_frame_from_axes(&Vector3::x(), &Vector3::z()).unwrap();
        assert!(f.rotation.angle_to(&Rotation::identity()) < 1e-12);

        let f = object_frame_from_axes(&Vector3::x(), &Vector3::new(0.1, 0.0, 1.0)).unwrap();
        let m = f.rotation.matrix();
        assert!((m.column(2) - Vector3::z()).norm() < 1e-12);

        assert!(matches!(
            object_frame_from_axes(&Vector3::x(), &Vector3::new(1.0, 1e-9, 0.0)),
            Err(IngestError::DegenerateAxes(_))
        ));
        assert!(object_frame_from_axes(&Vector3::zeros(), &Vector3::z()).is_err());
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 2..60)
            .prop_filter("distinct points", |pts| pts.iter().any(|p| p != &pts[0]))
            .prop_map(|pts| PointCloud::new(pts.into_iter().map(Vector3::from).collect()))
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(cloud in arb_cloud()) {
            let (once, _) = normalize(&cloud).unwrap();
            let max = once.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
            prop_assert!((max - 1.0).abs() < 1e-9);
            let (_, again) = normalize(&once).unwrap();
            prop_assert!(Vector3::from(again.center).norm() < 1e-9);
            prop_assert!((again.radius - 1.0).abs() < 1e-9);
        }

        #[test]
        fn object_frame_is_proper(x in prop::array::uniform3(-1.0f64..1.0), z in prop::array::uniform3(-1.0f64..1.0)) {
            let (x, z) = (Vector3::from(x), Vector3::from(z));
            prop_assume!(x.norm() > 1e-3 && z.norm() > 1e-3);
            let angle = (x.dot(&z) / (x.norm() * z.norm())).clamp(-1.0, 1.0).acos().to_degrees();
            prop_assume!(angle > 5.1 && angle < 174.9);
            let m = object_frame_from_axes(&x, &z).unwrap().rotation.matrix();
            prop_assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
