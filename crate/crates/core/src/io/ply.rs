use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::{PointCloud, SourceTags, TriangleMesh, Vec3, NORMAL_TOLERANCE};

use super::{read_file, write_file, Location, ModelIoError};

/// PLY body encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    Ascii,
    #[default]
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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn range(self) -> (f64, f64) {
        match self {
            Scalar::I8 => (i8::MIN as f64, i8::MAX as f64),
            Scalar::U8 => (0.0, u8::MAX as f64),
            Scalar::I16 => (i16::MIN as f64, i16::MAX as f64),
            Scalar::U16 => (0.0, u16::MAX as f64),
            Scalar::I32 => (i32::MIN as f64, i32::MAX as f64),
            Scalar::U32 => (0.0, u32::MAX as f64),
            Scalar::F32 | Scalar::F64 => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn parse_ascii(self, token: &str) -> Option<f64> {
        if self.is_float() {
            let v: f64 = token.parse().ok()?;
            Some(if self == Scalar::F32 { v as f32 as f64 } else { v })
        } else {
            let v: i64 = token.parse().ok()?;
            let (lo, hi) = self.range();
            let v = v as f64;
            (lo..=hi).contains(&v).then_some(v)
        }
    }
}

#[derive(Debug, Clone)]
enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    comments: Vec<String>,
    elements: Vec<Element>,
    body_offset: usize,
}

/// Values of one element, column per property.
#[derive(Debug, Default)]
struct ElementData {
    scalars: BTreeMap<String, Vec<f64>>,
    lists: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

fn parse_header(bytes: &[u8]) -> Result<Header, ModelIoError> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Option<(usize, String)> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |i| *pos + i);
        let line = String::from_utf8_lossy(&bytes[*pos..end])
            .trim_end_matches('\r')
            .to_string();
        *pos = (end + 1).min(bytes.len());
        line_no += 1;
        Some((line_no, line))
    };

    match next_line(&mut pos) {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(ModelIoError::BadHeader("missing `ply` magic".into())),
    }
    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some((n, line)) = next_line(&mut pos) else {
            return Err(ModelIoError::BadHeader("missing end_header".into()));
        };
        let bad = |msg: &str| ModelIoError::parse(Location::Line(n), msg.to_string());
        let mut words = line.split_whitespace();
        match words.next() {
            None => {}
            Some("end_header") => break,
            Some("comment") => {
                let rest = line.trim_start().strip_prefix("comment").unwrap_or("");
                comments.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
            }
            Some("obj_info") => {}
            Some("format") => {
                let kind = words.next().ok_or_else(|| bad("format lacks encoding"))?;
                format = Some(match kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => return Err(ModelIoError::Unsupported("big-endian PLY".into())),
                    other => return Err(bad(&format!("unknown format `{other}`"))),
                });
                if words.next() != Some("1.0") {
                    return Err(bad("only PLY version 1.0 is supported"));
                }
            }
            Some("element") => {
                let name = words.next().ok_or_else(|| bad("element lacks a name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| bad("element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ty = words.next().ok_or_else(|| bad("property lacks a type"))?;
                let kind = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) if !count.is_float() => PropertyKind::List { count, item },
                        _ => return Err(bad("malformed list property")),
                    }
                } else {
                    PropertyKind::Scalar(Scalar::parse(ty).ok_or_else(|| bad(&format!("unknown type `{ty}`")))?)
                };
                let name = words.next().ok_or_else(|| bad("property lacks a name"))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            Some(other) => return Err(bad(&format!("unknown header keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| ModelIoError::BadHeader("missing format line".into()))?;
    Ok(Header {
        format,
        comments,
        elements,
        body_offset: pos,
    })
}

struct BinaryCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BinaryCursor<'_> {
    fn read(&mut self, ty: Scalar) -> Result<f64, ModelIoError> {
        let end = self.pos + ty.size();
        if end > self.bytes.len() {
            return Err(ModelIoError::parse(Location::Byte(self.pos), "unexpected end of file"));
        }
        let v = ty.read_le(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(v)
    }
}

struct AsciiCursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    tokens: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> AsciiCursor<'a> {
    fn new(text: &'a str, first_line: usize) -> Self {
        AsciiCursor {
            lines: text.lines().enumerate(),
            tokens: "".split_whitespace(),
            line: first_line,
        }
    }

    fn next_token(&mut self, first_line: usize) -> Result<&'a str, ModelIoError> {
        loop {
            if let Some(t) = self.tokens.next() {
                return Ok(t);
            }
            match self.lines.next() {
                Some((i, l)) => {
                    self.line = first_line + i;
                    self.tokens = l.split_whitespace();
                }
                None => {
                    return Err(ModelIoError::parse(
                        Location::Line(self.line + 1),
                        "unexpected end of file",
                    ))
                }
            }
        }
    }

    fn read(&mut self, ty: Scalar, first_line: usize) -> Result<f64, ModelIoError> {
        let token = self.next_token(first_line)?;
        ty.parse_ascii(token).ok_or_else(|| {
            ModelIoError::parse(
                Location::Line(self.line),
                format!("`{token}` is not a valid {ty:?} value"),
            )
        })
    }
}

fn list_len(v: f64, location: Location) -> Result<usize, ModelIoError> {
    if v < 0.0 {
        return Err(ModelIoError::parse(location, "negative list length"));
    }
    Ok(v as usize)
}

fn read_body(bytes: &[u8], header: &Header) -> Result<Vec<ElementData>, ModelIoError> {
    let body = &bytes[header.body_offset..];
    let mut out = Vec::with_capacity(header.elements.len());
    match header.format {
        PlyFormat::BinaryLittleEndian => {
            let mut cur = BinaryCursor {
                bytes,
                pos: header.body_offset,
            };
            for element in &header.elements {
                let fixed: Option<usize> = element
                    .properties
                    .iter()
                    .map(|p| match p.kind {
                        PropertyKind::Scalar(s) => Some(s.size()),
                        PropertyKind::List { .. } => None,
                    })
                    .sum();
                let remaining = bytes.len() - cur.pos;
                if let Some(row) = fixed {
                    if row > 0 && element.count > remaining / row {
                        return Err(ModelIoError::parse(
                            Location::Byte(bytes.len()),
                            format!(
                                "file truncated: element `{}` needs {} rows of {row} bytes",
                                element.name, element.count
                            ),
                        ));
                    }
                }
                let mut data = ElementData::default();
                let capacity = element.count.min(remaining);
                init_columns(&mut data, element, capacity);
                for _ in 0..element.count {
                    for p in &element.properties {
                        match p.kind {
                            PropertyKind::Scalar(s) => {
                                let v = cur.read(s)?;
                                data.scalars.get_mut(&p.name).unwrap().push(v);
                            }
                            PropertyKind::List { count, item } => {
                                let at = Location::Byte(cur.pos);
                                let n = list_len(cur.read(count)?, at)?;
                                if n.saturating_mul(item.size()) > bytes.len() - cur.pos {
                                    return Err(ModelIoError::parse(
                                        Location::Byte(cur.pos),
                                        "list runs past end of file",
                                    ));
                                }
                                let (offsets, values) = data.lists.get_mut(&p.name).unwrap();
                                for _ in 0..n {
                                    values.push(cur.read(item)?);
                                }
                                offsets.push(values.len());
                            }
                        }
                    }
                }
                out.push(data);
            }
        }
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|e| {
                ModelIoError::parse(
                    Location::Byte(header.body_offset + e.valid_up_to()),
                    "ascii body is not valid UTF-8",
                )
            })?;
            let first_line = bytes[..header.body_offset].iter().filter(|&&b| b == b'\n').count() + 1;
            let mut cur = AsciiCursor::new(text, first_line);
            for element in &header.elements {
                let mut data = ElementData::default();
                init_columns(&mut data, element, element.count.min(text.len() / 2));
                for _ in 0..element.count {
                    for p in &element.properties {
                        match p.kind {
                            PropertyKind::Scalar(s) => {
                                let v = cur.read(s, first_line)?;
                                data.scalars.get_mut(&p.name).unwrap().push(v);
                            }
                            PropertyKind::List { count, item } => {
                                let n = list_len(cur.read(count, first_line)?, Location::Line(cur.line))?;
                                if n > text.len() {
                                    return Err(ModelIoError::parse(
                                        Location::Line(cur.line),
                                        "list longer than the file",
                                    ));
                                }
                                let (offsets, values) = data.lists.get_mut(&p.name).unwrap();
                                for _ in 0..n {
                                    values.push(cur.read(item, first_line)?);
                                }
                                offsets.push(values.len());
                            }
                        }
                    }
                }
                out.push(data);
            }
        }
    }
    Ok(out)
}

fn init_columns(data: &mut ElementData, element: &Element, capacity: usize) {
    for p in &element.properties {
        match p.kind {
            PropertyKind::Scalar(_) => {
                data.scalars.insert(p.name.clone(), Vec::with_capacity(capacity));
            }
            PropertyKind::List { .. } => {
                let mut offsets = Vec::with_capacity(capacity + 1);
                offsets.push(0);
                data.lists.insert(p.name.clone(), (offsets, Vec::new()));
            }
        }
    }
}

struct Parsed {
    header: Header,
    data: Vec<ElementData>,
}

impl Parsed {
    fn element(&self, name: &str) -> Option<(&Element, &ElementData)> {
        self.header
            .elements
            .iter()
            .zip(&self.data)
            .find(|(e, _)| e.name == name)
    }
}

fn parse(bytes: &[u8]) -> Result<Parsed, ModelIoError> {
    let header = parse_header(bytes)?;
    let data = read_body(bytes, &header)?;
    Ok(Parsed { header, data })
}

fn column<'a>(data: &'a ElementData, names: &[&str]) -> Option<&'a [f64]> {
    names.iter().find_map(|n| data.scalars.get(*n).map(Vec::as_slice))
}

fn vertex_attributes(parsed: &Parsed) -> Result<PointCloud, ModelIoError> {
    let (_, data) = parsed.element("vertex").ok_or(ModelIoError::MissingPositions)?;
    let (Some(x), Some(y), Some(z)) = (column(data, &["x"]), column(data, &["y"]), column(data, &["z"])) else {
        return Err(ModelIoError::MissingPositions);
    };
    let positions = (0..x.len()).map(|i| Vec3::new(x[i], y[i], z[i])).collect();
    let mut cloud = PointCloud::new(positions);

    if let (Some(r), Some(g), Some(b)) = (
        column(data, &["red", "diffuse_red"]),
        column(data, &["green", "diffuse_green"]),
        column(data, &["blue", "diffuse_blue"]),
    ) {
        let channel = |v: f64| -> Result<u8, ModelIoError> {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(ModelIoError::InvariantViolation(format!(
                    "color component {v} is not an integer in 0..=255"
                )))
            }
        };
        let colors = (0..r.len())
            .map(|i| Ok([channel(r[i])?, channel(g[i])?, channel(b[i])?]))
            .collect::<Result<Vec<_>, ModelIoError>>()?;
        cloud = cloud.with_colors(colors)?;
    }

    if let (Some(nx), Some(ny), Some(nz)) = (column(data, &["nx"]), column(data, &["ny"]), column(data, &["nz"])) {
        // Normals stored at reduced precision are renormalized; zero normals
        // mean "unknown", which drops the attribute for the whole cloud.
        let normals: Option<Vec<Vec3>> = (0..nx.len())
            .map(|i| {
                let n = Vec3::new(nx[i], ny[i], nz[i]);
                let len = n.norm();
                if !len.is_finite() || len == 0.0 {
                    None
                } else if (len - 1.0).abs() <= NORMAL_TOLERANCE {
                    Some(n)
                } else {
                    Some(n / len)
                }
            })
            .collect();
        if let Some(normals) = normals {
            cloud = cloud.with_normals(normals)?;
        }
    }

    if let Some(src) = column(data, &["source"]) {
        let mut labels: BTreeMap<usize, String> = BTreeMap::new();
        for c in &parsed.header.comments {
            let mut parts = c.splitn(3, ' ');
            if parts.next() == Some("source") {
                if let (Some(idx), Some(label)) = (parts.next(), parts.next()) {
                    if let Ok(idx) = idx.parse::<usize>() {
                        labels.insert(idx, label.to_string());
                    }
                }
            }
        }
        let per_point: Vec<u16> = src.iter().map(|&v| v as u16).collect();
        let max = per_point.iter().copied().max().map_or(0, |m| m as usize + 1);
        let max = max.max(labels.keys().next_back().map_or(0, |k| k + 1));
        let labels = (0..max)
            .map(|i| labels.remove(&i).unwrap_or_else(|| format!("source{i}")))
            .collect();
        cloud = cloud.with_sources(SourceTags { labels, per_point })?;
    }
    Ok(cloud)
}

/// Parses a PLY point cloud from memory. The encoding is taken from the header.
pub fn parse_point_cloud(bytes: &[u8]) -> Result<PointCloud, ModelIoError> {
    vertex_attributes(&parse(bytes)?)
}

/// Loads the `vertex` element of an ascii or binary little-endian PLY file.
///
/// Unknown properties and elements are skipped.
pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud, ModelIoError> {
    parse_point_cloud(&read_file(path.as_ref())?)
}

/// Parses a PLY mesh. Polygons are fan-triangulated and faces that repeat a
/// vertex are dropped.
pub fn parse_mesh(bytes: &[u8]) -> Result<TriangleMesh, ModelIoError> {
    let parsed = parse(bytes)?;
    let cloud = vertex_attributes(&parsed)?;
    let n = cloud.len();
    let mut faces = Vec::new();
    if let Some((_, data)) = parsed.element("face") {
        let list = data
            .lists
            .get("vertex_indices")
            .or_else(|| data.lists.get("vertex_index"));
        if let Some((offsets, values)) = list {
            for w in offsets.windows(2) {
                let poly = &values[w[0]..w[1]];
                let idx = poly
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && (v as usize) < n && v.fract() == 0.0 {
                            Ok(v as u32)
                        } else {
                            Err(ModelIoError::InvariantViolation(format!(
                                "face index {v} out of range for {n} vertices"
                            )))
                        }
                    })
                    .collect::<Result<Vec<u32>, _>>()?;
                for k in 1..idx.len().saturating_sub(1) {
                    let f = [idx[0], idx[k], idx[k + 1]];
                    if f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
                        faces.push(f);
                    }
                }
            }
        }
    }
    Ok(TriangleMesh::new(
        cloud.positions().to_vec(),
        faces,
        cloud.colors().map(<[_]>::to_vec),
    )?)
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh, ModelIoError> {
    parse_mesh(&read_file(path.as_ref())?)
}

fn vertex_header(out: &mut String, cloud_len: usize, normals: bool, colors: bool, sources: bool) {
    let _ = writeln!(out, "element vertex {cloud_len}");
    for axis in ["x", "y", "z"] {
        let _ = writeln!(out, "property double {axis}");
    }
    if normals {
        for axis in ["nx", "ny", "nz"] {
            let _ = writeln!(out, "property double {axis}");
        }
    }
    if colors {
        for c in ["red", "green", "blue"] {
            let _ = writeln!(out, "property uchar {c}");
        }
    }
    if sources {
        out.push_str("property ushort source\n");
    }
}

fn format_line(format: PlyFormat) -> &'static str {
    match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    }
}

fn write_vertex(out: &mut Vec<u8>, format: PlyFormat, cloud: &PointCloud, i: usize) {
    let p = &cloud.positions()[i];
    let normal = cloud.normals().map(|n| n[i]);
    let color = cloud.colors().map(|c| c[i]);
    let source = cloud.sources().map(|s| s.per_point[i]);
    match format {
        PlyFormat::Ascii => {
            let mut line = format!("{} {} {}", p.x, p.y, p.z);
            if let Some(n) = normal {
                let _ = write!(line, " {} {} {}", n.x, n.y, n.z);
            }
            if let Some(c) = color {
                let _ = write!(line, " {} {} {}", c[0], c[1], c[2]);
            }
            if let Some(s) = source {
                let _ = write!(line, " {s}");
            }
            line.push('\n');
            out.extend_from_slice(line.as_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            for v in [p.x, p.y, p.z] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(n) = normal {
                for v in [n.x, n.y, n.z] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            if let Some(c) = color {
                out.extend_from_slice(&c);
            }
            if let Some(s) = source {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
    }
}

fn cloud_header(cloud: &PointCloud, format: PlyFormat) -> String {
    let mut header = String::from("ply\n");
    header.push_str(format_line(format));
    if let Some(tags) = cloud.sources() {
        for (i, label) in tags.labels.iter().enumerate() {
            let _ = writeln!(header, "comment source {i} {label}");
        }
    }
    vertex_header(
        &mut header,
        cloud.len(),
        cloud.normals().is_some(),
        cloud.colors().is_some(),
        cloud.sources().is_some(),
    );
    header
}

/// Serializes a cloud. Output depends only on the cloud and the format.
pub fn write_point_cloud(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut out = cloud_header(cloud, format).into_bytes();
    out.extend_from_slice(b"end_header\n");
    for i in 0..cloud.len() {
        write_vertex(&mut out, format, cloud, i);
    }
    out
}

pub fn save_point_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<(), ModelIoError> {
    write_file(path.as_ref(), &write_point_cloud(cloud, format))
}

pub fn write_mesh(mesh: &TriangleMesh, format: PlyFormat) -> Vec<u8> {
    let mut cloud = PointCloud::new(mesh.vertices().to_vec());
    if let Some(colors) = mesh.colors() {
        cloud = cloud
            .with_colors(colors.to_vec())
            .expect("mesh colors match its vertices");
    }
    let mut header = cloud_header(&cloud, format);
    let _ = writeln!(header, "element face {}", mesh.faces().len());
    header.push_str("property list uchar uint vertex_indices\nend_header\n");
    let mut out = header.into_bytes();
    for i in 0..cloud.len() {
        write_vertex(&mut out, format, &cloud, i);
    }
    for f in mesh.faces() {
        match format {
            PlyFormat::Ascii => out.extend_from_slice(format!("3 {} {} {}\n", f[0], f[1], f[2]).as_bytes()),
            PlyFormat::BinaryLittleEndian => {
                out.push(3);
                for v in f {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn save_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>, format: PlyFormat) -> Result<(), ModelIoError> {
    write_file(path.as_ref(), &write_mesh(mesh, format))
}
