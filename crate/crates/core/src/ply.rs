//! Binary little-endian PLY reader/writer for 3DGS checkpoints.
//!
//! The vertex element must carry exactly 62 `float` properties in the
//! checkpoint order: position, normals, DC color, 45 SH coefficients,
//! opacity, scales and rotation. Normals are parsed and discarded on read
//! and written as zeros.

use thiserror::Error;

use crate::scene::{GaussianScene, SH_REST_LEN};

/// Properties stored per vertex in a 3DGS checkpoint.
pub const PROPERTY_COUNT: usize = 62;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlyError {
    #[error("malformed PLY header at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("PLY schema error at property `{property}`: {message}")]
    Schema { property: String, message: String },
    #[error("PLY body truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    BinaryLittleEndian1_0,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlyHeader {
    pub format: PlyFormat,
    pub vertex_count: usize,
    pub property_names: Vec<String>,
    property_types: Vec<ScalarType>,
    /// Byte offset of the first body byte.
    pub body_offset: usize,
}

impl PlyHeader {
    /// Bytes per vertex record, including any extra properties.
    pub fn stride(&self) -> usize {
        self.property_types.iter().map(|t| t.size()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReadOptions {
    /// Ignore properties that follow the 62 required ones instead of failing.
    pub lenient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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
}

/// Property names in checkpoint order.
pub fn canonical_property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..SH_REST_LEN).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

pub fn parse_header(bytes: &[u8]) -> Result<PlyHeader, PlyError> {
    let mut lines = HeaderLines { bytes, pos: 0 };

    let (off, first) = lines.next_line()?;
    if first != "ply" {
        return Err(parse_err(off, "missing `ply` magic"));
    }

    let mut format = None;
    let mut vertex_count = None;
    let mut names = Vec::new();
    let mut types = Vec::new();
    loop {
        let (off, line) = lines.next_line()?;
        let mut tokens = line.split_ascii_whitespace();
        match tokens.next() {
            Some("format") => {
                let kind = tokens.next();
                let version = tokens.next();
                match (kind, version) {
                    (Some("binary_little_endian"), Some("1.0")) => {
                        format = Some(PlyFormat::BinaryLittleEndian1_0)
                    }
                    _ => {
                        return Err(parse_err(
                            off,
                            format!("unsupported format `{line}`; only binary_little_endian 1.0"),
                        ))
                    }
                }
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                if vertex_count.is_some() {
                    return Err(parse_err(off, "only a single `vertex` element is supported"));
                }
                match (tokens.next(), tokens.next().map(str::parse::<usize>)) {
                    (Some("vertex"), Some(Ok(n))) => vertex_count = Some(n),
                    (Some("vertex"), _) => return Err(parse_err(off, "bad vertex count")),
                    (Some(other), _) => {
                        return Err(parse_err(off, format!("unsupported element `{other}`")))
                    }
                    (None, _) => return Err(parse_err(off, "element without a name")),
                }
            }
            Some("property") => {
                if vertex_count.is_none() {
                    return Err(parse_err(off, "property before element"));
                }
                let ty = tokens.next().unwrap_or_default();
                if ty == "list" {
                    return Err(parse_err(off, "list properties are not supported"));
                }
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| parse_err(off, format!("unknown property type `{ty}`")))?;
                let name = tokens
                    .next()
                    .ok_or_else(|| parse_err(off, "property without a name"))?;
                names.push(name.to_string());
                types.push(ty);
            }
            Some("end_header") => break,
            _ => return Err(parse_err(off, format!("unexpected header line `{line}`"))),
        }
    }

    let format = format.ok_or_else(|| parse_err(0, "missing format line"))?;
    let vertex_count = vertex_count.ok_or_else(|| parse_err(0, "missing vertex element"))?;
    Ok(PlyHeader {
        format,
        vertex_count,
        property_names: names,
        property_types: types,
        body_offset: lines.pos,
    })
}

fn check_schema(header: &PlyHeader, opts: ReadOptions) -> Result<(), PlyError> {
    let expected = canonical_property_names();
    for (i, want) in expected.iter().enumerate() {
        match header.property_names.get(i) {
            Some(got) if got == want => {
                if header.property_types[i] != ScalarType::F32 {
                    return Err(PlyError::Schema {
                        property: want.clone(),
                        message: "must be declared as float".into(),
                    });
                }
            }
            Some(got) => {
                return Err(PlyError::Schema {
                    property: want.clone(),
                    message: format!("expected at position {i}, found `{got}`"),
                })
            }
            None => {
                return Err(PlyError::Schema {
                    property: want.clone(),
                    message: "missing".into(),
                })
            }
        }
    }
    if !opts.lenient {
        if let Some(extra) = header.property_names.get(PROPERTY_COUNT) {
            return Err(PlyError::Schema {
                property: extra.clone(),
                message: "unexpected extra property (enable lenient reading to ignore)".into(),
            });
        }
    }
    Ok(())
}

pub fn read_scene(bytes: &[u8]) -> Result<GaussianScene<f32>, PlyError> {
    read_scene_with(bytes, ReadOptions::default())
}

pub fn read_scene_with(bytes: &[u8], opts: ReadOptions) -> Result<GaussianScene<f32>, PlyError> {
    let header = parse_header(bytes)?;
    check_schema(&header, opts)?;

    let stride = header.stride();
    let n = header.vertex_count;
    let available = bytes.len() - header.body_offset;
    let expected = n.checked_mul(stride).ok_or(PlyError::Truncated {
        expected: usize::MAX,
        actual: available,
    })?;
    if available < expected {
        return Err(PlyError::Truncated {
            expected,
            actual: available,
        });
    }
    let body = &bytes[header.body_offset..header.body_offset + expected];

    let mut scene = GaussianScene::with_capacity(n);
    let mut vals = [0f32; PROPERTY_COUNT];
    for record in body.chunks_exact(stride) {
        for (v, b) in vals.iter_mut().zip(record.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        scene.positions.push([vals[0], vals[1], vals[2]]);
        scene.sh_dc.push([vals[6], vals[7], vals[8]]);
        let mut rest = [0f32; SH_REST_LEN];
        rest.copy_from_slice(&vals[9..9 + SH_REST_LEN]);
        scene.sh_rest.push(rest);
        scene.opacity_logits.push(vals[54]);
        scene.log_scales.push([vals[55], vals[56], vals[57]]);
        scene.rotations.push([vals[58], vals[59], vals[60], vals[61]]);
    }
    Ok(scene)
}

pub fn header_text(vertex_count: usize) -> String {
    let mut s = String::from("ply\nformat binary_little_endian 1.0\n");
    s.push_str(&format!("element vertex {vertex_count}\n"));
    for name in canonical_property_names() {
        s.push_str(&format!("property float {name}\n"));
    }
    s.push_str("end_header\n");
    s
}

pub fn write_scene(scene: &GaussianScene<f32>) -> Vec<u8> {
    let n = scene.len();
    let header = header_text(n);
    let mut out = Vec::with_capacity(header.len() + n * PROPERTY_COUNT * 4);
    out.extend_from_slice(header.as_bytes());
    let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
    for i in 0..n {
        scene.positions[i].iter().for_each(|&v| put(v));
        (0..3).for_each(|_| put(0.0));
        scene.sh_dc[i].iter().for_each(|&v| put(v));
        scene.sh_rest[i].iter().for_each(|&v| put(v));
        put(scene.opacity_logits[i]);
        scene.log_scales[i].iter().for_each(|&v| put(v));
        scene.rotations[i].iter().for_each(|&v| put(v));
    }
    out
}

fn parse_err(offset: usize, message: impl Into<String>) -> PlyError {
    PlyError::Parse {
        offset,
        message: message.into(),
    }
}

struct HeaderLines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderLines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str), PlyError> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let len = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(start, "unterminated header line"))?;
        self.pos = start + len + 1;
        let raw = &rest[..len];
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| parse_err(start, "non-UTF-8 header"))?;
        Ok((start, line.trim()))
    }
}
