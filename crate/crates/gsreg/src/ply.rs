//! Binary little-endian splat PLY files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use gsreg_core::model::normalize_quaternion;
use gsreg_core::{Gaussian, GaussianModel, Vec3};
use nalgebra::Quaternion;

use crate::error::{Error, Result};

const REST: usize = 45;

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

    fn read(self, b: &[u8]) -> f64 {
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

struct Property {
    name: String,
    kind: Scalar,
    offset: usize,
}

struct Header {
    vertices: usize,
    stride: usize,
    properties: Vec<Property>,
    body_start: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::format(path, "end_header", "header is not terminated"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::format(path, "header", "not ASCII"))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err(Error::format(path, "ply", "missing magic line"));
    }
    let mut vertices = None;
    let mut in_vertex = false;
    let mut properties = Vec::new();
    let mut stride = 0;
    let mut format_ok = false;
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, ..] => return Err(Error::format(path, "format", format!("unsupported encoding {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                if vertices.is_some() {
                    // only the vertex element is read; later elements are ignored
                    in_vertex = false;
                    continue;
                }
                if *name != "vertex" {
                    return Err(Error::format(path, *name, "vertex must be the first element"));
                }
                let n = count.parse().map_err(|_| Error::format(path, "vertex", "bad element count"))?;
                vertices = Some(n);
                in_vertex = true;
            }
            ["property", "list", .., name] if in_vertex => {
                return Err(Error::format(path, *name, "list properties are not supported on vertices"));
            }
            ["property", kind, name] if in_vertex => {
                let kind = Scalar::parse(kind).ok_or_else(|| Error::format(path, *name, format!("unknown type {kind}")))?;
                properties.push(Property { name: name.to_string(), kind, offset: stride });
                stride += kind.size();
            }
            ["property", ..] => {}
            _ => return Err(Error::format(path, "header", format!("unexpected line `{line}`"))),
        }
    }
    if !format_ok {
        return Err(Error::format(path, "format", "missing format line"));
    }
    let vertices = vertices.ok_or_else(|| Error::format(path, "vertex", "no vertex element"))?;
    Ok(Header { vertices, stride, properties, body_start: end + END.len() })
}

/// Reads a splat PLY. Cameras are left empty.
pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &bytes)?;
    let find = |name: &str| -> Result<&Property> {
        header
            .properties
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::format(path, name, "missing property"))
    };
    let fixed = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"];
    let fixed: Vec<&Property> = fixed.iter().map(|n| find(n)).collect::<Result<_>>()?;
    let rest_count = header.properties.iter().filter(|p| p.name.starts_with("f_rest_")).count();
    if rest_count != 0 && rest_count != REST {
        return Err(Error::format(path, "f_rest", format!("expected 0 or {REST} coefficients, found {rest_count}")));
    }
    let rest: Vec<&Property> = (0..rest_count).map(|i| find(&format!("f_rest_{i}"))).collect::<Result<_>>()?;

    let body = &bytes[header.body_start..];
    if body.len() < header.vertices * header.stride {
        return Err(Error::format(path, "vertex", "file is shorter than the declared vertex count"));
    }
    let mut gaussians = Vec::with_capacity(header.vertices);
    for v in 0..header.vertices {
        let row = &body[v * header.stride..(v + 1) * header.stride];
        let get = |p: &Property| p.kind.read(&row[p.offset..]);
        let f: Vec<f64> = fixed.iter().map(|p| get(p)).collect();
        gaussians.push(Gaussian {
            position: Vec3::new(f[0], f[1], f[2]),
            sh_dc: [f[3], f[4], f[5]],
            opacity_logit: f[6],
            log_scale: Vec3::new(f[7], f[8], f[9]),
            rotation: normalize_quaternion(Quaternion::new(f[10], f[11], f[12], f[13])),
            sh_rest: rest.iter().map(|p| get(p)).collect(),
        });
    }
    Ok(GaussianModel::new(gaussians, Vec::new())?)
}

/// Writes every Gaussian as float32 in the standard property order; normals
/// are written as zeros.
pub fn save_ply(model: &GaussianModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if model.is_empty() {
        return Err(gsreg_core::Error::EmptyModel.into());
    }
    let rest = if model.sh_degree == 0 { 0 } else { REST };
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", model.len());
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"].map(String::from).to_vec();
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.extend(["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"].map(String::from));
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut buf = Vec::with_capacity(header.len() + model.len() * names.len() * 4);
    buf.extend_from_slice(header.as_bytes());
    for g in &model.gaussians {
        let q = g.rotation;
        let mut row: Vec<f64> = vec![g.position.x, g.position.y, g.position.z, 0.0, 0.0, 0.0];
        row.extend_from_slice(&g.sh_dc);
        row.extend_from_slice(&g.sh_rest);
        row.push(g.opacity_logit);
        row.extend(g.log_scale.iter());
        row.extend([q.w, q.i, q.j, q.k]);
        for v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}
