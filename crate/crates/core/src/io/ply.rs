//! PLY point clouds: ASCII and binary little-endian vertex elements with
//! `x y z` positions and `red green blue` uint8 colors.

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::Rgb;
use nalgebra::Vector3;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(Scalar, String),
    List(Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
    offset: usize,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(data: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let rest = &data[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(start, "header ended without `end_header`"))?;
        *pos = start + end + 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::parse(start, "header is not valid text"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (_, magic) = next_line(&mut pos)?;
    if magic.trim() != "ply" {
        return Err(Error::parse(0, "missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (off, line) = next_line(&mut pos)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match (tok.next(), tok.next()) {
                    (Some("ascii"), Some("1.0")) => Format::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => Format::BinaryLe,
                    _ => return Err(Error::parse(off, format!("unsupported format line `{line}`"))),
                });
            }
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::parse(off, "element without a name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::parse(off, "element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    offset: off,
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(off, "property before any element"))?;
                let prop = match tok.next() {
                    Some("list") => {
                        let ct = tok.next().and_then(Scalar::parse);
                        let it = tok.next().and_then(Scalar::parse);
                        match (ct, it, tok.next()) {
                            (Some(ct), Some(it), Some(_)) if !matches!(ct, Scalar::F32 | Scalar::F64) => {
                                Property::List(ct, it)
                            }
                            _ => return Err(Error::parse(off, format!("malformed list property `{line}`"))),
                        }
                    }
                    Some(t) => match (Scalar::parse(t), tok.next()) {
                        (Some(s), Some(name)) => Property::Scalar(s, name.to_string()),
                        _ => return Err(Error::parse(off, format!("malformed property `{line}`"))),
                    },
                    None => return Err(Error::parse(off, "empty property line")),
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::parse(off, format!("unexpected header keyword `{other}`")))
            }
        }
    }
    let format = format.ok_or_else(|| Error::parse(0, "header has no format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: pos,
    })
}

/// Column indices of the required vertex properties.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: [usize; 3],
}

fn vertex_layout(el: &Element) -> Result<VertexLayout> {
    let find = |name: &str, color: bool| -> Result<usize> {
        let i = el
            .props
            .iter()
            .position(|p| matches!(p, Property::Scalar(_, n) if n == name))
            .ok_or_else(|| Error::parse(el.offset, format!("vertex element lacks property `{name}`")))?;
        if color && !matches!(el.props[i], Property::Scalar(Scalar::U8, _)) {
            return Err(Error::parse(el.offset, format!("property `{name}` must be uchar")));
        }
        Ok(i)
    };
    Ok(VertexLayout {
        xyz: [find("x", false)?, find("y", false)?, find("z", false)?],
        rgb: [find("red", true)?, find("green", true)?, find("blue", true)?],
    })
}

struct Ascii<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Ascii<'_> {
    fn token(&mut self) -> Result<(usize, &str)> {
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, "truncated body"));
        }
        let s = std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| Error::parse(start, "body token is not valid text"))?;
        Ok((start, s))
    }

    fn number(&mut self) -> Result<f64> {
        let (off, t) = self.token()?;
        t.parse::<f64>()
            .map_err(|_| Error::parse(off, format!("`{t}` is not a number")))
    }

    fn count(&mut self) -> Result<usize> {
        let (off, t) = self.token()?;
        t.parse::<usize>()
            .map_err(|_| Error::parse(off, format!("`{t}` is not a list count")))
    }

    fn byte(&mut self) -> Result<u8> {
        let (off, t) = self.token()?;
        t.parse::<u8>()
            .map_err(|_| Error::parse(off, format!("`{t}` is not a uint8 color")))
    }
}

struct Binary<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Binary<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::parse(self.pos, "truncated body"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn scalar(&mut self, t: Scalar) -> Result<f64> {
        let b = self.take(t.size())?;
        Ok(match t {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }

    fn count(&mut self, t: Scalar) -> Result<usize> {
        let off = self.pos;
        let c = self.scalar(t)?;
        if c < 0.0 {
            return Err(Error::parse(off, "negative list count"));
        }
        Ok(c as usize)
    }
}

fn min_record_bytes(el: &Element, format: Format) -> usize {
    match format {
        Format::Ascii => 2 * el.props.len().max(1),
        Format::BinaryLe => el
            .props
            .iter()
            .map(|p| match p {
                Property::Scalar(s, _) => s.size(),
                Property::List(c, _) => c.size(),
            })
            .sum::<usize>()
            .max(1),
    }
}

/// Parses a PLY file held in memory.
pub fn parse_ply(data: &[u8]) -> Result<PointCloud> {
    let header = parse_header(data)?;
    let vi = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(header.body_offset, "no vertex element"))?;
    let vertex = &header.elements[vi];
    let layout = vertex_layout(vertex)?;
    let remaining = data.len() - header.body_offset;
    // Never trust the declared count for allocation.
    let cap = vertex
        .count
        .min(remaining / min_record_bytes(vertex, header.format));
    let mut positions = Vec::with_capacity(cap);
    let mut colors = Vec::with_capacity(cap);
    let mut row = vec![0.0; vertex.props.len()];

    match header.format {
        Format::Ascii => {
            let mut r = Ascii {
                data,
                pos: header.body_offset,
            };
            for el in &header.elements[..vi] {
                for _ in 0..el.count {
                    for p in &el.props {
                        match p {
                            Property::Scalar(..) => {
                                r.token()?;
                            }
                            Property::List(..) => {
                                for _ in 0..r.count()? {
                                    r.token()?;
                                }
                            }
                        }
                    }
                }
            }
            for _ in 0..vertex.count {
                let start = r.pos;
                for (i, p) in vertex.props.iter().enumerate() {
                    match p {
                        Property::Scalar(..) if layout.rgb.contains(&i) => row[i] = r.byte()? as f64,
                        Property::Scalar(..) => row[i] = r.number()?,
                        Property::List(..) => {
                            for _ in 0..r.count()? {
                                r.token()?;
                            }
                        }
                    }
                }
                push_vertex(&layout, &row, start, &mut positions, &mut colors)?;
            }
        }
        Format::BinaryLe => {
            let mut r = Binary {
                data,
                pos: header.body_offset,
            };
            for el in &header.elements[..vi] {
                for _ in 0..el.count {
                    for p in &el.props {
                        match p {
                            Property::Scalar(s, _) => {
                                r.take(s.size())?;
                            }
                            Property::List(c, it) => {
                                let n = r.count(*c)?;
                                let bytes = n
                                    .checked_mul(it.size())
                                    .ok_or_else(|| Error::parse(r.pos, "list too long"))?;
                                r.take(bytes)?;
                            }
                        }
                    }
                }
            }
            for _ in 0..vertex.count {
                let start = r.pos;
                for (i, p) in vertex.props.iter().enumerate() {
                    match p {
                        Property::Scalar(s, _) => row[i] = r.scalar(*s)?,
                        Property::List(c, it) => {
                            let n = r.count(*c)?;
                            let bytes = n
                                .checked_mul(it.size())
                                .ok_or_else(|| Error::parse(r.pos, "list too long"))?;
                            r.take(bytes)?;
                        }
                    }
                }
                push_vertex(&layout, &row, start, &mut positions, &mut colors)?;
            }
        }
    }
    PointCloud::new(positions, colors).map_err(|e| Error::parse(header.body_offset, e.to_string()))
}

fn push_vertex(
    layout: &VertexLayout,
    row: &[f64],
    offset: usize,
    positions: &mut Vec<Vector3<f64>>,
    colors: &mut Vec<Rgb>,
) -> Result<()> {
    let p = Vector3::new(row[layout.xyz[0]], row[layout.xyz[1]], row[layout.xyz[2]]);
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::parse(offset, "vertex position is not finite"));
    }
    positions.push(p);
    colors.push(Rgb::new(
        row[layout.rgb[0]] / 255.0,
        row[layout.rgb[1]] / 255.0,
        row[layout.rgb[2]] / 255.0,
    ));
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_ply(&std::fs::read(path)?)
}

/// Round-to-nearest uint8 quantization of a value in `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn header_text(n: usize, format: &str) -> String {
    format!(
        "ply\nformat {format} 1.0\nelement vertex {n}\n\
         property double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
}

/// ASCII encoding. Positions are written as `f64` with round-trip
/// precision, colors quantized to uint8.
pub fn encode_ply_ascii(pc: &PointCloud) -> Vec<u8> {
    let mut out = header_text(pc.len(), "ascii").into_bytes();
    for (p, c) in pc.positions().iter().zip(pc.colors()) {
        let _ = writeln!(
            out,
            "{:?} {:?} {:?} {} {} {}",
            p.x,
            p.y,
            p.z,
            quantize(c.x),
            quantize(c.y),
            quantize(c.z)
        );
    }
    out
}

pub fn encode_ply_binary(pc: &PointCloud) -> Vec<u8> {
    let mut out = header_text(pc.len(), "binary_little_endian").into_bytes();
    out.reserve(pc.len() * 27);
    for (p, c) in pc.positions().iter().zip(pc.colors()) {
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(c.iter().map(|v| quantize(*v)));
    }
    out
}

pub fn save_ply(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    std::fs::write(path, encode_ply_ascii(pc))?;
    Ok(())
}

pub fn save_ply_binary(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    std::fs::write(path, encode_ply_binary(pc))?;
    Ok(())
}
