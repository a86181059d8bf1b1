//! Colored point clouds and PLY serialization.
//!
//! Written files are binary little-endian with one `vertex` element:
//! `x y z` (float), `red green blue` (uchar) and, when present, `nx ny nz`
//! (float). The reader also accepts ASCII files and tolerates extra scalar
//! properties and elements.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub normals: Option<Vec<[f32; 3]>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: [f32; 3], color: [u8; 3]) {
        self.positions.push(position);
        self.colors.push(color);
    }

    pub fn to_ply(&self) -> Vec<u8> {
        let mut header = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
             property float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\n",
            self.len()
        );
        if self.normals.is_some() {
            header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
        }
        header.push_str("end_header\n");
        let stride = 15 + if self.normals.is_some() { 12 } else { 0 };
        let mut out = Vec::with_capacity(header.len() + stride * self.len());
        out.extend_from_slice(header.as_bytes());
        for i in 0..self.len() {
            for v in self.positions[i] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&self.colors[i]);
            if let Some(n) = &self.normals {
                for v in n[i] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn write_ply(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_ply())?;
        Ok(())
    }

    pub fn read_ply(path: &Path) -> Result<Self> {
        Self::from_ply(&std::fs::read(path)?, path)
    }

    /// Parse PLY bytes; `path` only labels errors.
    pub fn from_ply(bytes: &[u8], path: &Path) -> Result<Self> {
        let (header, body) = Header::parse(bytes, path)?;
        match header.format {
            Format::Ascii => read_ascii(&header, body, path),
            Format::BinaryLe => read_binary(&header, body, path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Kind {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Kind::I8,
            "uchar" | "uint8" => Kind::U8,
            "short" | "int16" => Kind::I16,
            "ushort" | "uint16" => Kind::U16,
            "int" | "int32" => Kind::I32,
            "uint" | "uint32" => Kind::U32,
            "float" | "float32" => Kind::F32,
            "double" | "float64" => Kind::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Kind::I8 | Kind::U8 => 1,
            Kind::I16 | Kind::U16 => 2,
            Kind::I32 | Kind::U32 | Kind::F32 => 4,
            Kind::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Kind::I8 => b[0] as i8 as f64,
            Kind::U8 => b[0] as f64,
            Kind::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Kind::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Kind::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Kind::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Kind::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Kind::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Kind)>,
    /// Line of the `element` declaration.
    line: usize,
}

#[derive(Debug)]
struct Header {
    format: Format,
    elements: Vec<Element>,
    /// Lines consumed by the header.
    lines: usize,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

impl Header {
    fn parse<'a>(bytes: &'a [u8], path: &Path) -> Result<(Header, &'a [u8])> {
        let mut pos = 0;
        let mut line_no = 0;
        let mut format = None;
        let mut elements: Vec<Element> = Vec::new();
        loop {
            let Some(end) = bytes[pos..].iter().position(|&b| b == b'\n') else {
                return Err(parse_err(path, line_no + 1, "header ends without end_header"));
            };
            line_no += 1;
            let raw = &bytes[pos..pos + end];
            pos += end + 1;
            let line = std::str::from_utf8(raw)
                .map_err(|_| parse_err(path, line_no, "header is not valid UTF-8"))?
                .trim_end_matches('\r');
            let words: Vec<&str> = line.split_whitespace().collect();
            if line_no == 1 {
                if line != "ply" {
                    return Err(parse_err(path, 1, "missing 'ply' magic"));
                }
                continue;
            }
            match words.as_slice() {
                [] => {}
                ["comment", ..] | ["obj_info", ..] => {}
                ["format", f, "1.0"] => {
                    format = Some(match *f {
                        "ascii" => Format::Ascii,
                        "binary_little_endian" => Format::BinaryLe,
                        other => return Err(parse_err(path, line_no, format!("unsupported format '{other}'"))),
                    })
                }
                ["element", name, count] => {
                    let count = count
                        .parse()
                        .map_err(|_| parse_err(path, line_no, format!("bad element count '{count}'")))?;
                    elements.push(Element {
                        name: name.to_string(),
                        count,
                        props: Vec::new(),
                        line: line_no,
                    });
                }
                ["property", "list", ..] => {
                    let el = elements
                        .last()
                        .ok_or_else(|| parse_err(path, line_no, "property before any element"))?;
                    if el.name == "vertex" || el.count > 0 {
                        return Err(parse_err(path, line_no, "list properties are not supported"));
                    }
                }
                ["property", kind, name] => {
                    let kind = Kind::parse(kind)
                        .ok_or_else(|| parse_err(path, line_no, format!("unknown property type '{kind}'")))?;
                    elements
                        .last_mut()
                        .ok_or_else(|| parse_err(path, line_no, "property before any element"))?
                        .props
                        .push((name.to_string(), kind));
                }
                ["end_header"] => break,
                _ => return Err(parse_err(path, line_no, format!("unrecognized header line '{line}'"))),
            }
        }
        let format = format.ok_or_else(|| parse_err(path, line_no, "header has no format line"))?;
        Ok((
            Header {
                format,
                elements,
                lines: line_no,
            },
            &bytes[pos..],
        ))
    }
}

/// Property slots of the vertex element that the cloud uses.
struct Layout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
    normal: Option<[usize; 3]>,
}

fn layout(el: &Element, path: &Path) -> Result<Layout> {
    let find = |names: [&str; 3]| -> Option<[usize; 3]> {
        let idx: Vec<usize> = names
            .iter()
            .filter_map(|n| el.props.iter().position(|(p, _)| p == n))
            .collect();
        (idx.len() == 3).then(|| [idx[0], idx[1], idx[2]])
    };
    let xyz =
        find(["x", "y", "z"]).ok_or_else(|| parse_err(path, el.line, "vertex element lacks x, y, z properties"))?;
    Ok(Layout {
        xyz,
        rgb: find(["red", "green", "blue"]),
        normal: find(["nx", "ny", "nz"]),
    })
}

fn vertex_element<'h>(header: &'h Header, path: &Path) -> Result<(usize, &'h Element)> {
    header
        .elements
        .iter()
        .enumerate()
        .find(|(_, e)| e.name == "vertex")
        .ok_or_else(|| parse_err(path, header.lines, "no vertex element"))
}

fn push_vertex(cloud: &mut PointCloud, lay: &Layout, vals: &[f64]) {
    cloud.positions.push(lay.xyz.map(|i| vals[i] as f32));
    cloud
        .colors
        .push(lay.rgb.map_or([255; 3], |c| c.map(|i| vals[i].clamp(0.0, 255.0) as u8)));
    if let (Some(n), Some(ns)) = (lay.normal, cloud.normals.as_mut()) {
        ns.push(n.map(|i| vals[i] as f32));
    }
}

fn read_ascii(header: &Header, body: &[u8], path: &Path) -> Result<PointCloud> {
    let (vi, el) = vertex_element(header, path)?;
    let lay = layout(el, path)?;
    let text = std::str::from_utf8(body).map_err(|_| parse_err(path, header.lines + 1, "ASCII body is not UTF-8"))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (header.lines + 1 + i, l));
    let skip: usize = header.elements[..vi].iter().map(|e| e.count).sum();
    for _ in 0..skip {
        lines.next();
    }
    let mut cloud = PointCloud {
        normals: lay.normal.map(|_| Vec::with_capacity(el.count)),
        ..Default::default()
    };
    for _ in 0..el.count {
        let (no, line) = lines.next().ok_or_else(|| {
            parse_err(
                path,
                header.lines,
                format!("expected {} vertices, file ends early", el.count),
            )
        })?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, no, format!("bad vertex value: {e}")))?;
        if vals.len() != el.props.len() {
            return Err(parse_err(
                path,
                no,
                format!("vertex has {} values, header declares {}", vals.len(), el.props.len()),
            ));
        }
        push_vertex(&mut cloud, &lay, &vals);
    }
    Ok(cloud)
}

fn read_binary(header: &Header, body: &[u8], path: &Path) -> Result<PointCloud> {
    let (vi, el) = vertex_element(header, path)?;
    let lay = layout(el, path)?;
    let stride = |e: &Element| e.props.iter().map(|(_, k)| k.size()).sum::<usize>();
    let offset: usize = header.elements[..vi].iter().map(|e| e.count * stride(e)).sum();
    let s = stride(el);
    let need = offset + el.count * s;
    if body.len() < need {
        return Err(parse_err(
            path,
            header.lines,
            format!(
                "binary body holds {} bytes, {} vertices need {need}",
                body.len(),
                el.count
            ),
        ));
    }
    let mut cloud = PointCloud {
        normals: lay.normal.map(|_| Vec::with_capacity(el.count)),
        ..Default::default()
    };
    let mut vals = vec![0.0; el.props.len()];
    for rec in body[offset..need].chunks_exact(s) {
        let mut at = 0;
        for (v, (_, k)) in vals.iter_mut().zip(&el.props) {
            *v = k.read_le(&rec[at..]);
            at += k.size();
        }
        push_vertex(&mut cloud, &lay, &vals);
    }
    Ok(cloud)
}
