use std::io::{self, Write};

use super::{fan_triangulate, Mesh, MeshIoError, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { name: String, count: ScalarType, item: ScalarType },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, MeshIoError> {
    let marker = b"end_header";
    let pos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| MeshIoError::parse("header", "missing end_header"))?;
    let mut body_offset = pos + marker.len();
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) == Some(&b'\n') {
        body_offset += 1;
    }
    let text = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| MeshIoError::parse("header", "header is not ASCII"))?;

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(MeshIoError::parse("line 1", "missing 'ply' magic")),
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in lines {
        let loc = format!("header line {}", i + 1);
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                encoding = Some(match tokens.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    Some(other) => {
                        return Err(MeshIoError::UnsupportedFormat(format!("ply {other}")))
                    }
                    None => return Err(MeshIoError::parse(loc, "format without encoding")),
                });
            }
            Some("element") => {
                let (Some(name), Some(count)) = (tokens.get(1), tokens.get(2)) else {
                    return Err(MeshIoError::parse(loc, "element needs name and count"));
                };
                let count = count
                    .parse::<usize>()
                    .map_err(|_| MeshIoError::parse(loc.clone(), "bad element count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| MeshIoError::parse(loc.clone(), "property before element"))?;
                let prop = if tokens.get(1) == Some(&"list") {
                    match (tokens.get(2), tokens.get(3), tokens.get(4)) {
                        (Some(c), Some(t), Some(name)) => Property::List {
                            name: name.to_string(),
                            count: ScalarType::parse(c)
                                .ok_or_else(|| MeshIoError::parse(loc.clone(), "bad list count type"))?,
                            item: ScalarType::parse(t)
                                .ok_or_else(|| MeshIoError::parse(loc.clone(), "bad list item type"))?,
                        },
                        _ => return Err(MeshIoError::parse(loc, "malformed list property")),
                    }
                } else {
                    match (tokens.get(1), tokens.get(2)) {
                        (Some(t), Some(name)) => Property::Scalar {
                            name: name.to_string(),
                            ty: ScalarType::parse(t)
                                .ok_or_else(|| MeshIoError::parse(loc.clone(), "bad property type"))?,
                        },
                        _ => return Err(MeshIoError::parse(loc, "malformed property")),
                    }
                };
                element.props.push(prop);
            }
            Some(other) => {
                return Err(MeshIoError::parse(loc, format!("unknown header keyword '{other}'")))
            }
        }
    }
    let encoding = encoding.ok_or_else(|| MeshIoError::parse("header", "missing format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_offset,
    })
}

/// Source of numeric values for either body encoding.
trait ValueReader {
    fn read(&mut self, ty: ScalarType) -> Result<f64, MeshIoError>;
    fn location(&self) -> String;
}

struct AsciiReader<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
    consumed: usize,
}

impl ValueReader for AsciiReader<'_> {
    fn read(&mut self, _ty: ScalarType) -> Result<f64, MeshIoError> {
        let tok = self
            .tokens
            .next()
            .ok_or_else(|| MeshIoError::parse(self.location(), "unexpected end of data"))?;
        self.consumed += 1;
        tok.parse::<f64>()
            .map_err(|_| MeshIoError::parse(self.location(), format!("bad number '{tok}'")))
    }

    fn location(&self) -> String {
        format!("body token {}", self.consumed)
    }
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl ValueReader for BinaryReader<'_> {
    fn read(&mut self, ty: ScalarType) -> Result<f64, MeshIoError> {
        let size = ty.size();
        let end = self.offset.checked_add(size).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(MeshIoError::parse(self.location(), "unexpected end of data"));
        };
        let b = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(match ty {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(b.try_into().expect("8 bytes")),
        })
    }

    fn location(&self) -> String {
        format!("byte {}", self.offset)
    }
}

fn read_body<R: ValueReader>(header: &Header, reader: &mut R) -> Result<Mesh, MeshIoError> {
    let mut vertices = Vec::new();
    let mut faces_raw: Vec<(String, Vec<f64>)> = Vec::new();
    let mut row = Vec::new();
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        let is_face = element.name == "face";
        let axis = |name: &str| {
            element.props.iter().position(|p| matches!(p, Property::Scalar { name: n, .. } if n == name))
        };
        let (xi, yi, zi) = (axis("x"), axis("y"), axis("z"));
        if is_vertex && (xi.is_none() || yi.is_none() || zi.is_none()) {
            return Err(MeshIoError::parse("header", "vertex element needs x, y, z"));
        }
        let face_list = element.props.iter().position(|p| {
            matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index")
        });

        for _ in 0..element.count {
            row.clear();
            let mut face = None;
            for (pi, prop) in element.props.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => row.push(reader.read(*ty)?),
                    Property::List { count, item, .. } => {
                        let loc = reader.location();
                        let len = reader.read(*count)?;
                        if !(0.0..=u32::MAX as f64).contains(&len) || len.fract() != 0.0 {
                            return Err(MeshIoError::parse(loc, "bad list length"));
                        }
                        let mut items = Vec::new();
                        for _ in 0..len as usize {
                            items.push(reader.read(*item)?);
                        }
                        row.push(f64::NAN);
                        if is_face && Some(pi) == face_list {
                            face = Some((loc, items));
                        }
                    }
                }
            }
            if is_vertex {
                let p = Point::new(row[xi.unwrap()], row[yi.unwrap()], row[zi.unwrap()]);
                if !p.coords.iter().all(|c| c.is_finite()) {
                    return Err(MeshIoError::parse(reader.location(), "non-finite coordinate"));
                }
                vertices.push(p);
            }
            if let Some(f) = face {
                faces_raw.push(f);
            }
        }
    }

    let n = vertices.len();
    let mut faces = Vec::new();
    let mut poly = Vec::new();
    for (loc, items) in faces_raw {
        if items.len() < 3 {
            return Err(MeshIoError::parse(loc, "face needs at least 3 vertices"));
        }
        poly.clear();
        for idx in items {
            if idx < 0.0 || idx.fract() != 0.0 || idx >= n as f64 {
                return Err(MeshIoError::Index {
                    location: loc.clone(),
                    index: idx.max(0.0) as usize,
                    count: n,
                });
            }
            poly.push(idx as usize);
        }
        fan_triangulate(&poly, &mut faces);
    }
    Ok(Mesh {
        vertices,
        faces,
        ..Default::default()
    })
}

/// Parses ASCII or binary little-endian PLY. Only `x`, `y`, `z` and the face
/// index list are kept.
pub fn parse_ply(bytes: &[u8]) -> Result<Mesh, MeshIoError> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset.min(bytes.len())..];
    match header.encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|e| MeshIoError::parse(format!("byte {}", header.body_offset + e.valid_up_to()), "invalid UTF-8"))?;
            let mut reader = AsciiReader {
                tokens: text.split_ascii_whitespace(),
                consumed: 0,
            };
            read_body(&header, &mut reader)
        }
        Encoding::BinaryLe => {
            let mut reader = BinaryReader {
                bytes,
                offset: header.body_offset,
            };
            read_body(&header, &mut reader)
        }
    }
}

/// Writes ASCII PLY with double-precision coordinates.
pub fn write_ply<W: Write>(mesh: &Mesh, out: &mut W) -> io::Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", mesh.vertices.len())?;
    writeln!(out, "property double x")?;
    writeln!(out, "property double y")?;
    writeln!(out, "property double z")?;
    writeln!(out, "element face {}", mesh.faces.len())?;
    writeln!(out, "property list uchar int vertex_indices")?;
    writeln!(out, "end_header")?;
    for v in &mesh.vertices {
        writeln!(out, "{:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ASCII: &str = "ply\nformat ascii 1.0\ncomment test\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 1\n1 0 0 2\n1 1 0 3\n0 1 0 4\n4 0 1 2 3\n";

    #[test]
    fn ascii_with_extra_property() {
        let mesh = parse_ply(ASCII.as_bytes()).unwrap();
        assert_eq!(mesh.vertices.len(), 4);
        assert_eq!(mesh.vertices[2], Point::new(1.0, 1.0, 0.0));
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn binary_little_endian() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n".to_vec();
        for p in [[0.0f64, 0.0, 0.0], [1.5, 0.0, 0.0], [0.0, 2.5, -1.0]] {
            for c in p {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        bytes.push(3);
        for i in [0u32, 1, 2] {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        let mesh = parse_ply(&bytes).unwrap();
        assert_eq!(mesh.vertices[2], Point::new(0.0, 2.5, -1.0));
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn truncated_binary_is_error() {
        let bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1000000000\nproperty float x\nproperty float y\nproperty float z\nend_header\n\x00\x00";
        assert!(matches!(parse_ply(bytes), Err(MeshIoError::Parse { .. })));
    }

    #[test]
    fn face_out_of_range() {
        let src = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n3 0 1 5\n";
        assert!(matches!(parse_ply(src.as_bytes()), Err(MeshIoError::Index { index: 5, .. })));
    }

    #[test]
    fn big_endian_unsupported() {
        let src = "ply\nformat binary_big_endian 1.0\nend_header\n";
        assert!(matches!(parse_ply(src.as_bytes()), Err(MeshIoError::UnsupportedFormat(_))));
    }
}
