use std::io::{self, Write};

use super::{fan_triangulate, Mesh, MeshIoError, Point};

/// Parses Wavefront OBJ geometry. `vt`/`vn` and grouping records are skipped;
/// polygonal faces are fan-triangulated.
pub fn parse_obj(bytes: &[u8]) -> Result<Mesh, MeshIoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        MeshIoError::parse(format!("byte {}", e.valid_up_to()), "invalid UTF-8")
    })?;
    let mut vertices = Vec::new();
    // faces are resolved after all vertices are known so that forward references work
    let mut raw_faces: Vec<(usize, Vec<i64>)> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.split('#').next().unwrap_or("");
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" => {
                let mut xyz = [0.0f64; 3];
                for c in xyz.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| {
                        MeshIoError::parse(format!("line {lineno}"), "vertex needs 3 coordinates")
                    })?;
                    *c = tok.parse::<f64>().map_err(|_| {
                        MeshIoError::parse(format!("line {lineno}"), format!("bad number '{tok}'"))
                    })?;
                    if !c.is_finite() {
                        return Err(MeshIoError::parse(
                            format!("line {lineno}"),
                            "non-finite coordinate",
                        ));
                    }
                }
                vertices.push(Point::new(xyz[0], xyz[1], xyz[2]));
            }
            "f" => {
                let mut poly = Vec::new();
                for tok in tokens {
                    let head = tok.split('/').next().unwrap_or("");
                    let idx = head.parse::<i64>().map_err(|_| {
                        MeshIoError::parse(format!("line {lineno}"), format!("bad index '{tok}'"))
                    })?;
                    if idx == 0 {
                        return Err(MeshIoError::parse(
                            format!("line {lineno}"),
                            "OBJ indices start at 1",
                        ));
                    }
                    poly.push(idx);
                }
                if poly.len() < 3 {
                    return Err(MeshIoError::parse(
                        format!("line {lineno}"),
                        "face needs at least 3 vertices",
                    ));
                }
                raw_faces.push((lineno, poly));
            }
            _ => {}
        }
    }

    let n = vertices.len();
    let mut faces = Vec::with_capacity(raw_faces.len());
    let mut poly = Vec::new();
    for (lineno, raw) in raw_faces {
        poly.clear();
        for idx in raw {
            // negative indices are relative to the end of the vertex list
            let resolved = if idx > 0 {
                (idx - 1) as i128
            } else {
                n as i128 + idx as i128
            };
            if resolved < 0 || resolved >= n as i128 {
                return Err(MeshIoError::Index {
                    location: format!("line {lineno}"),
                    index: resolved.max(0) as usize,
                    count: n,
                });
            }
            poly.push(resolved as usize);
        }
        fan_triangulate(&poly, &mut faces);
    }

    Ok(Mesh {
        vertices,
        faces,
        ..Default::default()
    })
}

/// Writes `v` and `f` records. Coordinates use the shortest representation
/// that parses back to the identical `f64`.
pub fn write_obj<W: Write>(mesh: &Mesh, out: &mut W) -> io::Result<()> {
    for v in &mesh.vertices {
        writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_triangle() {
        let mesh = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let mesh = parse_obj(b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn texture_and_normal_records_are_dropped() {
        let src = b"v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3//1\n";
        let mesh = parse_obj(src).unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn negative_indices() {
        let mesh = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn missing_vertex_is_index_error() {
        let err = parse_obj(b"v 0 0 0\nv 1 0 0\nf 1 2 3\n").unwrap_err();
        assert!(matches!(err, MeshIoError::Index { index: 2, count: 2, .. }));
    }

    #[test]
    fn malformed_record_reports_line() {
        let err = parse_obj(b"v 0 0 0\nv 1 zz 0\n").unwrap_err();
        match err {
            MeshIoError::Parse { location, .. } => assert_eq!(location, "line 2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_faces_write_only_vertices() {
        let mesh = Mesh::from_points(vec![Point::new(1.0, 2.0, 3.0)]);
        let mut buf = Vec::new();
        write_obj(&mesh, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().all(|l| l.starts_with("v ")));
    }
}
