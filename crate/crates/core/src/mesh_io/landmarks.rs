use std::path::{Path, PathBuf};

use super::{write_atomic, LandmarkMap, MeshIoError};

/// `face.obj` -> `face.lmk`.
pub fn sidecar_path(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("lmk")
}

/// Parses a `name,index` CSV.
pub fn parse_landmarks(bytes: &[u8]) -> Result<LandmarkMap, MeshIoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| MeshIoError::parse("line 1", e.to_string()))?;
    if headers.len() != 2 || &headers[0] != "name" || &headers[1] != "index" {
        return Err(MeshIoError::parse("line 1", "expected header 'name,index'"));
    }
    let mut map = LandmarkMap::new();
    for (i, record) in reader.records().enumerate() {
        let loc = format!("line {}", i + 2);
        let record = record.map_err(|e| MeshIoError::parse(loc.clone(), e.to_string()))?;
        if record.len() != 2 {
            return Err(MeshIoError::parse(loc, "expected 2 fields"));
        }
        let index = record[1]
            .trim()
            .parse::<usize>()
            .map_err(|_| MeshIoError::parse(loc.clone(), format!("bad index '{}'", &record[1])))?;
        if map.insert(record[0].to_string(), index).is_some() {
            return Err(MeshIoError::parse(loc, format!("duplicate landmark '{}'", &record[0])));
        }
    }
    Ok(map)
}

pub fn read_landmarks(path: &Path) -> Result<LandmarkMap, MeshIoError> {
    let bytes = std::fs::read(path).map_err(|e| MeshIoError::io(path, e))?;
    parse_landmarks(&bytes).map_err(|e| match e {
        MeshIoError::Parse { location, message } => MeshIoError::Parse {
            location: format!("{} {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn write_landmarks(landmarks: &LandmarkMap, path: &Path) -> Result<(), MeshIoError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io_err = |e: csv::Error| MeshIoError::io(path, std::io::Error::other(e));
    writer.write_record(["name", "index"]).map_err(io_err)?;
    for (name, idx) in landmarks {
        writer.write_record([name.as_str(), &idx.to_string()]).map_err(io_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| MeshIoError::io(path, std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_basic() {
        let map = parse_landmarks(b"name,index\nnose_tip,12\nchin,3\n").unwrap();
        assert_eq!(map["nose_tip"], 12);
        assert_eq!(map["chin"], 3);
    }

    #[test]
    fn wrong_header() {
        assert!(parse_landmarks(b"label,vertex\na,1\n").is_err());
    }

    #[test]
    fn write_format_is_lf_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.lmk");
        let mut map = LandmarkMap::new();
        map.insert("b".into(), 2);
        map.insert("a".into(), 1);
        write_landmarks(&map, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "name,index\na,1\nb,2\n");
        assert_eq!(read_landmarks(&path).unwrap(), map);
    }
}
