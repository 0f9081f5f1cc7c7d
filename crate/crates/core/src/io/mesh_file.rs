//! Triangle meshes on disk: Wavefront OBJ (text, 1-based indices) and
//! binary little-endian PLY. Both store vertices as 32-bit floats, so a
//! save/load round trip preserves them bitwise at that precision.

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use nalgebra::Vector3;
use std::fs;
use std::path::Path;

/// Writes a mesh in the format chosen by the file extension (`.obj` or
/// `.ply`, case-insensitive). Faces with more than three corners never
/// occur; loaded polygons are fan-triangulated on the way in.
pub fn save_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    match extension(path)?.as_str() {
        "obj" => save_obj(mesh, path),
        "ply" => save_ply(mesh, path),
        other => Err(Error::invalid(format!(
            "unsupported mesh extension .{other} for {}",
            path.display()
        ))),
    }
}

/// Reads a mesh, dispatching on the file extension like [`save_mesh`].
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    match extension(path)?.as_str() {
        "obj" => load_obj(path),
        "ply" => load_ply(path),
        other => Err(Error::invalid(format!(
            "unsupported mesh extension .{other} for {}",
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Result<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .ok_or_else(|| Error::invalid(format!("mesh path {} has no extension", path.display())))
}

fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x as f32, v.y as f32, v.z as f32));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut triangle_lines: Vec<usize> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut tokens = raw.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in coords.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| Error::MeshParse {
                        line,
                        message: "vertex needs three coordinates".into(),
                    })?;
                    *c = tok.parse::<f32>().map_err(|_| Error::MeshParse {
                        line,
                        message: format!("bad vertex coordinate {tok:?}"),
                    })? as f64;
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut corners: Vec<usize> = Vec::new();
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let raw_index: i64 = first.parse().map_err(|_| Error::MeshParse {
                        line,
                        message: format!("bad face index {tok:?}"),
                    })?;
                    if raw_index == 0 {
                        return Err(Error::MeshParse {
                            line,
                            message: "face index 0 in a 1-based format".into(),
                        });
                    }
                    if raw_index < 0 {
                        return Err(Error::MeshParse {
                            line,
                            message: format!("relative face index {raw_index} is not supported"),
                        });
                    }
                    corners.push(raw_index as usize - 1);
                }
                if corners.len() < 3 {
                    return Err(Error::MeshParse {
                        line,
                        message: format!("face has {} corners, needs at least 3", corners.len()),
                    });
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                    triangle_lines.push(line);
                }
            }
            _ => {}
        }
    }

    for (t, &line) in triangles.iter().zip(&triangle_lines) {
        for &i in t {
            if i >= vertices.len() {
                return Err(Error::MeshParse {
                    line,
                    message: format!("face index {} exceeds vertex count {}", i + 1, vertices.len()),
                });
            }
        }
    }
    Ok(TriangleMesh::new(vertices, triangles))
}

fn save_ply(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(
        format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            mesh.vertices.len(),
            mesh.triangles.len()
        )
        .as_bytes(),
    );
    for v in &mesh.vertices {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        out.push(3u8);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn load_ply(path: &Path) -> Result<TriangleMesh> {
    let data = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let marker = b"end_header\n";
    let header_end = data
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::MeshParse {
            line: 1,
            message: "no end_header marker".into(),
        })?
        + marker.len();
    let header = std::str::from_utf8(&data[..header_end]).map_err(|_| Error::MeshParse {
        line: 1,
        message: "header is not valid text".into(),
    })?;

    let mut n_vertices: Option<usize> = None;
    let mut n_faces: Option<usize> = None;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut in_element: Option<&str> = None;
    let mut header_lines = 0;
    for (idx, raw) in header.lines().enumerate() {
        let line = idx + 1;
        header_lines = line;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match (line, tokens.as_slice()) {
            (1, ["ply"]) => {}
            (1, _) => {
                return Err(Error::MeshParse {
                    line,
                    message: "file does not start with ply".into(),
                })
            }
            (2, ["format", "binary_little_endian", "1.0"]) => {}
            (2, _) => {
                return Err(Error::MeshParse {
                    line,
                    message: format!("unsupported format line {raw:?}"),
                })
            }
            (_, ["comment", ..]) => {}
            (_, ["element", "vertex", count]) => {
                n_vertices = Some(count.parse().map_err(|_| Error::MeshParse {
                    line,
                    message: format!("bad vertex count {count:?}"),
                })?);
                in_element = Some("vertex");
            }
            (_, ["element", "face", count]) => {
                n_faces = Some(count.parse().map_err(|_| Error::MeshParse {
                    line,
                    message: format!("bad face count {count:?}"),
                })?);
                in_element = Some("face");
            }
            (_, ["property", "float", name]) if in_element == Some("vertex") => {
                vertex_props.push((*name).to_string());
            }
            (_, ["property", "list", "uchar", "int" | "uint", "vertex_indices" | "vertex_index"])
                if in_element == Some("face") => {}
            (_, ["end_header"]) => break,
            _ => {
                return Err(Error::MeshParse {
                    line,
                    message: format!("unsupported header line {raw:?}"),
                })
            }
        }
    }
    if vertex_props != ["x", "y", "z"] {
        return Err(Error::MeshParse {
            line: header_lines,
            message: format!("vertex properties must be x, y, z; found {vertex_props:?}"),
        });
    }
    let n_vertices = n_vertices.ok_or_else(|| Error::MeshParse {
        line: header_lines,
        message: "no vertex element".into(),
    })?;
    let n_faces = n_faces.unwrap_or(0);

    let mut offset = header_end;
    let mut take = |count: usize, what: &str| -> Result<&[u8]> {
        if offset + count > data.len() {
            return Err(Error::MeshParse {
                line: header_lines,
                message: format!("payload truncated reading {what} at byte offset {offset}"),
            });
        }
        let slice = &data[offset..offset + count];
        offset += count;
        Ok(slice)
    };

    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let bytes = take(12, "vertex")?;
        let mut coords = [0.0f64; 3];
        for (k, c) in coords.iter_mut().enumerate() {
            *c = f32::from_le_bytes(bytes[k * 4..k * 4 + 4].try_into().unwrap()) as f64;
        }
        vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
    }
    let mut triangles = Vec::with_capacity(n_faces);
    for f in 0..n_faces {
        let arity = take(1, "face arity")?[0] as usize;
        if arity < 3 {
            return Err(Error::MeshParse {
                line: header_lines,
                message: format!("face {f} has {arity} corners"),
            });
        }
        let bytes = take(arity * 4, "face indices")?;
        let mut corners = Vec::with_capacity(arity);
        for k in 0..arity {
            let raw = i32::from_le_bytes(bytes[k * 4..k * 4 + 4].try_into().unwrap());
            if raw < 0 || raw as usize >= n_vertices {
                return Err(Error::MeshParse {
                    line: header_lines,
                    message: format!("face {f} index {raw} outside 0..{n_vertices}"),
                });
            }
            corners.push(raw as usize);
        }
        for k in 1..arity - 1 {
            triangles.push([corners[0], corners[k], corners[k + 1]]);
        }
    }
    Ok(TriangleMesh::new(vertices, triangles))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::seeded_rng;
    use rand::Rng;

    fn random_mesh(seed: u64, n: usize) -> TriangleMesh {
        let mut rng = seeded_rng(seed);
        let vertices: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0f64),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let triangles = (0..n - 2).map(|i| [i, i + 1, i + 2]).collect();
        TriangleMesh::new(vertices, triangles)
    }

    fn as_f32(mesh: &TriangleMesh) -> Vec<[f32; 3]> {
        mesh.vertices
            .iter()
            .map(|v| [v.x as f32, v.y as f32, v.z as f32])
            .collect()
    }

    #[test]
    fn obj_round_trip_is_exact_at_32_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.obj");
        let mesh = random_mesh(9, 20);
        save_mesh(&mesh, &path).unwrap();
        let loaded = load_mesh(&path).unwrap();
        assert_eq!(as_f32(&mesh), as_f32(&loaded));
        assert_eq!(mesh.triangles, loaded.triangles);
    }

    #[test]
    fn ply_round_trip_is_exact_at_32_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.ply");
        let mesh = random_mesh(10, 33);
        save_mesh(&mesh, &path).unwrap();
        let loaded = load_mesh(&path).unwrap();
        assert_eq!(as_f32(&mesh), as_f32(&loaded));
        assert_eq!(mesh.triangles, loaded.triangles);
    }

    #[test]
    fn obj_face_index_zero_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n").unwrap();
        match load_mesh(&path) {
            Err(Error::MeshParse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("1-based"), "{message}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn cube_obj_with_quads_fan_triangulates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.obj");
        std::fs::write(
            &path,
            "v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\n\
             v -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1\n\
             f 1 2 3 4\nf 5 8 7 6\nf 1 5 6 2\nf 2 6 7 3\nf 3 7 8 4\nf 4 8 5 1\n",
        )
        .unwrap();
        let mesh = load_mesh(&path).unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.triangles.len(), 12);
        assert!(mesh.is_watertight());
    }

    #[test]
    fn obj_slash_forms_take_the_position_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slash.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2//2 3/3\n").unwrap();
        let mesh = load_mesh(&path).unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn obj_out_of_range_face_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("range.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nf 1 2 9\n").unwrap();
        match load_mesh(&path) {
            Err(Error::MeshParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_ply_reports_the_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ply");
        let mesh = random_mesh(11, 5);
        save_mesh(&mesh, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 7);
        std::fs::write(&path, bytes).unwrap();
        match load_mesh(&path) {
            Err(Error::MeshParse { message, .. }) => {
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_extension_is_rejected() {
        assert!(load_mesh(Path::new("mesh.stl")).is_err());
        assert!(save_mesh(&random_mesh(1, 4), Path::new("mesh")).is_err());
    }
}
