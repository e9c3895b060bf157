//! OBJ and binary little-endian PLY read/write for triangle meshes.

use nalgebra::{Vector2, Vector3};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::TriMesh;
use crate::{Error, Result};

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    if let Some(uv) = &mesh.uv {
        for t in uv {
            writeln!(w, "vt {} {}", t.x, t.y)?;
        }
        for f in &mesh.faces {
            writeln!(
                w,
                "f {}/{} {}/{} {}/{}",
                f[0] + 1,
                f[0] + 1,
                f[1] + 1,
                f[1] + 1,
                f[2] + 1,
                f[2] + 1
            )?;
        }
    } else {
        for f in &mesh.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
    }
    Ok(())
}

/// Reads an OBJ with triangular faces. Texture coordinates are accepted
/// only in the per-vertex layout this crate writes (vt index == v index).
pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut vertices = Vec::new();
    let mut uvs: Vec<Vector2<f64>> = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in p.iter_mut() {
                    *c = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(path, format!("bad vertex on line {}", ln + 1)))?;
                }
                vertices.push(Vector3::new(p[0], p[1], p[2]));
            }
            Some("vt") => {
                let mut p = [0.0; 2];
                for c in p.iter_mut() {
                    *c = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(path, format!("bad uv on line {}", ln + 1)))?;
                }
                uvs.push(Vector2::new(p[0], p[1]));
            }
            Some("f") => {
                let mut idx = [0u32; 3];
                for (k, tok) in it.take(3).enumerate() {
                    let vi: i64 = tok
                        .split('/')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(path, format!("bad face on line {}", ln + 1)))?;
                    if vi < 1 {
                        return Err(parse_err(path, "negative face indices unsupported"));
                    }
                    idx[k] = (vi - 1) as u32;
                }
                faces.push(idx);
            }
            _ => {}
        }
    }
    let uv = if uvs.len() == vertices.len() && !uvs.is_empty() {
        Some(uvs)
    } else {
        None
    };
    Ok(TriMesh {
        vertices,
        faces,
        uv,
    })
}

pub fn write_ply(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let has_uv = mesh.uv.is_some();
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        mesh.vertices.len()
    )?;
    if has_uv {
        write!(w, "property double s\nproperty double t\n")?;
    }
    write!(
        w,
        "element face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.faces.len()
    )?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in [v.x, v.y, v.z] {
            w.write_all(&c.to_le_bytes())?;
        }
        if let Some(uv) = &mesh.uv {
            w.write_all(&uv[i].x.to_le_bytes())?;
            w.write_all(&uv[i].y.to_le_bytes())?;
        }
    }
    for f in &mesh.faces {
        w.write_all(&[3u8])?;
        for &i in f {
            w.write_all(&i.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<TriMesh> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(parse_err(path, "unexpected EOF in header"));
        }
        header.push_str(&line);
        if line.trim() == "end_header" {
            break;
        }
    }
    if !header.contains("format binary_little_endian 1.0") {
        return Err(parse_err(path, "only binary little-endian PLY supported"));
    }
    let mut n_vertex = 0usize;
    let mut n_face = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = "";
    for line in header.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["element", "vertex", n] => {
                n_vertex = n.parse().map_err(|_| parse_err(path, "bad vertex count"))?;
                current = "vertex";
            }
            ["element", "face", n] => {
                n_face = n.parse().map_err(|_| parse_err(path, "bad face count"))?;
                current = "face";
            }
            ["property", ty, name] if current == "vertex" => {
                if *ty != "double" {
                    return Err(parse_err(path, format!("unsupported vertex property type {ty}")));
                }
                vertex_props.push((*name).to_string());
            }
            _ => {}
        }
    }
    let has_uv = vertex_props.iter().any(|p| p == "s");
    let expected: Vec<&str> = if has_uv {
        vec!["x", "y", "z", "s", "t"]
    } else {
        vec!["x", "y", "z"]
    };
    if vertex_props != expected {
        return Err(parse_err(path, format!("unsupported vertex layout {vertex_props:?}")));
    }
    let mut vertices = Vec::with_capacity(n_vertex);
    let mut uv = if has_uv { Some(Vec::with_capacity(n_vertex)) } else { None };
    let mut buf8 = [0u8; 8];
    let mut read_f64 = |r: &mut BufReader<std::fs::File>| -> Result<f64> {
        r.read_exact(&mut buf8)?;
        Ok(f64::from_le_bytes(buf8))
    };
    for _ in 0..n_vertex {
        let x = read_f64(&mut r)?;
        let y = read_f64(&mut r)?;
        let z = read_f64(&mut r)?;
        vertices.push(Vector3::new(x, y, z));
        if let Some(uvv) = &mut uv {
            let s = read_f64(&mut r)?;
            let t = read_f64(&mut r)?;
            uvv.push(Vector2::new(s, t));
        }
    }
    let mut faces = Vec::with_capacity(n_face);
    for _ in 0..n_face {
        let mut count = [0u8; 1];
        r.read_exact(&mut count)?;
        if count[0] != 3 {
            return Err(parse_err(path, "non-triangular face"));
        }
        let mut idx = [0u32; 3];
        for i in idx.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *i = u32::from_le_bytes(b);
        }
        faces.push(idx);
    }
    Ok(TriMesh {
        vertices,
        faces,
        uv,
    })
}

/// Loads a mesh by extension (.obj or .ply).
pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => read_obj(path),
        Some("ply") => read_ply(path),
        other => Err(parse_err(path, format!("unsupported mesh extension {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives;

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = primitives::cylinder(8);
        let p = dir.path().join("c.obj");
        write_obj(&m, &p).unwrap();
        let back = read_obj(&p).unwrap();
        assert_eq!(m.faces, back.faces);
        for (a, b) in m.vertices.iter().zip(&back.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(back.uv.is_some());
    }

    #[test]
    fn ply_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = primitives::cylinder(8);
        let p = dir.path().join("c.ply");
        write_ply(&m, &p).unwrap();
        let back = read_ply(&p).unwrap();
        assert_eq!(m, back);
    }
}
