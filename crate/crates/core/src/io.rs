//! On-disk formats: raw f32 volumes and images with JSON sidecars, 16-bit PNG
//! previews, and OBJ / binary PLY meshes. Every writer goes through a
//! temporary file and a rename.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::drr::{ImageDomain, ProjectionImage};
use crate::error::{Error, Result};
use crate::geometry::{CameraGeometry, Point3};
use crate::isosurface::TriangleMesh;
use crate::occupancy::BoneClass;
use crate::volume::{Volume3D, VolumeHeader};

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Path of the JSON sidecar belonging to a raw data file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    with_suffix(path, ".json")
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = with_suffix(path, ".tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * expected {
        return Err(Error::Format(format!(
            "{}: expected {} bytes ({expected} f32 values) from the sidecar, found {}",
            path.display(),
            4 * expected,
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

/// Little-endian f32 voxels at `path`, header at `path.json`.
pub fn save_volume(vol: &Volume3D, path: &Path) -> Result<()> {
    write_atomic(path, &f32_bytes(&vol.data))?;
    save_json(&vol.header(), &sidecar_path(path))
}

pub fn load_volume(path: &Path) -> Result<Volume3D> {
    let h: VolumeHeader = load_json(&sidecar_path(path))?;
    let data = read_f32(path, h.extents.iter().product())?;
    Volume3D::new(h.extents, h.spacing, h.origin, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageHeader {
    pub width: usize,
    pub height: usize,
    pub domain: ImageDomain,
    pub geometry: CameraGeometry,
}

/// Little-endian f32 pixels (row-major) at `path`, header at `path.json`.
pub fn save_image(img: &ProjectionImage, path: &Path) -> Result<()> {
    write_atomic(path, &f32_bytes(&img.data))?;
    let header = ImageHeader { width: img.width, height: img.height, domain: img.domain, geometry: img.geometry.clone() };
    save_json(&header, &sidecar_path(path))
}

pub fn load_image(path: &Path) -> Result<ProjectionImage> {
    let h: ImageHeader = load_json(&sidecar_path(path))?;
    if (h.width, h.height) != (h.geometry.width, h.geometry.height) {
        return Err(Error::Format(format!("{}: header size disagrees with its geometry", path.display())));
    }
    let mut data = read_f32(path, h.width * h.height)?;
    if h.domain != ImageDomain::LineIntegral {
        // f32 rounding can push values a hair outside [0, 1].
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    ProjectionImage::new(data, h.geometry, h.domain)
}

/// 16-bit grayscale preview; values are clamped to `[0, 1]` first.
pub fn save_png16(img: &ProjectionImage, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        let px: Vec<u8> =
            img.data.iter().flat_map(|v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes()).collect();
        w.write_image_data(&px).map_err(|e| Error::Format(e.to_string()))?;
    }
    write_atomic(path, &buf)
}

/// Mask preview, 8-bit: 255 for set pixels.
pub fn save_mask_png(mask: &[bool], width: usize, height: usize, path: &Path) -> Result<()> {
    if mask.len() != width * height {
        return Err(Error::Format(format!("mask has {} pixels for {width}x{height}", mask.len())));
    }
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        let px: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        w.write_image_data(&px).map_err(|e| Error::Format(e.to_string()))?;
    }
    write_atomic(path, &buf)
}

pub fn load_mask_png(path: &Path) -> Result<Vec<bool>> {
    let dec = png::Decoder::new(BufReader::new(fs::File::open(path)?));
    let mut reader = dec.read_info().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("{}: masks must be 8-bit grayscale", path.display())));
    }
    Ok(buf[..info.buffer_size()].iter().map(|&v| v > 127).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::Format(format!("{}: unknown mesh extension (expected .obj or .ply)", path.display()))),
        }
    }
}

fn class_from_name(name: &str) -> Option<BoneClass> {
    BoneClass::ALL.iter().copied().find(|c| c.name() == name)
}

fn obj_bytes(mesh: &TriangleMesh) -> Vec<u8> {
    let mut s = String::new();
    if let Some(c) = mesh.class {
        s.push_str(&format!("# class {}\no {}\n", c.index(), c.name()));
    }
    for v in &mesh.vertices {
        s.push_str(&format!("v {:.8e} {:.8e} {:.8e}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    s.into_bytes()
}

fn parse_obj(path: &Path) -> Result<TriangleMesh> {
    let bad = |line: usize, msg: &str| Error::Format(format!("{}:{line}: {msg}", path.display()));
    let mut mesh = TriangleMesh::default();
    for (n, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.map(|t| t.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad(n + 1, "bad vertex"))?;
                if c.len() < 3 {
                    return Err(bad(n + 1, "vertex needs three coordinates"));
                }
                mesh.vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| t.split('/').next().unwrap_or("").parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(n + 1, "bad face"))?;
                if idx.len() != 3 || idx.contains(&0) {
                    return Err(bad(n + 1, "only 1-based triangles are supported"));
                }
                mesh.triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            Some("o") => mesh.class = it.next().and_then(class_from_name),
            _ => {}
        }
    }
    if !mesh.indices_valid() {
        return Err(Error::Format(format!("{}: face index out of range", path.display())));
    }
    Ok(mesh)
}

fn ply_bytes(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = String::from("ply\nformat binary_little_endian 1.0\n");
    if let Some(c) = mesh.class {
        out.push_str(&format!("comment class {} {}\n", c.index(), c.name()));
    }
    out.push_str(&format!(
        "element vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    ));
    let mut bytes = out.into_bytes();
    for v in &mesh.vertices {
        for c in [v.x, v.y, v.z] {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        bytes.push(3);
        for i in t {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
    }
    bytes
}

fn parse_ply(path: &Path) -> Result<TriangleMesh> {
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(bad("missing end_header".into()));
        }
        let line = line.trim_end().to_string();
        if line == "end_header" {
            break;
        }
        header.push(line);
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(bad("not a PLY file".into()));
    }
    if !header.iter().any(|l| l == "format binary_little_endian 1.0") {
        return Err(bad("only binary_little_endian 1.0 is supported".into()));
    }
    let count = |name: &str| -> Result<usize> {
        header
            .iter()
            .find_map(|l| l.strip_prefix(&format!("element {name} ")))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| bad(format!("missing element {name}")))
    };
    let (nv, nf) = (count("vertex")?, count("face")?);
    let vertex_props: Vec<&str> = header
        .iter()
        .skip_while(|l| !l.starts_with("element vertex"))
        .skip(1)
        .take_while(|l| l.starts_with("property"))
        .map(|l| l.split_whitespace().nth(1).unwrap_or(""))
        .collect();
    let width = match vertex_props.as_slice() {
        ["double", "double", "double"] => 8,
        ["float", "float", "float"] => 4,
        other => return Err(bad(format!("unsupported vertex properties {other:?}"))),
    };
    let list = header
        .iter()
        .find(|l| l.starts_with("property list") && l.ends_with("vertex_indices"))
        .ok_or_else(|| bad("missing face list".into()))?;
    if !matches!(list.split_whitespace().nth(2), Some("uchar" | "uint8")) {
        return Err(bad(format!("unsupported face list {list}")));
    }
    let index_width = match list.split_whitespace().nth(3) {
        Some("int" | "uint" | "int32" | "uint32") => 4,
        other => return Err(bad(format!("unsupported face index type {other:?}"))),
    };
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let need = nv * 3 * width + nf * (1 + 3 * index_width);
    if body.len() != need {
        return Err(bad(format!("body has {} bytes, header implies {need}", body.len())));
    }
    let mut mesh = TriangleMesh::default();
    let mut off = 0;
    for _ in 0..nv {
        let mut c = [0.0; 3];
        for v in &mut c {
            *v = if width == 8 {
                f64::from_le_bytes(body[off..off + 8].try_into().expect("8 bytes"))
            } else {
                f32::from_le_bytes(body[off..off + 4].try_into().expect("4 bytes")) as f64
            };
            off += width;
        }
        mesh.vertices.push(Point3::new(c[0], c[1], c[2]));
    }
    for _ in 0..nf {
        if body[off] != 3 {
            return Err(bad(format!("face with {} vertices; only triangles are supported", body[off])));
        }
        off += 1;
        let mut t = [0u32; 3];
        for v in &mut t {
            *v = u32::from_le_bytes(body[off..off + 4].try_into().expect("4 bytes"));
            off += 4;
        }
        mesh.triangles.push(t);
    }
    mesh.class = header
        .iter()
        .find_map(|l| l.strip_prefix("comment class "))
        .and_then(|rest| rest.split_whitespace().nth(1))
        .and_then(class_from_name);
    if !mesh.indices_valid() {
        return Err(bad("face index out of range".into()));
    }
    Ok(mesh)
}

/// Writes OBJ (ASCII, 9 significant digits) or binary little-endian PLY by extension.
pub fn save_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let bytes = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => obj_bytes(mesh),
        MeshFormat::Ply => ply_bytes(mesh),
    };
    write_atomic(path, &bytes)
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => parse_obj(path),
        MeshFormat::Ply => parse_ply(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extension_dispatch() {
        assert_eq!(MeshFormat::from_path(Path::new("a/b.OBJ")).unwrap(), MeshFormat::Obj);
        assert_eq!(MeshFormat::from_path(Path::new("b.ply")).unwrap(), MeshFormat::Ply);
        assert!(MeshFormat::from_path(Path::new("b.stl")).is_err());
        assert!(MeshFormat::from_path(Path::new("noext")).is_err());
    }

    #[test]
    fn obj_uses_nine_significant_digits() {
        let m = TriangleMesh::new(vec![Point3::new(0.123456789123, -1.0, 2.5e-7)], vec![]);
        let text = String::from_utf8(obj_bytes(&m)).unwrap();
        assert_eq!(text, "v 1.23456789e-1 -1.00000000e0 2.50000000e-7\n");
    }
}
