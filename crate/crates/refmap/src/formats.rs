//! PFM, Radiance RGBE, PNG masks, MERL-style tables and the map/normal pairs
//! built on them.

use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use refmap_core::brdf::MerlTable;
use refmap_core::envmap::EnvironmentMap;
use refmap_core::geometry::{Rgb, Vec3};
use refmap_core::image::RgbImage;
use refmap_core::render::{NormalMap, ReflectanceMap};
use serde::Serialize;

use crate::error::{CliError, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

// ---- PFM ----

/// Little-endian, bottom row first.
pub fn encode_pfm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("PF\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.width * img.height * 12);
    for row in (0..img.height).rev() {
        for col in 0..img.width {
            for v in img.get(row, col) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn write_pfm(path: &Path, img: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_pfm(img))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()
}

/// Accepts color (`PF`) and grayscale (`Pf`) files of either byte order.
pub fn decode_pfm(path: &Path, bytes: &[u8]) -> Result<RgbImage> {
    let bad = |m: &str| CliError::format(path, m);
    let mut pos = 0;
    let channels = match next_token(bytes, &mut pos) {
        Some("PF") => 3,
        Some("Pf") => 1,
        _ => return Err(bad("not a PFM file")),
    };
    let mut number =
        |what: &str| -> Result<&str> { next_token(bytes, &mut pos).ok_or_else(|| bad(what)) };
    let width: usize = number("missing width")?
        .parse()
        .map_err(|_| bad("bad width"))?;
    let height: usize = number("missing height")?
        .parse()
        .map_err(|_| bad("bad height"))?;
    let scale: f64 = number("missing scale")?
        .parse()
        .map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be nonzero"));
    }
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4 * channels))
        .ok_or_else(|| bad("dimensions overflow"))?;
    if bytes.len() < pos + need {
        return Err(bad("truncated pixel data"));
    }
    let little = scale < 0.0;
    let mut data = vec![[0.0; 3]; width * height];
    let mut cursor = pos;
    for row in (0..height).rev() {
        for col in 0..width {
            let mut px = [0.0; 3];
            for c in 0..channels {
                let raw: [u8; 4] = bytes[cursor..cursor + 4].try_into().unwrap();
                cursor += 4;
                let v = if little {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
                px[c] = f64::from(v);
            }
            if channels == 1 {
                px = [px[0]; 3];
            }
            data[row * width + col] = px;
        }
    }
    Ok(RgbImage::new(width, height, data)?)
}

pub fn read_pfm(path: &Path) -> Result<RgbImage> {
    decode_pfm(path, &read_bytes(path)?)
}

// ---- Radiance RGBE ----

fn rgbe(p: Rgb) -> [u8; 4] {
    let v = p[0].max(p[1]).max(p[2]);
    if !(v > 1e-32) {
        return [0; 4];
    }
    // v = m * 2^e with m in [0.5, 1)
    let mut e = v.log2().floor() as i32 + 1;
    let mut scale = (-e as f64).exp2() * 256.0;
    if v * scale >= 256.0 {
        e += 1;
        scale *= 0.5;
    }
    let q = |c: f64| (c.max(0.0) * scale).min(255.0) as u8;
    [q(p[0]), q(p[1]), q(p[2]), (e + 128).clamp(0, 255) as u8]
}

/// Uncompressed scanlines, top row first.
pub fn encode_hdr(img: &RgbImage) -> Vec<u8> {
    let mut out = format!(
        "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {} +X {}\n",
        img.height, img.width
    )
    .into_bytes();
    for row in 0..img.height {
        for col in 0..img.width {
            // the largest mantissa is >= 128, so no pixel mimics an RLE marker
            out.extend_from_slice(&rgbe(img.get(row, col)));
        }
    }
    out
}

pub fn write_hdr(path: &Path, img: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_hdr(img))
}

pub fn read_hdr(path: &Path) -> Result<RgbImage> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let reader = image::ImageReader::with_format(BufReader::new(file), image::ImageFormat::Hdr);
    let decoded = reader
        .decode()
        .map_err(|e| CliError::format(path, format!("cannot decode Radiance file: {e}")))?
        .into_rgb32f();
    let (w, h) = decoded.dimensions();
    let data = decoded.pixels().map(|p| p.0.map(f64::from)).collect();
    Ok(RgbImage::new(w as usize, h as usize, data)?)
}

/// Dispatch on extension: `.pfm` or `.hdr` / `.pic`.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    match extension(path).as_str() {
        "pfm" => read_pfm(path),
        "hdr" | "pic" => read_hdr(path),
        other => Err(CliError::format(
            path,
            format!("unsupported image extension {other:?}"),
        )),
    }
}

pub fn write_image(path: &Path, img: &RgbImage) -> Result<()> {
    match extension(path).as_str() {
        "pfm" => write_pfm(path, img),
        "hdr" | "pic" => write_hdr(path, img),
        other => Err(CliError::format(
            path,
            format!("unsupported image extension {other:?}"),
        )),
    }
}

pub fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

pub fn read_env(path: &Path) -> Result<EnvironmentMap> {
    let img = read_image(path)?;
    if img.width != 2 * img.height {
        return Err(CliError::format(
            path,
            format!(
                "environment maps must be 2:1, got {}x{}",
                img.width, img.height
            ),
        ));
    }
    EnvironmentMap::new(img.height, img.width, img.data)
        .map_err(|e| CliError::from(e).context(path.display().to_string()))
}

// ---- masks ----

pub fn encode_mask_png(width: usize, height: usize, mask: &[bool]) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = mask.iter().map(|m| if *m { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| CliError::Config(format!("mask buffer does not match {width}x{height}")))?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| CliError::Config(format!("cannot encode mask: {e}")))?;
    Ok(out.into_inner())
}

pub fn write_mask_png(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    write_bytes(path, &encode_mask_png(width, height, mask)?)
}

/// Any pixel above mid-gray counts as set.
pub fn read_mask_png(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path)
        .map_err(|e| CliError::format(path, format!("cannot read mask: {e}")))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok((
        w as usize,
        h as usize,
        img.pixels().map(|p| p.0[0] > 127).collect(),
    ))
}

// ---- reflectance maps and normal maps ----

pub fn write_reflectance_map(pfm: &Path, mask_png: &Path, map: &ReflectanceMap) -> Result<()> {
    write_pfm(pfm, &map.to_image())?;
    write_mask_png(mask_png, map.resolution, map.resolution, &map.mask)
}

pub fn read_reflectance_map(pfm: &Path, mask_png: &Path) -> Result<ReflectanceMap> {
    let img = read_pfm(pfm)?;
    let (w, h, mask) = read_mask_png(mask_png)?;
    if img.width != img.height || w != img.width || h != img.height {
        return Err(CliError::format(
            pfm,
            "reflectance map and mask must be the same square size",
        ));
    }
    let mut map = ReflectanceMap::empty(img.width);
    for cell in 0..mask.len() {
        if mask[cell] && map.normal(cell).is_some() {
            map.radiance[cell] = img.data[cell];
            map.mask[cell] = true;
        }
    }
    Ok(map)
}

/// Components stored as floats; background pixels hold the zero vector.
pub fn write_normal_map(path: &Path, normals: &NormalMap) -> Result<()> {
    let data = normals
        .normals
        .iter()
        .zip(&normals.mask)
        .map(|(n, m)| if *m { [n.x, n.y, n.z] } else { [0.0; 3] })
        .collect();
    write_pfm(path, &RgbImage::new(normals.width, normals.height, data)?)
}

pub fn read_normal_map(path: &Path) -> Result<NormalMap> {
    let img = read_pfm(path)?;
    let mut normals = Vec::with_capacity(img.data.len());
    let mut mask = Vec::with_capacity(img.data.len());
    for p in &img.data {
        let n = Vec3::new(p[0], p[1], p[2]);
        // float32 storage; renormalize what survived the round trip
        if n.norm() > 0.5 && n.z > 0.0 {
            normals.push(n.normalize());
            mask.push(true);
        } else {
            normals.push(Vec3::default());
            mask.push(false);
        }
    }
    NormalMap::new(img.width, img.height, normals, mask)
        .map_err(|e| CliError::from(e).context(path.display().to_string()))
}

// ---- MERL-style tables ----

pub const MERL_MAGIC: u32 = u32::from_le_bytes(*b"RMT1");

#[derive(Serialize)]
struct Axis {
    name: &'static str,
    start: f64,
    step: f64,
    count: usize,
}

#[derive(Serialize)]
struct MerlSidecar {
    dims: [usize; 3],
    axes: [Axis; 3],
    layout: &'static str,
    value_type: &'static str,
    masked_cells: &'static str,
    valid_cells: usize,
}

/// 16-byte header (three u32 dims and a magic word) then RGB float64 triples.
pub fn encode_merl(table: &MerlTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + table.values.len() * 24);
    for d in table.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&MERL_MAGIC.to_le_bytes());
    for v in &table.values {
        for c in v {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn merl_sidecar(table: &MerlTable) -> String {
    let step = |axis: usize| table.axis_value(axis, 1) - table.axis_value(axis, 0);
    let sidecar = MerlSidecar {
        dims: table.dims,
        axes: [
            Axis {
                name: "theta_h",
                start: 0.0,
                step: step(0),
                count: table.dims[0],
            },
            Axis {
                name: "theta_d",
                start: 0.0,
                step: step(1),
                count: table.dims[1],
            },
            Axis {
                name: "phi_d",
                start: 0.0,
                step: step(2),
                count: table.dims[2],
            },
        ],
        layout: "row-major over (theta_h, theta_d, phi_d), rgb interleaved, little-endian",
        value_type: "f64, 1/sr",
        masked_cells: "below-horizon cells hold 0",
        valid_cells: table.mask.iter().filter(|m| **m).count(),
    };
    serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n"
}

pub fn write_merl(bin: &Path, json: &Path, table: &MerlTable) -> Result<()> {
    write_bytes(bin, &encode_merl(table))?;
    write_bytes(json, merl_sidecar(table).as_bytes())
}

pub fn decode_merl(path: &Path, bytes: &[u8]) -> Result<([usize; 3], Vec<Rgb>)> {
    if bytes.len() < 16 {
        return Err(CliError::format(path, "truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(3) != MERL_MAGIC {
        return Err(CliError::format(path, "bad magic"));
    }
    let dims = [word(0) as usize, word(1) as usize, word(2) as usize];
    let n = dims[0] * dims[1] * dims[2];
    if bytes.len() != 16 + 24 * n {
        return Err(CliError::format(
            path,
            "payload does not match the header dims",
        ));
    }
    let values = (0..n)
        .map(|i| {
            core::array::from_fn(|c| {
                let at = 16 + 24 * i + 8 * c;
                f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
            })
        })
        .collect();
    Ok((dims, values))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.write_all(b"\n").expect("vec write");
    write_bytes(path, &text)
}
