//! Scene manifests: JSON descriptions whose assets are files next to the
//! manifest or `builtin:` references.

use std::path::{Path, PathBuf};

use refmap_core::brdf::ReflectanceParams;
use refmap_core::envmap::EnvironmentMap;
use refmap_core::image::RgbImage;
use refmap_core::render::NormalMap;
use refmap_core::scene::{resample_env, resample_nearest, Scene, SceneObject, TextureSource};
use serde::{Deserialize, Serialize};

use crate::builtin;
use crate::error::{CliError, Result};
use crate::formats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TextureRef {
    Color([f64; 3]),
    Path(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub normal_map: String,
    pub texture: TextureRef,
    pub psi: ReflectanceParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub seed: u64,
    pub objects: Vec<ObjectEntry>,
    pub envmap: String,
    #[serde(default)]
    pub notes: String,
}

impl SceneManifest {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let manifest: SceneManifest = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("{}: bad manifest: {e}", path.display())))?;
        manifest.validate(path)?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = formats::read_bytes(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| CliError::Config(format!("{}: manifest is not UTF-8", path.display())))?;
        Self::parse(path, &text)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
        if self.objects.is_empty() {
            return Err(bad("manifest lists no objects".into()));
        }
        for (m, o) in self.objects.iter().enumerate() {
            o.psi
                .validate()
                .map_err(|e| bad(format!("object {m}: {e}")))?;
            if let TextureRef::Color(c) = &o.texture {
                if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(bad(format!(
                        "object {m}: texture color {c:?} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn resolve(base: &Path, reference: &str) -> PathBuf {
    let p = Path::new(reference);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_env(base: &Path, reference: &str, height: usize) -> Result<EnvironmentMap> {
    if reference.starts_with(builtin::PREFIX) {
        return builtin::env(reference, height);
    }
    let path = resolve(base, reference);
    let env = formats::read_env(&path)?;
    Ok(resample_env(&env, height)?)
}

pub fn load_normals(base: &Path, reference: &str) -> Result<NormalMap> {
    if reference.starts_with(builtin::PREFIX) {
        return builtin::normals(reference);
    }
    formats::read_normal_map(&resolve(base, reference))
}

/// Linear-radiance files as is; PNG and other 8-bit images divided by 255.
pub fn load_texture(base: &Path, reference: &str) -> Result<RgbImage> {
    let path = resolve(base, reference);
    match formats::extension(&path).as_str() {
        "pfm" | "hdr" | "pic" => formats::read_image(&path),
        _ => {
            let img = image::open(&path)
                .map_err(|e| match e {
                    image::ImageError::IoError(io) => CliError::io(&path, io),
                    other => CliError::format(&path, other.to_string()),
                })?
                .into_rgb8();
            let (w, h) = img.dimensions();
            let data = img
                .pixels()
                .map(|p| p.0.map(|b| f64::from(b) / 255.0))
                .collect();
            Ok(RgbImage::new(w as usize, h as usize, data)?)
        }
    }
}

/// Materialize every asset; relative paths resolve against the manifest's directory.
pub fn load_scene(
    manifest_path: &Path,
    manifest: &SceneManifest,
    env_height: usize,
) -> Result<Scene> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let env = load_env(base, &manifest.envmap, env_height)?;
    let mut objects = Vec::with_capacity(manifest.objects.len());
    for (m, o) in manifest.objects.iter().enumerate() {
        let normals =
            load_normals(base, &o.normal_map).map_err(|e| e.context(format!("object {m}")))?;
        let (texture, texture_source) = match &o.texture {
            TextureRef::Color(c) => (
                RgbImage::filled(normals.width, normals.height, *c),
                TextureSource::Uniform(*c),
            ),
            TextureRef::Path(p) => {
                let t = load_texture(base, p).map_err(|e| e.context(format!("object {m}")))?;
                (
                    resample_nearest(&t, normals.width, normals.height),
                    TextureSource::Asset(m),
                )
            }
        };
        objects.push(SceneObject {
            normals,
            texture,
            psi: o.psi,
            normal_asset: m,
            texture_source,
        });
    }
    Ok(Scene {
        seed: manifest.seed,
        objects,
        env,
        env_asset: 0,
    })
}
