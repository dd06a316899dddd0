//! Procedural assets addressable from manifests as `builtin:` references,
//! so demo scenes and tests need no binary files.

use refmap_core::envmap::EnvironmentMap;
use refmap_core::geometry::{Rgb, Vec3};
use refmap_core::render::NormalMap;
use refmap_core::rng::{CounterRng, Stream};

use crate::error::{CliError, Result};

pub const PREFIX: &str = "builtin:";

/// Sky gradient, darker ground and one soft sun. The variant picks the sun
/// position, sun color and the sky tint.
pub fn sky(variant: u64, height: usize) -> EnvironmentMap {
    let rng = CounterRng::new(variant, Stream::Scene).with(u64::MAX);
    let elevation = 0.15 + 1.1 * rng.uniform(0);
    let azimuth = std::f64::consts::TAU * rng.uniform(1);
    let sun = Vec3::new(
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
        -elevation.cos() * azimuth.cos(),
    );
    let sun_strength = 20.0 + 40.0 * rng.uniform(2);
    let warmth = rng.uniform(3);
    let sun_color: Rgb = [
        1.0,
        0.85 + 0.15 * (1.0 - warmth),
        0.6 + 0.4 * (1.0 - warmth),
    ];
    let sky_tint: Rgb = [0.35 + 0.2 * rng.uniform(4), 0.5 + 0.2 * rng.uniform(5), 0.9];
    let ground: Rgb = [0.25, 0.2, 0.15];
    // cosine-power lobe, roughly 10 degrees wide
    let sharpness = 60.0;
    EnvironmentMap::from_fn(height, |d| {
        let up = d.y;
        let base: Rgb = if up >= 0.0 {
            let t = up.sqrt();
            core::array::from_fn(|c| sky_tint[c] * (0.6 + 0.8 * t))
        } else {
            core::array::from_fn(|c| ground[c] * (1.0 + up))
        };
        let lobe = (sharpness * (d.dot(sun) - 1.0)).exp();
        core::array::from_fn(|c| base[c] + sun_strength * sun_color[c] * lobe)
    })
}

/// `builtin:sky:<variant>`; the height comes from the run config.
pub fn env(reference: &str, height: usize) -> Result<EnvironmentMap> {
    let rest = reference
        .strip_prefix(PREFIX)
        .ok_or_else(|| CliError::Config(format!("{reference:?} is not a builtin reference")))?;
    let mut parts = rest.split(':');
    match (parts.next(), parts.next(), parts.next()) {
        (Some("sky"), Some(v), None) => {
            let variant = v
                .parse()
                .map_err(|_| CliError::Config(format!("bad sky variant in {reference:?}")))?;
            Ok(sky(variant, height))
        }
        _ => Err(CliError::Config(format!(
            "unknown builtin environment {reference:?}; expected builtin:sky:<n>"
        ))),
    }
}

/// `builtin:sphere:<size>` or `builtin:plane:<width>x<height>`.
pub fn normals(reference: &str) -> Result<NormalMap> {
    let rest = reference
        .strip_prefix(PREFIX)
        .ok_or_else(|| CliError::Config(format!("{reference:?} is not a builtin reference")))?;
    let bad = || CliError::Config(format!("unknown builtin normal map {reference:?}"));
    let mut parts = rest.split(':');
    let shape = parts.next().ok_or_else(bad)?;
    let size = parts.next().ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    let dim = |s: &str| -> Result<usize> {
        match s.parse::<usize>() {
            Ok(n) if (2..=4096).contains(&n) => Ok(n),
            _ => Err(bad()),
        }
    };
    match shape {
        "sphere" => Ok(NormalMap::sphere(dim(size)?)),
        "plane" => {
            let (w, h) = size.split_once('x').ok_or_else(bad)?;
            Ok(NormalMap::plane(dim(w)?, dim(h)?))
        }
        _ => Err(bad()),
    }
}
