//! CSV outputs. Every table has a one-line header; floats use Rust's
//! shortest round-trip formatting, so equal values always print equally.

use std::path::Path;

use refmap_core::brdf::ReflectanceParams;
use refmap_core::diffusion::{SamplingResult, Schedule};
use refmap_core::metrics::{GaussianScore, ScoreReport};
use refmap_core::sh::{self, BandSpectrum, ShCoefficients};

use crate::error::{CliError, Result};
use crate::formats;

/// Stand-in for the learned perceptual metric, which needs network weights.
pub const LPIPS_UNAVAILABLE: &str = "unavailable";

pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }

    pub fn write(self, path: &Path) -> Result<()> {
        formats::write_bytes(path, &self.into_bytes())
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn sh_table(coeffs: &ShCoefficients) -> Table {
    let mut t = Table::new(&["l", "m", "c_R", "c_G", "c_B"]);
    for l in 0..=coeffs.degree {
        for m in -(l as i64)..=l as i64 {
            let c = coeffs.get(l, m);
            t.row([
                l.to_string(),
                m.to_string(),
                num(c[0]),
                num(c[1]),
                num(c[2]),
            ]);
        }
    }
    t
}

/// Inverse of [`sh_table`]; the degree is inferred from the largest `l`.
pub fn read_sh(path: &Path) -> Result<ShCoefficients> {
    let bytes = formats::read_bytes(path)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let bad = |m: String| CliError::format(path, m);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 5 {
            return Err(bad(format!("expected 5 columns, got {}", rec.len())));
        }
        let l: usize = rec[0]
            .parse()
            .map_err(|_| bad(format!("bad l {:?}", &rec[0])))?;
        let m: i64 = rec[1]
            .parse()
            .map_err(|_| bad(format!("bad m {:?}", &rec[1])))?;
        if m.unsigned_abs() as usize > l {
            return Err(bad(format!("|m| > l at l={l}, m={m}")));
        }
        let mut c = [0.0; 3];
        for (i, v) in c.iter_mut().enumerate() {
            *v = rec[2 + i]
                .parse()
                .map_err(|_| bad(format!("bad value {:?}", &rec[2 + i])))?;
        }
        rows.push((l, m, c));
    }
    let degree = rows
        .iter()
        .map(|r| r.0)
        .max()
        .ok_or_else(|| bad("no coefficients".into()))?;
    let mut out = ShCoefficients::zeros(degree);
    let mut seen = vec![false; sh::coeff_count(degree)];
    for (l, m, c) in rows {
        let i = sh::index(l, m);
        if std::mem::replace(&mut seen[i], true) {
            return Err(bad(format!("duplicate coefficient l={l}, m={m}")));
        }
        out.set(l, m, c);
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(bad(format!("missing coefficient {i} of degree {degree}")));
    }
    Ok(out)
}

pub fn spectrum_rows(t: &mut Table, input: &str, spectrum: &BandSpectrum) {
    for (l, p) in spectrum.power.iter().enumerate() {
        t.row([input.to_string(), l.to_string(), num(*p)]);
    }
}

/// One row per sample plus an `AGGREGATE` row holding the top-k means.
pub fn scores_table(
    si_log_rmse: &ScoreReport,
    si_rmse: &ScoreReport,
    psnr: &ScoreReport,
    ssim: &ScoreReport,
    ids: &[String],
) -> Table {
    let mut t = Table::new(&[
        "sample_id",
        "si_log_rmse",
        "si_rmse",
        "psnr",
        "ssim",
        "lpips",
    ]);
    for (i, id) in ids.iter().enumerate() {
        t.row([
            id.clone(),
            num(si_log_rmse.values[i]),
            num(si_rmse.values[i]),
            num(psnr.values[i]),
            num(ssim.values[i]),
            LPIPS_UNAVAILABLE.to_string(),
        ]);
    }
    t.row([
        "AGGREGATE".to_string(),
        opt(si_log_rmse.aggregate),
        opt(si_rmse.aggregate),
        opt(psnr.aggregate),
        opt(ssim.aggregate),
        LPIPS_UNAVAILABLE.to_string(),
    ]);
    t
}

pub fn samples_table(result: &SamplingResult) -> Table {
    let mut t = Table::new(&["sample_id", "chain", "nll", "initial_nll", "restarts"]);
    for (i, s) in result.samples.iter().enumerate() {
        t.row([
            i.to_string(),
            s.chain.to_string(),
            num(s.nll),
            num(result.initial_nll[i]),
            s.restarts.to_string(),
        ]);
    }
    t
}

pub fn gaussian_table(score: &GaussianScore, samples: usize, retained: usize) -> Table {
    let mut t = Table::new(&[
        "samples",
        "retained_dims",
        "log_likelihood",
        "mahalanobis",
        "residual_norm",
    ]);
    t.row([
        samples.to_string(),
        retained.to_string(),
        num(score.log_likelihood),
        num(score.mahalanobis),
        num(score.residual_norm),
    ]);
    t
}

pub fn psi_table(psis: &[ReflectanceParams]) -> Table {
    let mut t = Table::new(&["object", "metallic", "roughness", "specular"]);
    for (m, p) in psis.iter().enumerate() {
        t.row([
            m.to_string(),
            num(p.metallic),
            num(p.roughness),
            num(p.specular),
        ]);
    }
    t
}

pub fn schedule_table(schedule: &Schedule) -> Table {
    let mut t = Table::new(&["object", "k", "metallic", "roughness", "specular"]);
    for (m, row) in schedule.table().iter().enumerate() {
        for (k, p) in row.iter().enumerate() {
            t.row([
                m.to_string(),
                k.to_string(),
                num(p.metallic),
                num(p.roughness),
                num(p.specular),
            ]);
        }
    }
    t
}
