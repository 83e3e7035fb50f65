//! PSNR benchmark grid: images x norms for one scenario, with oracle
//! stopping, reported as Markdown or CSV.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::io::read_image;
use crate::operators::{apply_mask, cs_measure, psnr, random_mask, BlockCsOp, Measurements};
use crate::presets::{Norm, Preset, Scenario};
use crate::restoration::{restore, Observation, Restoration, RestoreConfig, StopRule};
use crate::types::{GrayImage, PixelMask};

/// A synthesised observation of a clean image.
#[derive(Debug, Clone)]
pub enum Degraded {
    Mask { y: GrayImage, mask: PixelMask },
    Cs { meas: Measurements, op: BlockCsOp },
}

impl Degraded {
    pub fn observation(&self) -> Observation<'_> {
        match self {
            Degraded::Mask { y, mask } => Observation::Mask { y, mask },
            Degraded::Cs { meas, op } => Observation::Cs { meas, op },
        }
    }
}

/// Noiseless degradation for a scenario, seeded.
pub fn degrade(clean: &GrayImage, scenario: Scenario, seed: u64) -> Result<Degraded> {
    match scenario {
        Scenario::Inpaint { missing } => {
            let mask = random_mask(clean.height(), clean.width(), missing, seed)?;
            Ok(Degraded::Mask {
                y: apply_mask(clean, &mask)?,
                mask,
            })
        }
        Scenario::Cs { ratio } => {
            let op = BlockCsOp::new(ratio, seed)?;
            Ok(Degraded::Cs {
                meas: cs_measure(clean, &op),
                op,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub image: String,
    pub norm: Norm,
    pub psnr: f64,
    /// Iteration whose estimate was kept.
    pub iters: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub preset: String,
    pub seed: u64,
    pub norms: Vec<Norm>,
    pub images: Vec<String>,
    pub cells: Vec<BenchCell>,
}

impl BenchReport {
    pub fn cell(&self, image: &str, norm: Norm) -> Option<&BenchCell> {
        self.cells.iter().find(|c| c.image == image && c.norm == norm)
    }

    pub fn average(&self, norm: Norm) -> f64 {
        let v: Vec<f64> = self.cells.iter().filter(|c| c.norm == norm).map(|c| c.psnr).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Rows are images plus `Average`, columns are norms.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "PSNR (dB), preset `{}`, seed {}\n", self.preset, self.seed);
        let _ = write!(s, "| Image |");
        for n in &self.norms {
            let _ = write!(s, " {n} |");
        }
        let _ = write!(s, "\n|---|");
        for _ in &self.norms {
            let _ = write!(s, "---|");
        }
        s.push('\n');
        for img in &self.images {
            let _ = write!(s, "| {img} |");
            for &n in &self.norms {
                match self.cell(img, n) {
                    Some(c) => {
                        let _ = write!(s, " {:.2} |", c.psnr);
                    }
                    None => s.push_str(" - |"),
                }
            }
            s.push('\n');
        }
        let _ = write!(s, "| Average |");
        for &n in &self.norms {
            let _ = write!(s, " {:.2} |", self.average(n));
        }
        s.push('\n');
        s
    }

    /// One line per cell: `image,norm,psnr,iters,seconds`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,norm,psnr,iters,seconds\n");
        for c in &self.cells {
            let _ = writeln!(s, "{},{},{},{},{}", c.image, c.norm, c.psnr, c.iters, c.seconds);
        }
        s
    }
}

/// Restores one degraded image with the preset's parameters for `norm`.
pub fn run_cell(clean: &GrayImage, degraded: &Degraded, preset: &Preset, norm: Norm, stop: StopRule, max_iters: usize) -> Result<(Restoration, f64)> {
    let cfg = RestoreConfig {
        stop,
        max_iters,
        ..preset.config(norm)
    };
    let start = Instant::now();
    let out = restore(degraded.observation(), &cfg, Some(clean))?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// Runs every `(image, norm)` cell with oracle stopping.
pub fn run_bench(images: &[(String, GrayImage)], preset: &Preset, norms: &[Norm], seed: u64, max_iters: usize) -> Result<BenchReport> {
    if images.is_empty() {
        return Err(Error::InvalidParameter("no benchmark images".into()));
    }
    let mut cells = Vec::new();
    for (name, clean) in images {
        let degraded = degrade(clean, preset.scenario, seed)?;
        for &norm in norms {
            let (out, seconds) = run_cell(clean, &degraded, preset, norm, StopRule::Oracle, max_iters)?;
            cells.push(BenchCell {
                image: name.clone(),
                norm,
                psnr: psnr(&out.image.clamped(), clean)?,
                iters: out.best_iter,
                seconds,
            });
        }
    }
    Ok(BenchReport {
        preset: preset.name.to_string(),
        seed,
        norms: norms.to_vec(),
        images: images.iter().map(|(n, _)| n.clone()).collect(),
        cells,
    })
}

/// Loads every `.png`/`.pgm` in `dir`, sorted by file name; names are file
/// stems.
pub fn load_image_dir(dir: &Path) -> Result<Vec<(String, GrayImage)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no .png or .pgm images in {}",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image")
                .to_string();
            read_image(&p).map(|img| (name, img))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markdown_schema() {
        let report = BenchReport {
            preset: "miss80".into(),
            seed: 1,
            norms: Norm::ALL.to_vec(),
            images: vec!["a".into()],
            cells: Norm::ALL
                .iter()
                .enumerate()
                .map(|(i, &n)| BenchCell {
                    image: "a".into(),
                    norm: n,
                    psnr: 20.0 + i as f64,
                    iters: 3,
                    seconds: 0.1,
                })
                .collect(),
        };
        let md = report.to_markdown();
        assert!(md.contains("| Image | l1 | lp | wl1 | wlp |"));
        assert!(md.contains("| a | 20.00 | 21.00 | 22.00 | 23.00 |"));
        assert!(md.contains("| Average | 20.00 | 21.00 | 22.00 | 23.00 |"));
        assert_eq!(report.to_csv().lines().count(), 5);
    }

    #[test]
    fn empty_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_image_dir(dir.path()).is_err());
        assert!(run_bench(&[], &crate::presets::PRESETS[0], &Norm::ALL, 1, 1).is_err());
    }
}
