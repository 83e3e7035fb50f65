//! Per-group sparsity comparison: singular values of a group on the degraded
//! image after shrinkage with each norm, next to the singular values of the
//! co-located clean group.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::dictionary::{learn_adaptive, singular_values};
use crate::error::{Error, Result};
use crate::grouping::{gather_group, match_patches, reference_origins, GroupingConfig};
use crate::prox::shrink_code_with;
use crate::restoration::{lambdas_for, LambdaMode};
use crate::types::{ensure_same_dims, GrayImage, ShrinkageSpec};

/// One norm's shrinkage rule with its threshold schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shrinker {
    pub spec: ShrinkageSpec,
    pub lambda: LambdaMode,
    pub rho: f64,
    pub eps_var: f64,
}

/// The four shrinkers compared: NNM, WNNM, SNM and WSNM.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub grouping: GroupingConfig,
    pub sigma: f64,
    pub nnm: Shrinker,
    pub wnnm: Shrinker,
    pub snm: Shrinker,
    pub wsnm: Shrinker,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisRow {
    pub index: usize,
    pub truth: f64,
    pub nnm: f64,
    pub wnnm: f64,
    pub snm: f64,
    pub wsnm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisTable {
    pub reference: (usize, usize),
    /// Singular values of the degraded group before shrinkage.
    pub observed: Vec<f64>,
    pub rows: Vec<AnalysisRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Nnm,
    Wnnm,
    Snm,
    Wsnm,
}

impl AnalysisTable {
    pub fn column(&self, col: Column) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match col {
                Column::Nnm => r.nnm,
                Column::Wnnm => r.wnnm,
                Column::Snm => r.snm,
                Column::Wsnm => r.wsnm,
            })
            .collect()
    }

    pub fn truth(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.truth).collect()
    }

    /// Euclidean distance between a shrunk curve and the truth curve.
    pub fn distance_to_truth(&self, col: Column) -> f64 {
        self.column(col)
            .iter()
            .zip(self.truth())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// `S / N` for a full layout of an image of this size.
fn entries_per_pixel(height: usize, width: usize, cfg: &GroupingConfig) -> f64 {
    let refs = reference_origins(height, cfg.patch_size, cfg.stride).len()
        * reference_origins(width, cfg.patch_size, cfg.stride).len();
    (refs * cfg.match_count * cfg.patch_dim()) as f64 / (height * width) as f64
}

/// Builds the group at `reference` on `degraded`, shrinks its singular
/// values with each norm and pairs them with the singular values of the
/// clean patches at the same coordinates.
pub fn analyze_group(clean: &GrayImage, degraded: &GrayImage, reference: (usize, usize), cfg: &AnalysisConfig) -> Result<AnalysisTable> {
    ensure_same_dims(clean.dims(), degraded.dims())?;
    let ps = cfg.grouping.patch_size;
    if reference.0 + ps > degraded.height() || reference.1 + ps > degraded.width() {
        return Err(Error::OutOfBounds {
            row: reference.0,
            col: reference.1,
        });
    }
    let matches = match_patches(degraded, &cfg.grouping, reference)?;
    let coords: Vec<_> = matches.iter().map(|m| m.origin).collect();
    let group = gather_group(degraded, ps, &coords)?;
    let truth = singular_values(&gather_group(clean, ps, &coords)?.data)?;
    let (_, code) = learn_adaptive(&group)?;
    let per_pixel = entries_per_pixel(degraded.height(), degraded.width(), &cfg.grouping);

    let shrink = |s: &Shrinker| -> Result<Vec<f64>> {
        let taus: Vec<f64> = lambdas_for(s.lambda, &code.coeffs, coords.len(), cfg.sigma, s.eps_var)
            .into_iter()
            .map(|l| l * per_pixel / s.rho)
            .collect();
        Ok(shrink_code_with(&code, &s.spec, &taus)?.values)
    };
    let nnm = shrink(&cfg.nnm)?;
    let wnnm = shrink(&cfg.wnnm)?;
    let snm = shrink(&cfg.snm)?;
    let wsnm = shrink(&cfg.wsnm)?;
    let rows = (0..code.len())
        .map(|j| AnalysisRow {
            index: j + 1,
            truth: truth[j],
            nnm: nnm[j],
            wnnm: wnnm[j],
            snm: snm[j],
            wsnm: wsnm[j],
        })
        .collect();
    Ok(AnalysisTable {
        reference,
        observed: code.coeffs,
        rows,
    })
}

pub const CSV_HEADER: &str = "index,truth,nnm,wnnm,snm,wsnm";

/// Writes the table as CSV; reals use 17 significant digits so the file
/// round-trips losslessly.
pub fn write_analysis_csv(table: &AnalysisTable, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in &table.rows {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.index, r.truth, r.nnm, r.wnnm, r.snm, r.wsnm
        )?;
    }
    Ok(())
}

pub fn emit_analysis_csv(table: &AnalysisTable, path: &Path) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::InvalidParameter("analysis table is empty".into()));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_analysis_csv(table, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses rows written by [`write_analysis_csv`].
pub fn read_analysis_csv(input: impl BufRead) -> std::result::Result<Vec<AnalysisRow>, String> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or("empty file")?
        .map_err(|e| e.to_string())?;
    if header.trim() != CSV_HEADER {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(format!("expected 6 fields, got {}", f.len()));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        rows.push(AnalysisRow {
            index: f[0].trim().parse().map_err(|e| format!("{}: {e}", f[0]))?,
            truth: num(f[1])?,
            nnm: num(f[2])?,
            wnnm: num(f[3])?,
            snm: num(f[4])?,
            wsnm: num(f[5])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shrinker(p: f64, weighted: bool, lambda: LambdaMode) -> Shrinker {
        Shrinker {
            spec: ShrinkageSpec::new(p, weighted, 1.0, 0.35, 2).unwrap(),
            lambda,
            rho: 1.0,
            eps_var: 0.3,
        }
    }

    fn cfg_with(lambda: LambdaMode) -> AnalysisConfig {
        AnalysisConfig {
            grouping: GroupingConfig::new(4, 6, 9).unwrap(),
            sigma: std::f64::consts::SQRT_2,
            nnm: shrinker(1.0, false, lambda),
            wnnm: shrinker(1.0, true, lambda),
            snm: shrinker(0.5, false, lambda),
            wsnm: shrinker(0.5, true, lambda),
        }
    }

    fn img() -> GrayImage {
        GrayImage::from_fn(24, 24, |r, c| ((r * 13 + c * 7) % 50) as f64 + (r as f64 / 2.0).sin() * 20.0)
    }

    #[test]
    fn identity_when_clean_equals_degraded_and_tau_zero() {
        let x = img();
        let t = analyze_group(&x, &x, (8, 8), &cfg_with(LambdaMode::Fixed(0.0))).unwrap();
        for r in &t.rows {
            for v in [r.nnm, r.wnnm, r.snm, r.wsnm] {
                assert!((v - r.truth).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_degraded_group_shrinks_to_zero() {
        let t = analyze_group(&img(), &GrayImage::zeros(24, 24), (0, 0), &cfg_with(LambdaMode::Adaptive(crate::restoration::Spread::CodeVariance))).unwrap();
        for r in &t.rows {
            assert_eq!([r.nnm, r.wnnm, r.snm, r.wsnm], [0.0; 4]);
        }
    }

    #[test]
    fn out_of_bounds_reference() {
        let x = img();
        assert!(matches!(
            analyze_group(&x, &x, (21, 0), &cfg_with(LambdaMode::Adaptive(crate::restoration::Spread::CodeVariance))),
            Err(Error::OutOfBounds { row: 21, col: 0 })
        ));
    }

    #[test]
    fn curves_are_shrunk_sorted_nonnegative() {
        let x = img();
        let noisy = GrayImage::from_fn(24, 24, |r, c| x.get(r, c) + ((r * 31 + c * 17) % 11) as f64 - 5.0);
        let t = analyze_group(&x, &noisy, (4, 12), &cfg_with(LambdaMode::Fixed(0.5))).unwrap();
        for col in [Column::Nnm, Column::Wnnm, Column::Snm, Column::Wsnm] {
            let c = t.column(col);
            assert!(c.iter().zip(&t.observed).all(|(a, o)| *a >= 0.0 && a <= o));
            assert!(c.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn csv_format_and_round_trip() {
        let x = img();
        let t = analyze_group(&x, &x.map(|v| v * 0.9), (0, 0), &cfg_with(LambdaMode::Fixed(0.1))).unwrap();
        let mut buf = Vec::new();
        write_analysis_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), t.rows.len() + 1);
        assert_eq!(read_analysis_csv(&buf[..]).unwrap(), t.rows);

        let one = AnalysisTable {
            reference: (0, 0),
            observed: vec![1.0],
            rows: vec![AnalysisRow {
                index: 1,
                truth: 0.1,
                nnm: 1.0 / 3.0,
                wnnm: 0.0,
                snm: 2.0,
                wsnm: 1e-300,
            }],
        };
        let mut buf = Vec::new();
        write_analysis_csv(&one, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(read_analysis_csv(&buf[..]).unwrap(), one.rows);
    }
}
