//! Degradation operators: pixel masks and block Gaussian compressive
//! sensing, their adjoints, and the PSNR metric.
//!
//! All randomness comes from `Xoshiro256PlusPlus::seed_from_u64(seed)`.
//! Masks kill the first `k` indices of a partial Fisher-Yates shuffle of
//! `0..h*w`. Sensing matrices are filled row-major with standard normals
//! (ziggurat, `rand_distr::StandardNormal`) scaled by `1/sqrt(M)`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::types::{ensure_same_dims, GrayImage, PixelMask};

/// Kept pixels are copied, killed pixels become 0. The operator is its own
/// adjoint.
pub fn apply_mask(img: &GrayImage, mask: &PixelMask) -> Result<GrayImage> {
    ensure_same_dims(img.dims(), mask.dims())?;
    let data = img
        .data()
        .iter()
        .zip(mask.kept())
        .map(|(&v, &k)| if k { v } else { 0.0 })
        .collect();
    GrayImage::new(img.height(), img.width(), data)
}

/// Kills exactly `round(missing_fraction * h * w)` pixels chosen uniformly
/// without replacement.
pub fn random_mask(height: usize, width: usize, missing_fraction: f64, seed: u64) -> Result<PixelMask> {
    if !(0.0..1.0).contains(&missing_fraction) {
        return Err(Error::InvalidParameter(format!(
            "missing fraction must lie in [0, 1), got {missing_fraction}"
        )));
    }
    let n = height * width;
    let killed = (missing_fraction * n as f64).round() as usize;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..killed {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut kept = vec![true; n];
    for &i in &idx[..killed] {
        kept[i] = false;
    }
    PixelMask::new(height, width, kept)
}

/// Block compressive sensing: one `M x block^2` Gaussian matrix applied to
/// every (zero-padded) `block x block` tile, tiles vectorised row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCsOp {
    pub block: usize,
    pub rows: usize,
    pub seed: u64,
    pub matrix: DMatrix<f64>,
}

impl BlockCsOp {
    pub const DEFAULT_BLOCK: usize = 32;

    pub fn new(ratio: f64, seed: u64) -> Result<Self> {
        Self::with_block(Self::DEFAULT_BLOCK, ratio, seed)
    }

    pub fn with_block(block: usize, ratio: f64, seed: u64) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling ratio must lie in (0, 1], got {ratio}"
            )));
        }
        let rows = ((ratio * (block * block) as f64).round() as usize).max(1);
        Self::from_rows(block, rows, seed)
    }

    /// Regenerates the operator from the parameters stored in a measurement
    /// file.
    pub fn from_rows(block: usize, rows: usize, seed: u64) -> Result<Self> {
        let n = block * block;
        if block == 0 || rows == 0 || rows > n {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= rows <= block^2, got rows={rows}, block={block}"
            )));
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let scale = 1.0 / (rows as f64).sqrt();
        let entries: Vec<f64> = (0..rows * n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Ok(Self {
            block,
            rows,
            seed,
            matrix: DMatrix::from_row_slice(rows, n, &entries),
        })
    }

    pub fn ratio(&self) -> f64 {
        self.rows as f64 / (self.block * self.block) as f64
    }

    pub fn block_grid(&self, height: usize, width: usize) -> (usize, usize) {
        (height.div_ceil(self.block), width.div_ceil(self.block))
    }
}

/// Per-block measurement vectors in block scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub height: usize,
    pub width: usize,
    pub block: usize,
    pub rows: usize,
    pub seed: u64,
    pub blocks: Vec<DVector<f64>>,
}

impl Measurements {
    const MAGIC: &'static [u8; 4] = b"GSCM";
    const VERSION: u16 = 1;

    /// Little-endian: magic `GSCM`, version u16, h u32, w u32, block u16,
    /// M u16, seed u64, then each block's M f64 values in scan order.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(Self::MAGIC)?;
        out.write_all(&Self::VERSION.to_le_bytes())?;
        out.write_all(&(self.height as u32).to_le_bytes())?;
        out.write_all(&(self.width as u32).to_le_bytes())?;
        out.write_all(&(self.block as u16).to_le_bytes())?;
        out.write_all(&(self.rows as u16).to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        for b in &self.blocks {
            for v in b.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> std::result::Result<Self, String> {
        fn take<const N: usize>(r: &mut impl Read) -> std::result::Result<[u8; N], String> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf).map_err(|e| format!("truncated header: {e}"))?;
            Ok(buf)
        }
        let magic = take::<4>(&mut input)?;
        if &magic != Self::MAGIC {
            return Err("bad magic, expected GSCM".into());
        }
        let version = u16::from_le_bytes(take::<2>(&mut input)?);
        if version != Self::VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let height = u32::from_le_bytes(take::<4>(&mut input)?) as usize;
        let width = u32::from_le_bytes(take::<4>(&mut input)?) as usize;
        let block = u16::from_le_bytes(take::<2>(&mut input)?) as usize;
        let rows = u16::from_le_bytes(take::<2>(&mut input)?) as usize;
        let seed = u64::from_le_bytes(take::<8>(&mut input)?);
        if block == 0 || rows == 0 {
            return Err("block and row counts must be positive".into());
        }
        let count = height.div_ceil(block) * width.div_ceil(block);
        let mut payload = Vec::new();
        input
            .read_to_end(&mut payload)
            .map_err(|e| format!("read failed: {e}"))?;
        if payload.len() != count * rows * 8 {
            return Err(format!(
                "payload holds {} bytes, expected {} blocks x {} rows x 8",
                payload.len(),
                count,
                rows
            ));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let blocks = values
            .chunks_exact(rows)
            .map(DVector::from_column_slice)
            .collect();
        Ok(Self {
            height,
            width,
            block,
            rows,
            seed,
            blocks,
        })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

fn block_vector(img: &GrayImage, br: usize, bc: usize, block: usize) -> DVector<f64> {
    let mut v = DVector::zeros(block * block);
    let r0 = br * block;
    let c0 = bc * block;
    let rmax = (r0 + block).min(img.height());
    let cmax = (c0 + block).min(img.width());
    for r in r0..rmax {
        for c in c0..cmax {
            v[(r - r0) * block + (c - c0)] = img.get(r, c);
        }
    }
    v
}

/// `y_b = Phi vec(b)` for every block `b`.
pub fn cs_measure(img: &GrayImage, op: &BlockCsOp) -> Measurements {
    let (gr, gc) = op.block_grid(img.height(), img.width());
    let mut blocks = Vec::with_capacity(gr * gc);
    for br in 0..gr {
        for bc in 0..gc {
            blocks.push(&op.matrix * block_vector(img, br, bc, op.block));
        }
    }
    Measurements {
        height: img.height(),
        width: img.width(),
        block: op.block,
        rows: op.rows,
        seed: op.seed,
        blocks,
    }
}

/// Assembles `Phi^T y_b` per block, cropping the zero padding.
pub fn cs_adjoint(meas: &Measurements, op: &BlockCsOp) -> Result<GrayImage> {
    if meas.block != op.block || meas.rows != op.rows {
        return Err(Error::Shape(format!(
            "measurements use block {} / {} rows, operator block {} / {} rows",
            meas.block, meas.rows, op.block, op.rows
        )));
    }
    let (gr, gc) = op.block_grid(meas.height, meas.width);
    if meas.blocks.len() != gr * gc {
        return Err(Error::Shape(format!(
            "{} measurement blocks, expected {}",
            meas.blocks.len(),
            gr * gc
        )));
    }
    let mut data = vec![0.0; meas.height * meas.width];
    let mt = op.matrix.transpose();
    for br in 0..gr {
        for bc in 0..gc {
            let y = &meas.blocks[br * gc + bc];
            if y.len() != op.rows {
                return Err(Error::Shape(format!("block vector has {} rows", y.len())));
            }
            let x = &mt * y;
            let r0 = br * op.block;
            let c0 = bc * op.block;
            for r in r0..(r0 + op.block).min(meas.height) {
                for c in c0..(c0 + op.block).min(meas.width) {
                    data[r * meas.width + c] = x[(r - r0) * op.block + (c - c0)];
                }
            }
        }
    }
    GrayImage::new(meas.height, meas.width, data)
}

/// `H^T H x`.
pub fn cs_normal(img: &GrayImage, op: &BlockCsOp) -> Result<GrayImage> {
    cs_adjoint(&cs_measure(img, op), op)
}

/// Inner product of two measurement sets with identical layout.
pub fn measurement_dot(a: &Measurements, b: &Measurements) -> f64 {
    a.blocks.iter().zip(&b.blocks).map(|(x, y)| x.dot(y)).sum()
}

/// `10 log10(255^2 / MSE)`; `+inf` when the images are identical.
pub fn psnr(x: &GrayImage, reference: &GrayImage) -> Result<f64> {
    let sq = x.squared_distance(reference)?;
    if sq == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sq / x.len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(h: usize, w: usize) -> PixelMask {
        PixelMask::new(h, w, (0..h * w).map(|i| (i / w + i % w) % 2 == 0).collect()).unwrap()
    }

    #[test]
    fn mask_examples() {
        let img = GrayImage::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        assert_eq!(apply_mask(&img, &PixelMask::all_kept(3, 4)).unwrap(), img);
        let none = PixelMask::new(3, 4, vec![false; 12]).unwrap();
        assert_eq!(apply_mask(&img, &none).unwrap(), GrayImage::zeros(3, 4));
        let out = apply_mask(&GrayImage::filled(2, 2, 100.0), &checker(2, 2)).unwrap();
        assert_eq!(out.data(), &[100.0, 0.0, 0.0, 100.0]);
        assert!(apply_mask(&img, &PixelMask::all_kept(4, 3)).is_err());
    }

    #[test]
    fn mask_idempotent() {
        let img = GrayImage::from_fn(5, 5, |r, c| (r * 7 + c * 3) as f64);
        let m = random_mask(5, 5, 0.4, 9).unwrap();
        let once = apply_mask(&img, &m).unwrap();
        assert_eq!(apply_mask(&once, &m).unwrap(), once);
    }

    #[test]
    fn random_mask_counts_and_determinism() {
        assert_eq!(random_mask(10, 10, 0.0, 1).unwrap().kept_count(), 100);
        let m = random_mask(100, 100, 0.8, 7).unwrap();
        assert_eq!(m.kept().iter().filter(|k| !**k).count(), 8000);
        assert_eq!(m, random_mask(100, 100, 0.8, 7).unwrap());
        assert_ne!(m, random_mask(100, 100, 0.8, 8).unwrap());
        assert!(random_mask(4, 4, 1.0, 0).is_err());
    }

    #[test]
    fn block_op_rows() {
        let op = BlockCsOp::new(0.2, 1).unwrap();
        assert_eq!(op.rows, 205);
        assert_eq!(op.matrix.shape(), (205, 1024));
        assert!(BlockCsOp::new(0.0, 1).is_err());
        assert!(BlockCsOp::new(1.5, 1).is_err());
        assert_eq!(BlockCsOp::with_block(4, 0.01, 1).unwrap().rows, 1);
    }

    #[test]
    fn block_op_reproducible() {
        let a = BlockCsOp::with_block(8, 0.3, 42).unwrap();
        let b = BlockCsOp::from_rows(8, a.rows, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_image_zero_measurements() {
        let op = BlockCsOp::with_block(8, 0.25, 3).unwrap();
        let meas = cs_measure(&GrayImage::zeros(20, 13), &op);
        assert_eq!(meas.block_count(), 3 * 2);
        assert!(meas.blocks.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn adjoint_rejects_foreign_measurements() {
        let op = BlockCsOp::with_block(8, 0.25, 3).unwrap();
        let other = BlockCsOp::with_block(8, 0.5, 3).unwrap();
        let meas = cs_measure(&GrayImage::zeros(8, 8), &op);
        assert!(cs_adjoint(&meas, &other).is_err());
    }

    #[test]
    fn measurement_file_round_trip() {
        let op = BlockCsOp::with_block(8, 0.25, 5).unwrap();
        let img = GrayImage::from_fn(10, 17, |r, c| (r * c) as f64);
        let meas = cs_measure(&img, &op);
        let mut buf = Vec::new();
        meas.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GSCM");
        assert_eq!(buf.len(), 4 + 2 + 4 + 4 + 2 + 2 + 8 + 6 * 16 * 8);
        assert_eq!(Measurements::read_from(&buf[..]).unwrap(), meas);
        assert!(Measurements::read_from(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Measurements::read_from(&bad[..]).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = GrayImage::filled(4, 4, 100.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = GrayImage::filled(4, 4, 116.0);
        let expected = 20.0 * (255.0f64 / 16.0).log10();
        assert!((psnr(&b, &a).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 24.05).abs() < 0.005);
        assert!(psnr(&a, &GrayImage::zeros(2, 2)).is_err());
    }
}
