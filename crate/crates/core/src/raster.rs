//! Multi-band raster container and the CARB1 file format.
//!
//! A CARB1 file is a little-endian fixed layout:
//!
//! ```text
//! "CARB1\0"            6 bytes magic
//! width                u32
//! height               u32
//! cell_size            f64
//! origin_x, origin_y   f64, f64
//! band_count           u32
//! per band:
//!   name_len           u16
//!   name               UTF-8 bytes
//!   values             height * width f64, row-major, top row first
//! ```
//!
//! NaN is the only nodata marker.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"CARB1\0";

/// Size in bytes of the fixed part of the header, before any band records.
pub const FIXED_HEADER_LEN: usize = 6 + 4 + 4 + 8 + 8 + 8 + 4;

/// Row-major 2-D grid of 64-bit floats.
#[derive(Debug, Clone)]
pub struct Grid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width.checked_mul(height) != Some(values.len()) {
            return Err(Error::Validation(format!(
                "grid {width}x{height} needs {} values, got {}",
                width.saturating_mul(height),
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                values.push(f(row, col));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.width..(row + 1) * self.width]
    }

    /// Bitwise equality, so that NaN cells compare equal to NaN cells.
    pub fn bit_eq(&self, other: &Grid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Band {
    pub name: String,
    pub grid: Grid,
}

/// Georeferenced multi-band raster. Immutable once built.
#[derive(Debug, Clone)]
pub struct Raster {
    width: usize,
    height: usize,
    cell_size: f64,
    origin: (f64, f64),
    bands: Vec<Band>,
}

impl Raster {
    pub fn new(cell_size: f64, origin: (f64, f64), bands: Vec<Band>) -> Result<Self> {
        let first = bands
            .first()
            .ok_or_else(|| Error::Validation("raster has zero bands".into()))?;
        let (width, height) = (first.grid.width, first.grid.height);
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "raster dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::Validation(format!(
                "cell_size must be strictly positive, got {cell_size}"
            )));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::Validation("origin must be finite".into()));
        }
        for (i, band) in bands.iter().enumerate() {
            if band.grid.width != width || band.grid.height != height {
                return Err(Error::Validation(format!(
                    "band `{}` is {}x{}, expected {width}x{height}",
                    band.name, band.grid.width, band.grid.height
                )));
            }
            if band.name.len() > u16::MAX as usize {
                return Err(Error::Validation(format!("band {i} name is too long")));
            }
            if bands[..i].iter().any(|b| b.name == band.name) {
                return Err(Error::Validation(format!(
                    "duplicate band name `{}`",
                    band.name
                )));
            }
            if band.grid.values.iter().any(|v| v.is_infinite()) {
                return Err(Error::Validation(format!(
                    "band `{}` contains infinite values",
                    band.name
                )));
            }
        }
        Ok(Self {
            width,
            height,
            cell_size,
            origin,
            bands,
        })
    }

    /// Convenience constructor with unit cell size and zero origin.
    pub fn from_bands<S: Into<String>>(bands: impl IntoIterator<Item = (S, Grid)>) -> Result<Self> {
        let bands = bands
            .into_iter()
            .map(|(name, grid)| Band {
                name: name.into(),
                grid,
            })
            .collect();
        Self::new(1.0, (0.0, 0.0), bands)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn band(&self, name: &str) -> Result<&Grid> {
        self.bands
            .iter()
            .find(|b| b.name == name)
            .map(|b| &b.grid)
            .ok_or_else(|| Error::UnknownBand(name.to_string()))
    }

    pub fn is_nodata(&self, band: &str, row: usize, col: usize) -> Result<bool> {
        Ok(self.band(band)?.get(row, col).is_nan())
    }

    /// Sub-raster holding rows `start..end`. The origin moves down by
    /// `start` cells.
    pub fn rows(&self, start: usize, end: usize) -> Result<Raster> {
        if start >= end || end > self.height {
            return Err(Error::Range(format!(
                "row range {start}..{end} outside 0..{}",
                self.height
            )));
        }
        let bands = self
            .bands
            .iter()
            .map(|b| Band {
                name: b.name.clone(),
                grid: Grid {
                    width: self.width,
                    height: end - start,
                    values: b.grid.values[start * self.width..end * self.width].to_vec(),
                },
            })
            .collect();
        Raster::new(
            self.cell_size,
            (
                self.origin.0,
                self.origin.1 - start as f64 * self.cell_size,
            ),
            bands,
        )
    }

    /// Field-wise metadata equality plus bitwise grid equality.
    pub fn bit_eq(&self, other: &Raster) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.cell_size.to_bits() == other.cell_size.to_bits()
            && self.origin.0.to_bits() == other.origin.0.to_bits()
            && self.origin.1.to_bits() == other.origin.1.to_bits()
            && self.bands.len() == other.bands.len()
            && self
                .bands
                .iter()
                .zip(&other.bands)
                .all(|(a, b)| a.name == b.name && a.grid.bit_eq(&b.grid))
    }

    /// Exact number of bytes `to_bytes` produces.
    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER_LEN
            + self
                .bands
                .iter()
                .map(|b| 2 + b.name.len() + 8 * self.width * self.height)
                .sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&self.cell_size.to_le_bytes());
        out.extend_from_slice(&self.origin.0.to_le_bytes());
        out.extend_from_slice(&self.origin.1.to_le_bytes());
        out.extend_from_slice(&(self.bands.len() as u32).to_le_bytes());
        for band in &self.bands {
            out.extend_from_slice(&(band.name.len() as u16).to_le_bytes());
            out.extend_from_slice(band.name.as_bytes());
            for v in &band.grid.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Raster> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(6, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected \"CARB1\\0\"".into(),
            });
        }
        let dims_offset = r.pos as u64;
        let width = r.u32("width")? as usize;
        let height = r.u32("height")? as usize;
        let cell_size = r.f64("cell_size")?;
        let origin_x = r.f64("origin_x")?;
        let origin_y = r.f64("origin_y")?;
        let band_count = r.u32("band_count")? as usize;

        let payload_len = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(8))
            .filter(|&n| n <= bytes.len())
            .ok_or_else(|| Error::Format {
                offset: dims_offset,
                message: format!("dimensions {width}x{height} overflow the file"),
            })?;
        if band_count == 0 {
            return Err(Error::Validation("raster has zero bands".into()));
        }

        let mut bands = Vec::with_capacity(band_count.min(1024));
        for _ in 0..band_count {
            let name_len = r.u16("band name length")? as usize;
            let name_offset = r.pos as u64;
            let name = std::str::from_utf8(r.take(name_len, "band name")?)
                .map_err(|e| Error::Format {
                    offset: name_offset,
                    message: format!("band name is not UTF-8: {e}"),
                })?
                .to_string();
            let raw = r.take(payload_len, "band payload")?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            bands.push(Band {
                name,
                grid: Grid {
                    width,
                    height,
                    values,
                },
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Raster::new(cell_size, (origin_x, origin_y), bands)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Raster::from_bytes(&bytes)
}

pub fn save_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, raster.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Per-pixel `(a - b) / (a + b)`. A zero denominator or a NaN input gives NaN.
pub fn normalized_difference(raster: &Raster, band_a: &str, band_b: &str) -> Result<Grid> {
    let a = raster.band(band_a)?;
    let b = raster.band(band_b)?;
    let width = raster.width;
    let mut values = vec![0.0; a.values.len()];
    values
        .par_chunks_mut(width)
        .zip(a.values.par_chunks(width).zip(b.values.par_chunks(width)))
        .for_each(|(out, (ra, rb))| {
            for ((o, &x), &y) in out.iter_mut().zip(ra).zip(rb) {
                *o = nd_pixel(x, y);
            }
        });
    Ok(Grid {
        width,
        height: raster.height,
        values,
    })
}

#[inline]
pub(crate) fn nd_pixel(a: f64, b: f64) -> f64 {
    let sum = a + b;
    if a.is_nan() || b.is_nan() || sum == 0.0 {
        return f64::NAN;
    }
    // Mixed-sign reflectances can push the ratio outside [-1, 1].
    ((a - b) / sum).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_band(a: Vec<f64>, b: Vec<f64>, w: usize, h: usize) -> Raster {
        Raster::from_bands([
            ("a", Grid::new(w, h, a).unwrap()),
            ("b", Grid::new(w, h, b).unwrap()),
        ])
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.carb");
        let r = Raster::new(
            10.0,
            (500_000.0, 6_000_000.0),
            vec![
                Band {
                    name: "nir".into(),
                    grid: Grid::from_fn(3, 2, |r, c| (r * 3 + c) as f64 * 0.1),
                },
                Band {
                    name: "réd".into(),
                    grid: Grid::new(3, 2, vec![f64::NAN, -0.0, 1e-300, 2.5, 0.0, 7.0]).unwrap(),
                },
            ],
        )
        .unwrap();
        save_raster(&r, &path).unwrap();
        let back = load_raster(&path).unwrap();
        assert!(r.bit_eq(&back));
    }

    #[test]
    fn repeated_saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let r = two_band(vec![0.5, 0.25], vec![0.125, 1.0], 2, 1);
        save_raster(&r, dir.path().join("1")).unwrap();
        save_raster(&r, dir.path().join("2")).unwrap();
        assert_eq!(
            fs::read(dir.path().join("1")).unwrap(),
            fs::read(dir.path().join("2")).unwrap()
        );
    }

    #[test]
    fn file_size_matches_layout() {
        let bands = ["b1", "b2", "b3", "b4"]
            .iter()
            .map(|n| Band {
                name: n.to_string(),
                grid: Grid::filled(64, 64, 0.5),
            })
            .collect();
        let r = Raster::new(30.0, (0.0, 0.0), bands).unwrap();
        // 42-byte fixed header, 4 band records of (2 + 2 name bytes), 4 payloads.
        assert_eq!(FIXED_HEADER_LEN, 42);
        assert_eq!(r.to_bytes().len(), 42 + 4 * 4 + 4 * 64 * 64 * 8);
        assert_eq!(r.encoded_len(), r.to_bytes().len());
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = two_band(vec![1.0], vec![2.0], 1, 1).to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        match Raster::from_bytes(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_names_offset() {
        let bytes = two_band(vec![1.0, 2.0], vec![3.0, 4.0], 2, 1).to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        match Raster::from_bytes(cut) {
            // second band payload starts after header + band1 record + band2 name record
            Err(Error::Format { offset, .. }) => {
                assert_eq!(offset as usize, 42 + (2 + 1 + 16) + (2 + 1))
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn overflowing_dimensions_rejected() {
        let mut bytes = two_band(vec![1.0], vec![2.0], 1, 1).to_bytes();
        bytes[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[10..14].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            Raster::from_bytes(&bytes),
            Err(Error::Format { offset: 6, .. })
        ));
    }

    #[test]
    fn zero_bands_is_validation_error() {
        let mut bytes = two_band(vec![1.0], vec![2.0], 1, 1).to_bytes();
        bytes.truncate(FIXED_HEADER_LEN);
        bytes[38..42].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            Raster::from_bytes(&bytes),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn single_nodata_pixel_loads() {
        let r = Raster::from_bands([("x", Grid::filled(1, 1, f64::NAN))]).unwrap();
        let back = Raster::from_bytes(&r.to_bytes()).unwrap();
        assert!(back.is_nodata("x", 0, 0).unwrap());
    }

    #[test]
    fn mismatched_bands_rejected() {
        let err = Raster::from_bands([
            ("a", Grid::filled(2, 2, 0.0)),
            ("b", Grid::filled(2, 3, 0.0)),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn infinities_and_duplicates_rejected() {
        assert!(Raster::from_bands([("a", Grid::filled(1, 1, f64::INFINITY))]).is_err());
        assert!(Raster::from_bands([
            ("a", Grid::filled(1, 1, 0.0)),
            ("a", Grid::filled(1, 1, 0.0))
        ])
        .is_err());
    }

    #[test]
    fn normalized_difference_examples() {
        let r = two_band(vec![0.8, 0.3, 0.0, f64::NAN], vec![0.2, 0.3, 0.0, 0.1], 2, 2);
        let nd = normalized_difference(&r, "a", "b").unwrap();
        assert!((nd.values()[0] - 0.6).abs() < 1e-15);
        assert_eq!(nd.values()[1], 0.0);
        assert!(nd.values()[2].is_nan());
        assert!(nd.values()[3].is_nan());
        assert!(matches!(
            normalized_difference(&r, "a", "swir"),
            Err(Error::UnknownBand(_))
        ));
    }

    #[test]
    fn row_slices_cover_raster() {
        let r = two_band((0..12).map(f64::from).collect(), vec![1.0; 12], 3, 4);
        let top = r.rows(0, 1).unwrap();
        let rest = r.rows(1, 4).unwrap();
        assert_eq!(top.height() + rest.height(), 4);
        assert_eq!(rest.band("a").unwrap().get(0, 0), 3.0);
        assert!(r.rows(2, 2).is_err());
    }

    fn arb_raster() -> impl Strategy<Value = Raster> {
        (1usize..6, 1usize..6, 1usize..4).prop_flat_map(|(w, h, nb)| {
            let cell = prop_oneof![Just(f64::NAN), -1e6f64..1e6];
            (
                proptest::collection::vec(proptest::collection::vec(cell, w * h), nb),
                0.001f64..1e4,
                -1e7f64..1e7,
                -1e7f64..1e7,
            )
                .prop_map(move |(grids, cs, ox, oy)| {
                    let bands = grids
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| Band {
                            name: format!("band_{i}"),
                            grid: Grid::new(w, h, v).unwrap(),
                        })
                        .collect();
                    Raster::new(cs, (ox, oy), bands).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn prop_round_trip(r in arb_raster()) {
            let back = Raster::from_bytes(&r.to_bytes()).unwrap();
            prop_assert!(r.bit_eq(&back));
        }

        #[test]
        fn prop_nd_antisymmetric_and_bounded(
            a in proptest::collection::vec(-1.0f64..1.0, 16),
            b in proptest::collection::vec(-1.0f64..1.0, 16),
        ) {
            let r = two_band(a, b, 4, 4);
            let ab = normalized_difference(&r, "a", "b").unwrap();
            let ba = normalized_difference(&r, "b", "a").unwrap();
            for (x, y) in ab.values().iter().zip(ba.values()) {
                if x.is_nan() {
                    prop_assert!(y.is_nan());
                } else {
                    prop_assert_eq!(*x, -*y);
                    prop_assert!((-1.0..=1.0).contains(x));
                }
            }
        }
    }
}
