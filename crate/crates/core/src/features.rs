//! Dense per-frame feature grids and their little-endian file format:
//! `u32 channels, u32 height, u32 width, u32 frame_count`, then every frame
//! as `f32` values in channel-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::domain("feature grid dims must be positive"));
        }
        if values.len() != channels * height * width {
            return Err(Error::domain(format!(
                "feature grid shape mismatch: {}x{}x{} needs {} values, got {}",
                channels,
                height,
                width,
                channels * height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("feature grid contains non-finite values"));
        }
        Ok(FeatureGrid { channels, height, width, values })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureGrid { channels, height, width, values: vec![0.0; channels * height * width] }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Spatial positions, `height * width`.
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Channel-major values: index `(c * height + y) * width + x`.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[(c * self.height + y) * self.width + x]
    }
}

pub fn write_feature_file(path: &Path, grids: &[FeatureGrid]) -> Result<()> {
    let (c, h, w) = match grids.first() {
        Some(g) => g.dims(),
        None => return Err(Error::domain("refusing to write a feature file with no frames")),
    };
    if grids.iter().any(|g| g.dims() != (c, h, w)) {
        return Err(Error::domain("all frames in a feature file must share dims"));
    }
    let mut out = BufWriter::new(File::create(path)?);
    for v in [c, h, w, grids.len()] {
        out.write_u32::<LittleEndian>(v as u32)?;
    }
    for g in grids {
        for &v in &g.values {
            out.write_f32::<LittleEndian>(v)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Returns `(channels, height, width, frame_count)` without reading frames.
pub fn read_feature_header(path: &Path) -> Result<(usize, usize, usize, usize)> {
    let mut f = File::open(path).map_err(|e| Error::load(path.display().to_string(), e.to_string()))?;
    read_header(&mut f).map_err(|e| Error::load(path.display().to_string(), e.to_string()))
}

fn read_header<R: Read>(r: &mut R) -> std::io::Result<(usize, usize, usize, usize)> {
    let c = r.read_u32::<LittleEndian>()? as usize;
    let h = r.read_u32::<LittleEndian>()? as usize;
    let w = r.read_u32::<LittleEndian>()? as usize;
    let n = r.read_u32::<LittleEndian>()? as usize;
    Ok((c, h, w, n))
}

pub fn read_feature_file(path: &Path) -> Result<Vec<FeatureGrid>> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::load(name.clone(), e.to_string()))?;
    let mut r = BufReader::new(file);
    let (c, h, w, n) = read_header(&mut r).map_err(|e| Error::load(name.clone(), e.to_string()))?;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::load(name, "feature header has a zero dimension"));
    }
    let size = c * h * w;
    let mut grids = Vec::with_capacity(n);
    let mut buf = vec![0f32; size];
    for i in 0..n {
        r.read_f32_into::<LittleEndian>(&mut buf)
            .map_err(|e| Error::load(name.clone(), format!("frame {i}: {e}")))?;
        let g = FeatureGrid::new(c, h, w, buf.clone())
            .map_err(|e| Error::load(name.clone(), format!("frame {i}: {e}")))?;
        grids.push(g);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::load(name, format!("{} trailing bytes after {n} frames", rest.len())));
    }
    Ok(grids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_finiteness_checked() {
        assert!(FeatureGrid::new(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(FeatureGrid::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(FeatureGrid::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn file_layout_is_little_endian_channel_major() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let g = FeatureGrid::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_feature_file(&p, &[g.clone(), g.clone()]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 2 * 4 * 4);
        assert_eq!(&bytes[0..4], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(g.get(1, 0, 1), 4.0);
        assert_eq!(read_feature_header(&p).unwrap(), (2, 1, 2, 2));
        assert_eq!(read_feature_file(&p).unwrap(), vec![g.clone(), g]);
    }

    #[test]
    fn truncated_file_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let g = FeatureGrid::new(1, 1, 2, vec![1.0, 2.0]).unwrap();
        write_feature_file(&p, &[g]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read_feature_file(&p), Err(Error::Load { .. })));
    }
}
