//! The `FPT1` tensor container: magic, u32 rank, u32 dims, f32 payload, all
//! little-endian, plus optional text sidecars (`<file>.meta`).

use std::fs;
use std::path::{Path, PathBuf};

use crate::ct::{Sinogram, SinogramMeta};
use crate::error::{Error, Result};
use crate::framelet::{self, StackMeta, SubbandStack, Tensor3D};
use crate::image::Image;

pub const MAGIC: &[u8; 4] = b"FPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Container {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::dim(format!(
                "container dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        Ok(Container { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn byte_len(&self) -> usize {
        8 + 4 * self.dims.len() + 4 * self.data.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.reserve(self.byte_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out);
        out
    }

    /// Parses one container from the front of `bytes`; returns it and the
    /// number of bytes consumed. `origin` names the source in errors.
    pub fn parse(bytes: &[u8], origin: &str) -> Result<(Self, usize)> {
        let bad = |msg: String| Error::format(origin, msg);
        let word = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| bad(format!("truncated header at byte {at}")))
        };
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing FPT1 magic".into()));
        }
        let rank = word(4)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for i in 0..rank {
            dims.push(word(8 + 4 * i)? as usize);
        }
        let start = 8 + 4 * rank;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dims overflow".into()))?;
        let end = start + 4 * len;
        let payload = bytes.get(start..end).ok_or_else(|| {
            bad(format!(
                "payload needs {} bytes, only {} present",
                4 * len,
                bytes.len().saturating_sub(start)
            ))
        })?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok((Container { dims, data }, end))
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let (c, used) = Self::parse(bytes, origin)?;
        if used != bytes.len() {
            return Err(Error::format(
                origin,
                format!("{} trailing bytes after payload", bytes.len() - used),
            ));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Path of the text sidecar of a container file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_meta(path: &Path, text: &str) -> Result<()> {
    let mut t = text.trim_end().to_string();
    t.push('\n');
    fs::write(meta_path(path), t)?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<String> {
    let p = meta_path(path);
    fs::read_to_string(&p).map_err(|e| Error::format(p.display().to_string(), e.to_string()))
}

/// Writes images as a rank-4 `(n, 1, side, side)` container.
pub fn write_images(path: &Path, images: &[Image]) -> Result<()> {
    let side = images.first().map_or(0, Image::side);
    let mut data = Vec::with_capacity(images.len() * side * side);
    for im in images {
        if im.side() != side {
            return Err(Error::dim("all images in a file must share their side"));
        }
        data.extend(im.as_slice().iter().map(|&v| v as f32));
    }
    Container::new(vec![images.len(), 1, side, side], data)?.write(path)
}

pub fn read_images(path: &Path) -> Result<Vec<Image>> {
    let c = Container::read(path)?;
    let origin = path.display().to_string();
    match c.dims.as_slice() {
        &[_, 1, h, w] if h == w => Ok(c
            .data
            .chunks_exact(h * w)
            .map(|ch| Image::from_vec(h, ch.iter().map(|&v| v as f64).collect()).expect("square"))
            .collect()),
        d => Err(Error::format(origin, format!("expected (n, 1, d, d) images, got dims {d:?}"))),
    }
}

/// Writes decomposed stacks as `(n, channels, s, s)` plus the stack meta.
pub fn write_stacks(path: &Path, stacks: &[SubbandStack]) -> Result<()> {
    let first = stacks
        .first()
        .ok_or_else(|| Error::dim("cannot write an empty list of stacks"))?;
    let meta = first.meta();
    let s = first.subband_side();
    let mut data = Vec::new();
    for st in stacks {
        if st.meta() != meta {
            return Err(Error::Consistency("stacks in one file must share their layout".into()));
        }
        for b in &st.subbands {
            data.extend(b.as_slice().iter().map(|&v| v as f32));
        }
    }
    Container::new(vec![stacks.len(), meta.channels(), s, s], data)?.write(path)?;
    write_meta(path, &meta.to_string())
}

pub fn read_stacks(path: &Path) -> Result<Vec<SubbandStack>> {
    let origin = path.display().to_string();
    let meta: StackMeta = read_meta(path)?.parse()?;
    let c = Container::read(path)?;
    let &[n, ch, h, w] = c.dims.as_slice() else {
        return Err(Error::format(origin, format!("expected rank 4, got {:?}", c.dims)));
    };
    let per = ch * h * w;
    (0..n)
        .map(|i| {
            let t = Tensor3D {
                dims: [ch, h, w],
                data: c.data[i * per..(i + 1) * per].iter().map(|&v| v as f64).collect(),
            };
            framelet::tensor_to_stack(&t, &meta)
        })
        .collect()
}

/// Writes sinograms sharing one angle grid as `(n, angles, n_det)`.
pub fn write_sinograms(path: &Path, sinos: &[Sinogram], factor: usize) -> Result<()> {
    let first = sinos
        .first()
        .ok_or_else(|| Error::dim("cannot write an empty list of sinograms"))?;
    let meta = first.meta(factor);
    let mut data = Vec::new();
    for s in sinos {
        if s.meta(factor) != meta {
            return Err(Error::Consistency("sinograms in one file must share their shape".into()));
        }
        data.extend(s.data.iter().map(|&v| v as f32));
    }
    Container::new(vec![sinos.len(), meta.n_angles, meta.n_det], data)?.write(path)?;
    write_meta(path, &meta.to_string())
}

/// Reads sinogram data and meta. Angles are not stored; the caller supplies
/// the grid the views were measured on.
pub fn read_sinograms(path: &Path, angles: &[f64]) -> Result<(Vec<Sinogram>, SinogramMeta)> {
    let origin = path.display().to_string();
    let meta: SinogramMeta = read_meta(path)?.trim().parse()?;
    let c = Container::read(path)?;
    let &[n, a, d] = c.dims.as_slice() else {
        return Err(Error::format(origin, format!("expected rank 3, got {:?}", c.dims)));
    };
    if a != meta.n_angles || d != meta.n_det || angles.len() != a {
        return Err(Error::Consistency(format!(
            "{origin}: data is {a}x{d}, meta says '{meta}', {} angles supplied",
            angles.len()
        )));
    }
    let sinos = (0..n)
        .map(|i| {
            let mut s = Sinogram::zeros(angles.to_vec(), d);
            for (o, &v) in s.data.iter_mut().zip(&c.data[i * a * d..(i + 1) * a * d]) {
                *o = v as f64;
            }
            s
        })
        .collect();
    Ok((sinos, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::{build_bank, BankName};
    use crate::framelet::decompose;
    use crate::phantom;

    #[test]
    fn byte_layout() {
        let c = Container::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let b = c.to_bytes();
        assert_eq!(&b[..4], b"FPT1");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&b[20..24], &(-2.5f32).to_le_bytes());
        assert_eq!(b.len(), c.byte_len());
        assert_eq!(Container::from_bytes(&b, "mem").unwrap(), c);
    }

    #[test]
    fn bit_exact_round_trip_including_specials() {
        let vals = vec![0.0, -0.0, f32::MIN_POSITIVE, f32::MAX, 1e-45, std::f32::consts::PI];
        let c = Container::new(vec![6], vals).unwrap();
        let back = Container::from_bytes(&c.to_bytes(), "mem").unwrap();
        for (a, b) in c.data.iter().zip(&back.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_inputs() {
        let c = Container::new(vec![2, 2], vec![0.0; 4]).unwrap();
        let b = c.to_bytes();
        assert!(matches!(Container::from_bytes(&b[..b.len() - 1], "x"), Err(Error::Format { .. })));
        let mut extra = b.clone();
        extra.push(0);
        assert!(Container::from_bytes(&extra, "x").is_err());
        let mut wrong = b.clone();
        wrong[0] = b'G';
        assert!(Container::from_bytes(&wrong, "x").is_err());
        assert!(Container::new(vec![3], vec![0.0; 2]).is_err());
    }

    #[test]
    fn stacks_and_images_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let imgs: Vec<Image> = (0..3).map(|i| phantom::random_phantom(16, 1, i)).collect();
        let p = dir.path().join("x.fpt");
        write_images(&p, &imgs).unwrap();
        let back = read_images(&p).unwrap();
        for (a, b) in imgs.iter().zip(&back) {
            assert!(a.max_abs_diff(b) < 1e-7);
        }
        let bank = build_bank(BankName::Haar).unwrap();
        let stacks: Vec<_> = imgs.iter().map(|x| decompose(x, &bank, 1).unwrap()).collect();
        let ps = dir.path().join("xw.fpt");
        write_stacks(&ps, &stacks).unwrap();
        assert!(read_meta(&ps).unwrap().contains("bank=haar"));
        let back = read_stacks(&ps).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].subbands.len(), 4);
        assert!(back[2].subbands[1].max_abs_diff(&stacks[2].subbands[1]) < 1e-6);
    }

    #[test]
    fn sinograms_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let angles = crate::ct::uniform_angles(6);
        let s = crate::ct::radon(&phantom::shepp_logan(16), &angles).unwrap();
        let p = dir.path().join("s.fpt");
        write_sinograms(&p, &[s.clone(), s.scale(2.0)], 3).unwrap();
        assert_eq!(read_meta(&p).unwrap().trim(), "ct n_angles=6 n_det=16 factor=3");
        let (back, meta) = read_sinograms(&p, &angles).unwrap();
        assert_eq!(meta.factor, 3);
        assert!(back[1].data.iter().zip(&s.data).all(|(a, b)| (a - 2.0 * b).abs() < 1e-4));
        assert!(read_sinograms(&p, &angles[..5]).is_err());
    }
}
