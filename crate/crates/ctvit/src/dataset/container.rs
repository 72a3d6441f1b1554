//! Two-file volume container: a human-readable `.hdr` describing dims,
//! dtype and voxel order, next to a raw little-endian `.img` payload.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Payload of a volume container.
#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    U8(Vec<u8>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl VolumeData {
    pub fn len(&self) -> usize {
        match self {
            VolumeData::U8(v) => v.len(),
            VolumeData::F32(v) => v.len(),
            VolumeData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_tag(&self) -> &'static str {
        match self {
            VolumeData::U8(_) => "u8",
            VolumeData::F32(_) => "f32",
            VolumeData::F64(_) => "f64",
        }
    }

    fn elem_size(&self) -> usize {
        match self {
            VolumeData::U8(_) => 1,
            VolumeData::F32(_) => 4,
            VolumeData::F64(_) => 8,
        }
    }
}

/// A dense `d x h x w` volume, slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeContainer {
    pub dims: [usize; 3],
    pub data: VolumeData,
}

impl VolumeContainer {
    pub fn new(dims: [usize; 3], data: VolumeData) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("volume dims must be positive: {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} imply {expected} voxels, payload has {}",
                data.len()
            )));
        }
        Ok(VolumeContainer { dims, data })
    }
}

fn hdr_path(stem: &Path) -> PathBuf {
    stem.with_extension("hdr")
}

fn img_path(stem: &Path) -> PathBuf {
    stem.with_extension("img")
}

/// Writes `<stem>.hdr` and `<stem>.img`.
pub fn write_volume(stem: &Path, volume: &VolumeContainer) -> Result<()> {
    let header = format!(
        "dims={},{},{}\ndtype={}\norder=slice-major\n",
        volume.dims[0],
        volume.dims[1],
        volume.dims[2],
        volume.data.dtype_tag()
    );
    let hdr = hdr_path(stem);
    fs::write(&hdr, header).map_err(|e| Error::io(&hdr, e))?;
    let mut payload: Vec<u8> = Vec::with_capacity(volume.data.len() * volume.data.elem_size());
    match &volume.data {
        VolumeData::U8(v) => payload.extend_from_slice(v),
        VolumeData::F32(v) => {
            for x in v {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        VolumeData::F64(v) => {
            for x in v {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let img = img_path(stem);
    fs::write(&img, payload).map_err(|e| Error::io(&img, e))
}

/// Reads the pair back; the exact inverse of [`write_volume`].
pub fn read_volume(stem: &Path) -> Result<VolumeContainer> {
    let hdr = hdr_path(stem);
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    let mut dims: Option<[usize; 3]> = None;
    let mut dtype: Option<String> = None;
    let mut order_seen = false;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("dims=") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::format(&hdr, format!("bad dims line: {line}")));
            }
            let mut d = [0usize; 3];
            for (slot, p) in d.iter_mut().zip(&parts) {
                *slot = p
                    .parse()
                    .map_err(|_| Error::format(&hdr, format!("bad dimension `{p}`")))?;
            }
            dims = Some(d);
        } else if let Some(rest) = line.strip_prefix("dtype=") {
            dtype = Some(rest.to_string());
        } else if line == "order=slice-major" {
            order_seen = true;
        } else if !line.trim().is_empty() {
            return Err(Error::format(&hdr, format!("unknown header line: {line}")));
        }
    }
    let dims = dims.ok_or_else(|| Error::format(&hdr, "missing dims"))?;
    if dims.contains(&0) {
        return Err(Error::format(&hdr, format!("non-positive dims {dims:?}")));
    }
    let dtype = dtype.ok_or_else(|| Error::format(&hdr, "missing dtype"))?;
    if !order_seen {
        return Err(Error::format(&hdr, "missing voxel order"));
    }
    let img = img_path(stem);
    let payload = fs::read(&img).map_err(|e| Error::io(&img, e))?;
    let voxels: usize = dims.iter().product();
    let data = match dtype.as_str() {
        "u8" => {
            check_payload(&img, payload.len(), voxels, 1)?;
            VolumeData::U8(payload)
        }
        "f32" => {
            check_payload(&img, payload.len(), voxels, 4)?;
            VolumeData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )
        }
        "f64" => {
            check_payload(&img, payload.len(), voxels, 8)?;
            VolumeData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| {
                        f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
                    })
                    .collect(),
            )
        }
        other => return Err(Error::format(&hdr, format!("unknown dtype `{other}`"))),
    };
    VolumeContainer::new(dims, data)
}

fn check_payload(img: &Path, actual: usize, voxels: usize, elem: usize) -> Result<()> {
    let expected = voxels * elem;
    if actual != expected {
        return Err(Error::format(
            img,
            format!("payload is {actual} bytes, dims require {expected}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_voxel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("v");
        let vol = VolumeContainer::new([1, 1, 1], VolumeData::F32(vec![0.5])).unwrap();
        write_volume(&stem, &vol).unwrap();
        assert_eq!(fs::read(stem.with_extension("img")).unwrap().len(), 4);
        assert_eq!(read_volume(&stem).unwrap(), vol);
    }

    #[test]
    fn dims_payload_mismatch_rejected_on_construction() {
        assert!(VolumeContainer::new([2, 2, 2], VolumeData::U8(vec![0; 7])).is_err());
        assert!(VolumeContainer::new([0, 2, 2], VolumeData::U8(vec![])).is_err());
    }

    #[test]
    fn truncated_payload_is_a_read_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("v");
        let vol =
            VolumeContainer::new([2, 2, 2], VolumeData::U8((0..8).collect())).unwrap();
        write_volume(&stem, &vol).unwrap();
        let img = stem.with_extension("img");
        let mut bytes = fs::read(&img).unwrap();
        bytes.pop();
        fs::write(&img, bytes).unwrap();
        assert!(matches!(read_volume(&stem), Err(Error::Format { .. })));
    }

    #[test]
    fn header_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("v");
        let vol = VolumeContainer::new([3, 2, 4], VolumeData::F32(vec![1.5; 24])).unwrap();
        write_volume(&stem, &vol).unwrap();
        let first = fs::read(stem.with_extension("hdr")).unwrap();
        let reread = read_volume(&stem).unwrap();
        write_volume(&stem, &reread).unwrap();
        assert_eq!(first, fs::read(stem.with_extension("hdr")).unwrap());
    }

    proptest! {
        #[test]
        fn f32_round_trip_is_bit_exact(d in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let n = d * h * w;
            let mut state = seed | 1;
            let data: Vec<f32> = (0..n)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    ((state >> 32) as i32 as f32) / 65536.0
                })
                .collect();
            let vol = VolumeContainer::new([d, h, w], VolumeData::F32(data)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let stem = dir.path().join("rt");
            write_volume(&stem, &vol).unwrap();
            let back = read_volume(&stem).unwrap();
            match (&back.data, &vol.data) {
                (VolumeData::F32(a), VolumeData::F32(b)) => {
                    prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
                }
                _ => prop_assert!(false, "dtype changed in round trip"),
            }
            prop_assert_eq!(back.dims, vol.dims);
        }

        #[test]
        fn u8_round_trip_is_bit_exact(d in 1usize..4, h in 1usize..8, w in 1usize..8, seed in any::<u64>()) {
            let n = d * h * w;
            let mut state = seed;
            let data: Vec<u8> = (0..n)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(99);
                    (state >> 48) as u8
                })
                .collect();
            let vol = VolumeContainer::new([d, h, w], VolumeData::U8(data)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let stem = dir.path().join("rt");
            write_volume(&stem, &vol).unwrap();
            prop_assert_eq!(read_volume(&stem).unwrap(), vol);
        }
    }
}
