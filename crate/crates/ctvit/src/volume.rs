//! Fixed-depth sub-volume assembly.
//!
//! A subject with D kept slices yields `floor(D/32)` interleaved sub-volumes
//! of 32 slices each: sub-volume k takes indices k, k+s, k+2s, ... With
//! fewer than 32 slices a single sub-volume is built by floor interpolation
//! (indices repeat); the tail of a non-multiple depth is dropped.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of slices in every sub-volume.
pub const SUBVOLUME_DEPTH: usize = 32;

/// Kept-slice indices for each sub-volume of a subject with `d` slices.
pub fn subvolume_indices(d: usize) -> Result<Vec<Vec<usize>>> {
    if d == 0 {
        return Err(Error::InvalidInput(
            "cannot build sub-volumes from zero slices".into(),
        ));
    }
    let s = d / SUBVOLUME_DEPTH;
    if s >= 1 {
        Ok((0..s)
            .map(|k| (0..SUBVOLUME_DEPTH).map(|j| k + j * s).collect())
            .collect())
    } else {
        Ok(vec![(0..SUBVOLUME_DEPTH)
            .map(|i| i * d / SUBVOLUME_DEPTH)
            .collect()])
    }
}

/// One assembled 32-slice stack.
#[derive(Debug, Clone)]
pub struct SubVolume {
    pub subject_id: String,
    /// Positions into the subject's kept-slice list.
    pub indices: Vec<usize>,
    /// `32 x H x W` voxels.
    pub voxels: Tensor,
}

/// Stacks model-stage slices (each `H x W`) into sub-volumes.
pub fn build_subvolumes(subject_id: &str, slices: &[Tensor]) -> Result<Vec<SubVolume>> {
    let index_sets = subvolume_indices(slices.len())?;
    let shape = slices[0].shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape(format!(
            "slices must be 2-D, got {shape:?}"
        )));
    }
    for (i, s) in slices.iter().enumerate() {
        if s.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "slice {i} has shape {:?}, expected {shape:?}",
                s.shape()
            )));
        }
    }
    let (h, w) = (shape[0], shape[1]);
    let mut volumes = Vec::with_capacity(index_sets.len());
    for indices in index_sets {
        let mut voxels = Vec::with_capacity(SUBVOLUME_DEPTH * h * w);
        for &i in &indices {
            voxels.extend_from_slice(slices[i].data());
        }
        volumes.push(SubVolume {
            subject_id: subject_id.to_string(),
            indices,
            voxels: Tensor::new(vec![SUBVOLUME_DEPTH, h, w], voxels)?,
        });
    }
    Ok(volumes)
}
