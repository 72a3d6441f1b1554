//! Tokenization: non-overlapping raster-order patches, flattened
//! channel-first. Patchify is a bijection; the inverses are used to prove
//! it.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[c, h, w]` image to `[n_patches, c*p*p]` tokens, raster order.
pub fn patchify2d(image: &Tensor, patch: usize) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "patchify2d expects [c, h, w], got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Shape(format!(
            "image {h}x{w} not divisible by patch {patch}"
        )));
    }
    let (ph, pw) = (h / patch, w / patch);
    let token_len = c * patch * patch;
    let mut data = vec![0.0; ph * pw * token_len];
    let src = image.data();
    for py in 0..ph {
        for px in 0..pw {
            let token = py * pw + px;
            for ch in 0..c {
                for dy in 0..patch {
                    for dx in 0..patch {
                        let sy = py * patch + dy;
                        let sx = px * patch + dx;
                        data[token * token_len + ch * patch * patch + dy * patch + dx] =
                            src[ch * h * w + sy * w + sx];
                    }
                }
            }
        }
    }
    Tensor::new(vec![ph * pw, token_len], data)
}

/// Exact inverse of [`patchify2d`].
pub fn unpatchify2d(tokens: &Tensor, c: usize, h: usize, w: usize, patch: usize) -> Result<Tensor> {
    let (ph, pw) = (h / patch, w / patch);
    let token_len = c * patch * patch;
    if tokens.shape() != [ph * pw, token_len] {
        return Err(Error::Shape(format!(
            "tokens {:?} do not match a {c}x{h}x{w} image with patch {patch}",
            tokens.shape()
        )));
    }
    let mut data = vec![0.0; c * h * w];
    let src = tokens.data();
    for py in 0..ph {
        for px in 0..pw {
            let token = py * pw + px;
            for ch in 0..c {
                for dy in 0..patch {
                    for dx in 0..patch {
                        let sy = py * patch + dy;
                        let sx = px * patch + dx;
                        data[ch * h * w + sy * w + sx] =
                            src[token * token_len + ch * patch * patch + dy * patch + dx];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], data)
}

/// `[d, h, w]` volume to `[n_patches, p^3]` tokens, z-major raster order.
pub fn patchify3d(volume: &Tensor, patch: usize) -> Result<Tensor> {
    let shape = volume.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "patchify3d expects [d, h, w], got {shape:?}"
        )));
    }
    let (d, h, w) = (shape[0], shape[1], shape[2]);
    if patch == 0 || d % patch != 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Shape(format!(
            "volume {d}x{h}x{w} not divisible by patch {patch}"
        )));
    }
    let (pd, ph, pw) = (d / patch, h / patch, w / patch);
    let token_len = patch * patch * patch;
    let mut data = vec![0.0; pd * ph * pw * token_len];
    let src = volume.data();
    for pz in 0..pd {
        for py in 0..ph {
            for px in 0..pw {
                let token = pz * ph * pw + py * pw + px;
                for dz in 0..patch {
                    for dy in 0..patch {
                        for dx in 0..patch {
                            let sz = pz * patch + dz;
                            let sy = py * patch + dy;
                            let sx = px * patch + dx;
                            data[token * token_len + dz * patch * patch + dy * patch + dx] =
                                src[sz * h * w + sy * w + sx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![pd * ph * pw, token_len], data)
}

/// Exact inverse of [`patchify3d`].
pub fn unpatchify3d(
    tokens: &Tensor,
    d: usize,
    h: usize,
    w: usize,
    patch: usize,
) -> Result<Tensor> {
    let (pd, ph, pw) = (d / patch, h / patch, w / patch);
    let token_len = patch * patch * patch;
    if tokens.shape() != [pd * ph * pw, token_len] {
        return Err(Error::Shape(format!(
            "tokens {:?} do not match a {d}x{h}x{w} volume with patch {patch}",
            tokens.shape()
        )));
    }
    let mut data = vec![0.0; d * h * w];
    let src = tokens.data();
    for pz in 0..pd {
        for py in 0..ph {
            for px in 0..pw {
                let token = pz * ph * pw + py * pw + px;
                for dz in 0..patch {
                    for dy in 0..patch {
                        for dx in 0..patch {
                            let sz = pz * patch + dz;
                            let sy = py * patch + dy;
                            let sx = px * patch + dx;
                            data[sz * h * w + sy * w + sx] =
                                src[token * token_len + dz * patch * patch + dy * patch + dx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![d, h, w], data)
}

/// Copies a grayscale `[h, w]` plane into `[c, h, w]`.
pub fn replicate_channels(gray: &Tensor, c: usize) -> Result<Tensor> {
    let shape = gray.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!(
            "replicate_channels expects [h, w], got {shape:?}"
        )));
    }
    let mut data = Vec::with_capacity(c * gray.len());
    for _ in 0..c {
        data.extend_from_slice(gray.data());
    }
    Tensor::new(vec![c, shape[0], shape[1]], data)
}
