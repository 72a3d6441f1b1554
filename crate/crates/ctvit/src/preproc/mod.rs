//! Slice preprocessing: body/lung segmentation, low-content slice removal,
//! subject-wide ROI cropping onto a fixed 440x360 canvas, and the final
//! 224x224 model-stage resample.

pub mod mask;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::tensor::Tensor;
use mask::{
    close, connected_components, fill_holes, otsu_threshold, threshold_above,
    threshold_at_or_below, Mask,
};

/// Crop-stage canvas width (paper resolution 440x360).
pub const CROP_WIDTH: usize = 440;
/// Crop-stage canvas height.
pub const CROP_HEIGHT: usize = 360;
/// Model-stage side length.
pub const MODEL_SIDE: usize = 224;

/// One raw CT slice.
#[derive(Debug, Clone)]
pub struct CtSlice {
    pub image: GrayImage,
    /// Index embedded in the source filename.
    pub source_index: usize,
}

/// Lung segmentation result for one slice.
#[derive(Debug, Clone)]
pub struct LungMask {
    pub mask: Mask,
    pub lung_fraction: f64,
}

/// Preprocessing tunables (config keys `preproc.min_lung_fraction` and
/// `preproc.roi_margin_px`).
#[derive(Debug, Clone, Copy)]
pub struct PreprocOptions {
    pub min_lung_fraction: f64,
    pub roi_margin_px: usize,
}

impl Default for PreprocOptions {
    fn default() -> Self {
        PreprocOptions {
            min_lung_fraction: 0.02,
            roi_margin_px: 10,
        }
    }
}

/// Patient body: largest above-Otsu component with holes filled, which
/// excludes scanner bed and air background. Empty for blank slices.
pub fn body_mask(slice: &GrayImage) -> Mask {
    let t = otsu_threshold(slice);
    let fg = threshold_above(slice, t);
    match connected_components(&fg).into_iter().next() {
        Some(largest) => fill_holes(&largest),
        None => Mask::empty(slice.width(), slice.height()),
    }
}

/// Lungs: up to the two largest dark components strictly inside the body,
/// hole-filled and morphologically closed (radius 3). The result is always a
/// subset of the body mask.
pub fn lung_mask(slice: &GrayImage, body: &Mask) -> LungMask {
    let t = otsu_threshold(slice);
    let dark = threshold_at_or_below(slice, t).intersect(body);
    let comps = connected_components(&dark);
    let mut union = Mask::empty(slice.width(), slice.height());
    for comp in comps.into_iter().take(2) {
        union = union.union(&comp);
    }
    let mask = close(&fill_holes(&union), 3).intersect(body);
    let lung_fraction = mask.fraction();
    LungMask {
        mask,
        lung_fraction,
    }
}

/// Outcome of the low-lung-content filter; indices refer to the input order.
#[derive(Debug, Clone)]
pub struct SliceFilter {
    pub kept: Vec<usize>,
    /// Dropped slice index with its lung fraction.
    pub dropped: Vec<(usize, f64)>,
}

impl SliceFilter {
    pub fn all_dropped(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Keeps slices with `lung_fraction >= min_lung_fraction`, preserving order.
pub fn filter_slices(masks: &[LungMask], min_lung_fraction: f64) -> SliceFilter {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, m) in masks.iter().enumerate() {
        if m.lung_fraction >= min_lung_fraction {
            kept.push(i);
        } else {
            dropped.push((i, m.lung_fraction));
        }
    }
    SliceFilter { kept, dropped }
}

/// ROI box in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiBox {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

/// Placement of an ROI box onto the fixed crop canvas. One transform is
/// shared by every slice of a subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiTransform {
    pub roi: RoiBox,
    /// Uniform scale applied to the crop; 1.0 unless the box exceeds the canvas.
    pub scale: f64,
    pub scaled_w: usize,
    pub scaled_h: usize,
    pub offset_x: usize,
    pub offset_y: usize,
}

/// Union bounding box of the given lung masks, expanded by `margin` pixels
/// and clamped to the image. Errors when no mask has any lung pixel.
pub fn subject_roi(masks: &[&Mask], margin: usize) -> Result<RoiBox> {
    let mut boxes = masks.iter().filter_map(|m| m.bounding_box());
    let first = boxes
        .next()
        .ok_or_else(|| Error::Pipeline("empty lung union: no ROI for subject".into()))?;
    let (mut x0, mut y0, mut x1, mut y1) = first;
    for (bx0, by0, bx1, by1) in boxes {
        x0 = x0.min(bx0);
        y0 = y0.min(by0);
        x1 = x1.max(bx1);
        y1 = y1.max(by1);
    }
    let (w, h) = (masks[0].width(), masks[0].height());
    x0 = x0.saturating_sub(margin);
    y0 = y0.saturating_sub(margin);
    x1 = (x1 + margin).min(w - 1);
    y1 = (y1 + margin).min(h - 1);
    Ok(RoiBox {
        x0,
        y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    })
}

/// Computes how an ROI box lands on the crop canvas: scaled down uniformly
/// only when it exceeds 440x360, centered otherwise.
pub fn roi_transform(roi: RoiBox) -> RoiTransform {
    let (scale, scaled_w, scaled_h) = if roi.w > CROP_WIDTH || roi.h > CROP_HEIGHT {
        let f = (CROP_WIDTH as f64 / roi.w as f64).min(CROP_HEIGHT as f64 / roi.h as f64);
        let sw = ((roi.w as f64 * f).round() as usize).clamp(1, CROP_WIDTH);
        let sh = ((roi.h as f64 * f).round() as usize).clamp(1, CROP_HEIGHT);
        (f, sw, sh)
    } else {
        (1.0, roi.w, roi.h)
    };
    RoiTransform {
        roi,
        scale,
        scaled_w,
        scaled_h,
        offset_x: (CROP_WIDTH - scaled_w) / 2,
        offset_y: (CROP_HEIGHT - scaled_h) / 2,
    }
}

/// Applies a subject transform to one slice: crop, optional uniform rescale,
/// zero-padded centered placement on the 440x360 canvas.
pub fn crop_to_canvas(slice: &GrayImage, t: &RoiTransform) -> Result<GrayImage> {
    let crop = slice.crop(t.roi.x0, t.roi.y0, t.roi.w, t.roi.h)?;
    let scaled = if t.scale == 1.0 {
        crop
    } else {
        crop.resize(t.scaled_w, t.scaled_h)
    };
    let mut canvas = GrayImage::zeros(CROP_WIDTH, CROP_HEIGHT);
    for y in 0..t.scaled_h {
        for x in 0..t.scaled_w {
            canvas.set(t.offset_x + x, t.offset_y + y, scaled.get(x, y));
        }
    }
    Ok(canvas)
}

/// Crop stage (440x360) to model stage: bilinear resample to 224x224 and
/// scale into [0, 1].
pub fn resize_normalize(crop: &GrayImage) -> Result<Tensor> {
    if crop.width() != CROP_WIDTH || crop.height() != CROP_HEIGHT {
        return Err(Error::Shape(format!(
            "crop stage must be {CROP_WIDTH}x{CROP_HEIGHT}, got {}x{}",
            crop.width(),
            crop.height()
        )));
    }
    let data = crop.resize_to_unit(MODEL_SIDE, MODEL_SIDE);
    Tensor::new(vec![MODEL_SIDE, MODEL_SIDE], data)
}

/// Fully preprocessed slice: both stages plus provenance.
#[derive(Debug, Clone)]
pub struct PreprocessedSlice {
    pub source_index: usize,
    pub lung_fraction: f64,
    pub crop: GrayImage,
    pub model: Tensor,
}

/// Per-subject preprocessing output.
#[derive(Debug, Clone)]
pub struct SubjectPreproc {
    pub kept: Vec<PreprocessedSlice>,
    /// Source index and lung fraction of slices dropped for low lung content.
    pub dropped: Vec<(usize, f64)>,
    /// Shared geometric transform; None when every slice was dropped.
    pub transform: Option<RoiTransform>,
}

impl SubjectPreproc {
    /// True when the subject lost all slices to the filter and must be
    /// flagged rather than silently skipped.
    pub fn all_dropped(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Runs the whole per-subject pipeline: masks, slice filter, shared ROI,
/// crop stage and model stage.
pub fn preprocess_subject(slices: &[CtSlice], opts: &PreprocOptions) -> Result<SubjectPreproc> {
    if slices.is_empty() {
        return Err(Error::InvalidInput("subject has no slices".into()));
    }
    let masks: Vec<LungMask> = slices
        .iter()
        .map(|s| {
            let body = body_mask(&s.image);
            lung_mask(&s.image, &body)
        })
        .collect();
    let filter = filter_slices(&masks, opts.min_lung_fraction);
    if filter.all_dropped() {
        return Ok(SubjectPreproc {
            kept: Vec::new(),
            dropped: filter
                .dropped
                .iter()
                .map(|&(i, f)| (slices[i].source_index, f))
                .collect(),
            transform: None,
        });
    }
    let kept_masks: Vec<&Mask> = filter.kept.iter().map(|&i| &masks[i].mask).collect();
    let roi = subject_roi(&kept_masks, opts.roi_margin_px)?;
    let transform = roi_transform(roi);
    let mut kept = Vec::with_capacity(filter.kept.len());
    for &i in &filter.kept {
        let crop = crop_to_canvas(&slices[i].image, &transform)?;
        let model = resize_normalize(&crop)?;
        kept.push(PreprocessedSlice {
            source_index: slices[i].source_index,
            lung_fraction: masks[i].lung_fraction,
            crop,
            model,
        });
    }
    Ok(SubjectPreproc {
        kept,
        dropped: filter
            .dropped
            .iter()
            .map(|&(i, f)| (slices[i].source_index, f))
            .collect(),
        transform: Some(transform),
    })
}


#[cfg(test)]
mod phantom_tests {
    use super::*;
    use crate::dataset::read_slice;
    use crate::eval::ClassLabel;
    use crate::phantom::{generate_subject, read_truth_mask, PhantomSpec};

    fn dice(a: &Mask, b: &Mask) -> f64 {
        let inter = a.intersect(b).count() as f64;
        2.0 * inter / (a.count() + b.count()) as f64
    }

    fn load_subject(dir: &std::path::Path, spec: &PhantomSpec) -> (Vec<CtSlice>, Vec<crate::phantom::TruthMasks>) {
        let mut slices = Vec::new();
        let mut truths = Vec::new();
        for i in 0..spec.n_slices {
            let img = dir.join(format!("slice{i:04}.pgm"));
            slices.push(read_slice(&img).unwrap());
            truths.push(read_truth_mask(&dir.join(format!("slice{i:04}.mask.pgm"))).unwrap());
        }
        (slices, truths)
    }

    #[test]
    fn body_mask_recovers_truth_ellipse_within_one_percent() {
        let spec = PhantomSpec::new(301, ClassLabel::NonCovid);
        let dir = tempfile::tempdir().unwrap();
        generate_subject(dir.path(), "s", &spec).unwrap();
        let (slices, truths) = load_subject(&dir.path().join("s"), &spec);
        for (slice, truth) in slices.iter().zip(&truths) {
            let body = body_mask(&slice.image);
            let total = (slice.image.width() * slice.image.height()) as f64;
            let mismatch = body
                .bits()
                .iter()
                .zip(truth.body.bits())
                .filter(|(a, b)| a != b)
                .count() as f64;
            assert!(
                mismatch / total < 0.01,
                "body mask disagreement {:.3}%",
                100.0 * mismatch / total
            );
        }
    }

    #[test]
    fn bright_border_artifact_is_not_the_body() {
        let spec = PhantomSpec::new(302, ClassLabel::NonCovid);
        let dir = tempfile::tempdir().unwrap();
        generate_subject(dir.path(), "s", &spec).unwrap();
        let (mut slices, _) = load_subject(&dir.path().join("s"), &spec);
        let slice = &mut slices[4];
        let (w, h) = (slice.image.width(), slice.image.height());
        // Paint a 2-pixel bright frame mimicking a scanner artifact.
        for y in 0..h {
            for x in 0..w {
                if x < 2 || y < 2 || x >= w - 2 || y >= h - 2 {
                    slice.image.set(x, y, 255);
                }
            }
        }
        let body = body_mask(&slice.image);
        for y in 0..h {
            for x in 0..w {
                if x < 2 || y < 2 || x >= w - 2 || y >= h - 2 {
                    assert!(!body.get(x, y), "border pixel ({x},{y}) kept in body mask");
                }
            }
        }
        assert!(body.count() > 0, "body itself must survive");
    }

    #[test]
    fn lung_masks_reach_dice_above_point_nine() {
        for seed in [303u64, 304, 305] {
            let spec = PhantomSpec::new(seed, ClassLabel::Covid);
            let dir = tempfile::tempdir().unwrap();
            generate_subject(dir.path(), "s", &spec).unwrap();
            let (slices, truths) = load_subject(&dir.path().join("s"), &spec);
            for (i, (slice, truth)) in slices.iter().zip(&truths).enumerate() {
                if truth.lung.fraction() < 0.01 {
                    continue;
                }
                let body = body_mask(&slice.image);
                let lung = lung_mask(&slice.image, &body);
                let d = dice(&lung.mask, &truth.lung);
                assert!(d > 0.9, "seed {seed} slice {i}: Dice {d:.3}");
            }
        }
    }

    #[test]
    fn heart_interior_stays_out_of_the_lung_mask() {
        // Closing (radius 3) may graze a couple of boundary pixels at the
        // lung-heart notch; the heart interior must stay untouched.
        let spec = PhantomSpec::new(306, ClassLabel::NonCovid);
        let dir = tempfile::tempdir().unwrap();
        generate_subject(dir.path(), "s", &spec).unwrap();
        let (slices, truths) = load_subject(&dir.path().join("s"), &spec);
        let mut checked = 0;
        for (slice, truth) in slices.iter().zip(&truths) {
            if truth.lung.count() == 0 {
                continue;
            }
            let body = body_mask(&slice.image);
            let lung = lung_mask(&slice.image, &body);
            let heart_interior = mask::erode(&truth.heart, 3);
            assert!(heart_interior.count() > 0, "eroded heart vanished");
            assert_eq!(
                lung.mask.intersect(&heart_interior).count(),
                0,
                "lung mask reaches into the heart interior"
            );
            let overlap = lung.mask.intersect(&truth.heart).count() as f64
                / truth.heart.count() as f64;
            assert!(overlap < 0.15, "lung mask covers {:.1}% of heart", overlap * 100.0);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn lung_is_always_inside_body() {
        for seed in [307u64, 308] {
            for label in [ClassLabel::Covid, ClassLabel::NonCovid] {
                let mut spec = PhantomSpec::new(seed, label);
                spec.lungless_leading = 1;
                let dir = tempfile::tempdir().unwrap();
                generate_subject(dir.path(), "s", &spec).unwrap();
                let (slices, _) = load_subject(&dir.path().join("s"), &spec);
                for slice in &slices {
                    let body = body_mask(&slice.image);
                    let lung = lung_mask(&slice.image, &body);
                    assert!(lung.mask.is_subset_of(&body));
                }
            }
        }
    }

    #[test]
    fn three_lungless_leading_slices_are_dropped() {
        let mut spec = PhantomSpec::new(309, ClassLabel::NonCovid);
        spec.n_slices = 9;
        spec.lungless_leading = 3;
        let dir = tempfile::tempdir().unwrap();
        generate_subject(dir.path(), "s", &spec).unwrap();
        let (slices, _) = load_subject(&dir.path().join("s"), &spec);
        let result = preprocess_subject(&slices, &PreprocOptions::default()).unwrap();
        let dropped: Vec<usize> = result.dropped.iter().map(|&(i, _)| i).collect();
        assert_eq!(dropped, vec![0, 1, 2]);
        assert_eq!(result.kept.len(), 6);
        let kept: Vec<usize> = result.kept.iter().map(|s| s.source_index).collect();
        assert_eq!(kept, vec![3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn output_shapes_fixed_for_any_input_resolution() {
        for (w, h) in [(512, 512), (768, 768), (192, 160), (440, 360)] {
            let mut spec = PhantomSpec::new(310, ClassLabel::NonCovid);
            spec.width = w;
            spec.height = h;
            spec.n_slices = 2;
            let dir = tempfile::tempdir().unwrap();
            generate_subject(dir.path(), "s", &spec).unwrap();
            let (slices, _) = load_subject(&dir.path().join("s"), &spec);
            let result = preprocess_subject(&slices, &PreprocOptions::default()).unwrap();
            assert!(!result.kept.is_empty(), "{w}x{h}: all slices dropped");
            for s in &result.kept {
                assert_eq!((s.crop.width(), s.crop.height()), (CROP_WIDTH, CROP_HEIGHT));
                assert_eq!(s.model.shape(), &[MODEL_SIDE, MODEL_SIDE]);
                assert!(s.model.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn all_slices_dropped_flags_subject() {
        let mut spec = PhantomSpec::new(311, ClassLabel::NonCovid);
        spec.n_slices = 3;
        spec.lungless_leading = 3;
        let dir = tempfile::tempdir().unwrap();
        generate_subject(dir.path(), "s", &spec).unwrap();
        let (slices, _) = load_subject(&dir.path().join("s"), &spec);
        let result = preprocess_subject(&slices, &PreprocOptions::default()).unwrap();
        assert!(result.all_dropped());
        assert!(result.transform.is_none());
        assert_eq!(result.dropped.len(), 3);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let spec = PhantomSpec::new(312, ClassLabel::Covid);
        let dir = tempfile::tempdir().unwrap();
        generate_subject(dir.path(), "s", &spec).unwrap();
        let (slices, _) = load_subject(&dir.path().join("s"), &spec);
        let a = preprocess_subject(&slices, &PreprocOptions::default()).unwrap();
        let b = preprocess_subject(&slices, &PreprocOptions::default()).unwrap();
        assert_eq!(a.transform, b.transform);
        assert_eq!(a.kept.len(), b.kept.len());
        for (x, y) in a.kept.iter().zip(&b.kept) {
            assert_eq!(x.crop, y.crop);
            assert_eq!(x.model.data(), y.model.data());
        }
    }
}
