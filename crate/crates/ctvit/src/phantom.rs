//! Deterministic synthetic CT-like subjects.
//!
//! Each phantom slice is a bright body ellipse on black background with two
//! dark lung ellipses, a bright "heart" blob between them, and optional
//! Gaussian-profile lesions. COVID subjects carry bright lesions strictly
//! inside the lungs; non-COVID subjects get cloudy distractor patches
//! outside the lungs instead, so mean intensity alone cannot separate the
//! classes. A `<slice>.mask.pgm` sidecar encodes the ground truth:
//! 0 background, 100 body, 150 heart, 200 lung, 255 lesion core.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{pgm, write_labels, Split};
use crate::error::{Error, Result};
use crate::eval::ClassLabel;
use crate::image::GrayImage;
use crate::preproc::mask::Mask;
use crate::rng::DetRng;

pub const TRUTH_BODY: u8 = 100;
pub const TRUTH_HEART: u8 = 150;
pub const TRUTH_LUNG: u8 = 200;
pub const TRUTH_LESION: u8 = 255;

/// Recipe for one synthetic subject.
#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub n_slices: usize,
    pub label: ClassLabel,
    /// Leading slices rendered without any lung content.
    pub lungless_leading: usize,
    /// Inclusive range for the per-subject lesion count.
    pub lesion_count: (usize, usize),
    /// Peak intensity added by a lesion, drawn per lesion.
    pub lesion_intensity: (f64, f64),
    /// Gaussian sigma of a lesion in pixels, drawn per lesion.
    pub lesion_sigma: (f64, f64),
}

impl PhantomSpec {
    /// Defaults sized like a small CT slice so that the lung bounding box
    /// fills most of the 440x360 crop canvas and lesions stay several
    /// pixels wide after the model-stage resample.
    pub fn new(seed: u64, label: ClassLabel) -> Self {
        PhantomSpec {
            seed,
            width: 448,
            height: 320,
            n_slices: 8,
            label,
            lungless_leading: 0,
            lesion_count: (1, 2),
            lesion_intensity: (70.0, 110.0),
            lesion_sigma: (10.0, 16.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.a;
        let dy = (y - self.cy) / self.b;
        dx * dx + dy * dy <= 1.0
    }

    /// Point lies inside the ellipse shrunk by `margin` on both axes.
    fn contains_with_margin(&self, x: f64, y: f64, margin: f64) -> bool {
        if self.a <= margin || self.b <= margin {
            return false;
        }
        let dx = (x - self.cx) / (self.a - margin);
        let dy = (y - self.cy) / (self.b - margin);
        dx * dx + dy * dy <= 1.0
    }

    fn scaled(&self, s: f64) -> Ellipse {
        Ellipse {
            cx: self.cx,
            cy: self.cy,
            a: self.a * s,
            b: self.b * s,
        }
    }
}

struct SubjectGeometry {
    body: Ellipse,
    lungs: [Ellipse; 2],
    heart: Ellipse,
    body_intensity: f64,
    lung_intensity: f64,
    heart_intensity: f64,
}

fn draw_geometry(spec: &PhantomSpec, rng: &mut DetRng) -> Result<SubjectGeometry> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let body = Ellipse {
        cx: 0.5 * w * rng.range_f64(0.99, 1.01),
        cy: 0.54 * h * rng.range_f64(0.98, 1.02),
        a: 0.39 * w * rng.range_f64(0.92, 1.0),
        b: 0.43 * h * rng.range_f64(0.92, 1.0),
    };
    let lung_dx = 0.155 * w;
    let lung_a = 0.13 * w * rng.range_f64(0.9, 1.1);
    let lung_b = 0.22 * h * rng.range_f64(0.9, 1.1);
    let lungs = [
        Ellipse {
            cx: body.cx - lung_dx,
            cy: 0.50 * h,
            a: lung_a,
            b: lung_b,
        },
        Ellipse {
            cx: body.cx + lung_dx,
            cy: 0.50 * h,
            a: lung_a * rng.range_f64(0.95, 1.05),
            b: lung_b * rng.range_f64(0.95, 1.05),
        },
    ];
    // Lungs must sit inside the body; reject impossible geometry.
    for lung in &lungs {
        let extremes = [
            (lung.cx - lung.a, lung.cy),
            (lung.cx + lung.a, lung.cy),
            (lung.cx, lung.cy - lung.b),
            (lung.cx, lung.cy + lung.b),
        ];
        if extremes.iter().any(|&(x, y)| !body.contains(x, y)) {
            return Err(Error::InvalidInput(
                "phantom geometry impossible: lungs larger than body".into(),
            ));
        }
    }
    let heart = Ellipse {
        cx: body.cx,
        cy: 0.60 * h,
        a: 0.085 * w,
        b: 0.115 * h,
    };
    let body_intensity = rng.range_f64(150.0, 175.0);
    Ok(SubjectGeometry {
        body,
        lungs,
        heart,
        body_intensity,
        lung_intensity: rng.range_f64(24.0, 40.0),
        heart_intensity: body_intensity + rng.range_f64(8.0, 16.0),
    })
}

#[derive(Clone, Copy, PartialEq)]
enum PixelClass {
    Background,
    Body,
    Lung,
    Heart,
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    intensity: f64,
}

impl Blob {
    fn support(&self) -> f64 {
        2.5 * self.sigma
    }

    fn added(&self, x: f64, y: f64) -> f64 {
        let d2 = (x - self.cx) * (x - self.cx) + (y - self.cy) * (y - self.cy);
        let s = self.support();
        if d2 > s * s {
            return 0.0;
        }
        self.intensity * (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }

    fn in_core(&self, x: f64, y: f64) -> bool {
        let d2 = (x - self.cx) * (x - self.cx) + (y - self.cy) * (y - self.cy);
        let core = 2.0 * self.sigma;
        d2 <= core * core
    }
}

/// Deterministic lesion placement: lesions assigned round-robin to the two
/// lungs, stacked in vertical bands inside each lung with the sigma shrunk
/// until band and margin constraints hold, so blobs stay strictly inside
/// the lung and never touch each other.
fn place_lesions(
    geometry: &SubjectGeometry,
    lung_scale: f64,
    count: usize,
    spec: &PhantomSpec,
    rng: &mut DetRng,
) -> Vec<Blob> {
    let mut per_lung: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for j in 0..count {
        per_lung[j % 2].push(j);
    }
    let mut blobs = Vec::with_capacity(count);
    for (lung_idx, members) in per_lung.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let lung = geometry.lungs[lung_idx].scaled(lung_scale);
        let k = members.len() as f64;
        for (band, _) in members.iter().enumerate() {
            let mut sigma = rng.range_f64(spec.lesion_sigma.0, spec.lesion_sigma.1);
            let intensity = rng.range_f64(spec.lesion_intensity.0, spec.lesion_intensity.1);
            // Shrink sigma until 2.5*sigma fits into both the lung margin
            // and the vertical band for this lesion.
            let max_support = ((lung.b - 1.5 - k) / (k + 1.0))
                .min(lung.a - 2.5)
                .min(lung.b - 2.5);
            if max_support < 2.0 {
                continue; // lung too small on this slice
            }
            if 2.5 * sigma > max_support {
                sigma = max_support / 2.5;
            }
            let support = 2.5 * sigma;
            let margin = support + 1.5;
            let b_eff = lung.b - margin;
            let band_half = (b_eff / k).max(0.0);
            let rel_y = -1.0 + (2.0 * band as f64 + 1.0) / k;
            let jitter_span = (band_half - support - 1.0).max(0.0);
            let cy = lung.cy + rel_y * b_eff + rng.range_f64(-1.0, 1.0) * jitter_span;
            let rel: f64 = ((cy - lung.cy) / b_eff).clamp(-1.0, 1.0);
            let x_half = (lung.a - margin) * (1.0 - rel * rel).sqrt() * 0.9;
            let mut cx = lung.cx + rng.range_f64(-1.0, 1.0) * x_half.max(0.0);
            // Keep clear of the heart by pushing outward.
            if geometry
                .heart
                .contains_with_margin(cx, cy, -(support + 2.0))
            {
                let outward = if lung_idx == 0 { -1.0 } else { 1.0 };
                cx = lung.cx + outward * x_half.max(0.0) * 0.8;
            }
            let mut blob = Blob {
                cx,
                cy,
                sigma,
                intensity,
            };
            // Pull toward the lung center until the margin holds.
            for _ in 0..12 {
                if lung.contains_with_margin(blob.cx, blob.cy, margin) {
                    break;
                }
                blob.cx = lung.cx + (blob.cx - lung.cx) * 0.8;
                blob.cy = lung.cy + (blob.cy - lung.cy) * 0.8;
            }
            if lung.contains_with_margin(blob.cx, blob.cy, margin - 0.5) {
                blobs.push(blob);
            }
        }
    }
    blobs
}

/// Cloudy patches on body tissue, kept away from the lungs.
fn place_distractors(
    geometry: &SubjectGeometry,
    lung_scale: f64,
    count: usize,
    spec: &PhantomSpec,
    rng: &mut DetRng,
) -> Vec<Blob> {
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        let sigma = rng.range_f64(spec.lesion_sigma.0, spec.lesion_sigma.1);
        let intensity = rng.range_f64(spec.lesion_intensity.0, spec.lesion_intensity.1) * 0.5;
        let support = 2.5 * sigma;
        for _try in 0..80 {
            let angle = rng.range_f64(0.0, std::f64::consts::TAU);
            let radius = rng.uniform().sqrt();
            let cx = geometry.body.cx + radius * (geometry.body.a - support - 2.0) * angle.cos();
            let cy = geometry.body.cy + radius * (geometry.body.b - support - 2.0) * angle.sin();
            let clear = geometry.lungs.iter().all(|l| {
                !l.scaled(lung_scale)
                    .contains_with_margin(cx, cy, -(support + 3.0))
            });
            if clear {
                blobs.push(Blob {
                    cx,
                    cy,
                    sigma,
                    intensity,
                });
                break;
            }
        }
    }
    blobs
}

fn render_slice(
    spec: &PhantomSpec,
    geometry: &SubjectGeometry,
    lung_scale: f64,
    lesions: &[Blob],
    distractors: &[Blob],
    rng: &mut DetRng,
) -> (GrayImage, GrayImage) {
    let (w, h) = (spec.width, spec.height);
    let mut pixels = vec![0u8; w * h];
    let mut truth = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            let mut class = PixelClass::Background;
            if geometry.body.contains(fx, fy) {
                class = PixelClass::Body;
                let in_lung = lung_scale > 0.0
                    && geometry
                        .lungs
                        .iter()
                        .any(|l| l.scaled(lung_scale).contains(fx, fy));
                if in_lung {
                    class = PixelClass::Lung;
                }
                // Heart wins over lung where they overlap.
                if geometry.heart.contains(fx, fy) {
                    class = PixelClass::Heart;
                }
            }
            // One noise draw per pixel keeps the stream layout fixed.
            let noise = rng.range_f64(-3.0, 3.0);
            let mut value = match class {
                PixelClass::Background => 0.0,
                PixelClass::Body => geometry.body_intensity,
                PixelClass::Lung => geometry.lung_intensity,
                PixelClass::Heart => geometry.heart_intensity,
            };
            let mut truth_value = match class {
                PixelClass::Background => 0,
                PixelClass::Body => TRUTH_BODY,
                PixelClass::Heart => TRUTH_HEART,
                PixelClass::Lung => TRUTH_LUNG,
            };
            if class == PixelClass::Lung {
                for blob in lesions {
                    value += blob.added(fx, fy);
                    if blob.in_core(fx, fy) {
                        truth_value = TRUTH_LESION;
                    }
                }
            }
            if class == PixelClass::Body || class == PixelClass::Heart {
                for blob in distractors {
                    value += blob.added(fx, fy);
                }
            }
            if class != PixelClass::Background {
                value += noise;
            }
            pixels[y * w + x] = value.round().clamp(0.0, 255.0) as u8;
            truth[y * w + x] = truth_value;
        }
    }
    (
        GrayImage::new(w, h, pixels).expect("phantom dims are valid"),
        GrayImage::new(w, h, truth).expect("phantom dims are valid"),
    )
}

/// A generated subject, with the label it actually carries (a COVID spec
/// whose lesion count resolves to zero degrades to non-COVID).
#[derive(Debug, Clone)]
pub struct GeneratedSubject {
    pub subject_id: String,
    pub label: ClassLabel,
    pub slice_files: Vec<PathBuf>,
    pub n_lesions: usize,
}

/// Writes `slice<i>.pgm` plus `.mask.pgm` truth sidecars for one subject.
pub fn generate_subject(
    split_dir: &Path,
    subject_id: &str,
    spec: &PhantomSpec,
) -> Result<GeneratedSubject> {
    if spec.n_slices == 0 {
        return Err(Error::InvalidInput("phantom needs at least one slice".into()));
    }
    if spec.lesion_count.0 > spec.lesion_count.1 || spec.lesion_sigma.0 > spec.lesion_sigma.1 {
        return Err(Error::InvalidInput("phantom ranges must be low <= high".into()));
    }
    let mut rng = DetRng::new(spec.seed);
    let geometry = draw_geometry(spec, &mut rng)?;
    if spec.label == ClassLabel::Covid && spec.lesion_count.1 >= 1 {
        // Even the most shrunken lesion needs a 2px support inside the lung.
        let roomiest = geometry
            .lungs
            .iter()
            .map(|l| l.a.min(l.b) - 2.5)
            .fold(f64::NEG_INFINITY, f64::max);
        if roomiest < 2.0 {
            return Err(Error::InvalidInput(
                "phantom geometry impossible: lungs too small to hold any lesion".into(),
            ));
        }
    }
    let n_lesions = if spec.label == ClassLabel::Covid {
        rng.range_usize(spec.lesion_count.0, spec.lesion_count.1)
    } else {
        0
    };
    let label = if n_lesions > 0 {
        ClassLabel::Covid
    } else {
        ClassLabel::NonCovid
    };
    let dir = split_dir.join(subject_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut slice_files = Vec::with_capacity(spec.n_slices);
    let lunged = spec.n_slices.saturating_sub(spec.lungless_leading);
    for i in 0..spec.n_slices {
        let lung_scale = if i < spec.lungless_leading || lunged == 0 {
            0.0
        } else {
            let k = (i - spec.lungless_leading) as f64;
            0.6 + 0.4 * (std::f64::consts::PI * (k + 0.5) / lunged as f64).sin()
        };
        let blob_count = if label == ClassLabel::Covid {
            n_lesions
        } else {
            rng.range_usize(spec.lesion_count.0.max(1), spec.lesion_count.1.max(1))
        };
        let (lesions, distractors) = if lung_scale > 0.0 {
            if label == ClassLabel::Covid {
                (
                    place_lesions(&geometry, lung_scale, blob_count, spec, &mut rng),
                    Vec::new(),
                )
            } else {
                (
                    Vec::new(),
                    place_distractors(&geometry, lung_scale, blob_count, spec, &mut rng),
                )
            }
        } else {
            (Vec::new(), Vec::new())
        };
        let (image, truth) =
            render_slice(spec, &geometry, lung_scale, &lesions, &distractors, &mut rng);
        let img_path = dir.join(format!("slice{i:04}.pgm"));
        pgm::write_pgm(&img_path, &image)?;
        pgm::write_pgm(&dir.join(format!("slice{i:04}.mask.pgm")), &truth)?;
        slice_files.push(img_path);
    }
    Ok(GeneratedSubject {
        subject_id: subject_id.to_string(),
        label,
        slice_files,
        n_lesions,
    })
}

/// Ground truth decoded from a `.mask.pgm` sidecar.
pub struct TruthMasks {
    pub body: Mask,
    pub heart: Mask,
    pub lung: Mask,
    pub lesion: Mask,
}

pub fn read_truth_mask(path: &Path) -> Result<TruthMasks> {
    let img = pgm::read_pgm(path)?;
    let (w, h) = (img.width(), img.height());
    let body = Mask::from_bits(w, h, img.pixels().iter().map(|&p| p >= TRUTH_BODY).collect());
    let heart = Mask::from_bits(w, h, img.pixels().iter().map(|&p| p == TRUTH_HEART).collect());
    let lung = Mask::from_bits(w, h, img.pixels().iter().map(|&p| p >= TRUTH_LUNG).collect());
    let lesion = Mask::from_bits(w, h, img.pixels().iter().map(|&p| p == TRUTH_LESION).collect());
    Ok(TruthMasks { body, heart, lung, lesion })
}

/// Writes a whole split: `n_covid` then `n_noncovid` subjects with exact
/// class counts and a labels CSV. Slice counts and lungless prefixes cycle
/// by subject index, so two seeds always produce the same directory
/// structure (only pixel content differs).
pub fn generate_dataset(
    root: &Path,
    split: Split,
    n_covid: usize,
    n_noncovid: usize,
    seed: u64,
) -> Result<Vec<GeneratedSubject>> {
    let defaults = PhantomSpec::new(0, ClassLabel::NonCovid);
    generate_dataset_sized(
        root,
        split,
        n_covid,
        n_noncovid,
        seed,
        defaults.width,
        defaults.height,
    )
}

/// [`generate_dataset`] with explicit slice geometry.
pub fn generate_dataset_sized(
    root: &Path,
    split: Split,
    n_covid: usize,
    n_noncovid: usize,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<Vec<GeneratedSubject>> {
    let split_dir = root.join(split.dir_name());
    fs::create_dir_all(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
    let split_stream = match split {
        Split::Train => 0xda7a0,
        Split::Validation => 0xda7a1,
        Split::Test => 0xda7a2,
    };
    let mut master = DetRng::derived(seed, split_stream);
    let mut subjects = Vec::with_capacity(n_covid + n_noncovid);
    let mut labels = BTreeMap::new();
    for idx in 0..n_covid + n_noncovid {
        let label = if idx < n_covid {
            ClassLabel::Covid
        } else {
            ClassLabel::NonCovid
        };
        let subject_id = format!("s{idx:04}");
        let mut spec = PhantomSpec::new(master.next_u64(), label);
        spec.width = width;
        spec.height = height;
        spec.n_slices = 8 + idx % 3;
        spec.lungless_leading = [0, 0, 1, 0, 2, 0][idx % 6];
        let generated = generate_subject(&split_dir, &subject_id, &spec)?;
        labels.insert(subject_id, generated.label);
        subjects.push(generated);
    }
    write_labels(&split_dir.join("labels.csv"), &labels)?;
    Ok(subjects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preproc::mask::connected_components;

    #[test]
    fn same_seed_twice_gives_identical_bytes() {
        let spec = PhantomSpec::new(77, ClassLabel::Covid);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate_subject(dir_a.path(), "s", &spec).unwrap();
        generate_subject(dir_b.path(), "s", &spec).unwrap();
        for i in 0..spec.n_slices {
            for name in [format!("slice{i:04}.pgm"), format!("slice{i:04}.mask.pgm")] {
                let a = fs::read(dir_a.path().join("s").join(&name)).unwrap();
                let b = fs::read(dir_b.path().join("s").join(&name)).unwrap();
                assert_eq!(a, b, "{name} differs between identical runs");
            }
        }
    }

    #[test]
    fn zero_lesion_spec_degrades_to_noncovid() {
        let mut spec = PhantomSpec::new(5, ClassLabel::Covid);
        spec.lesion_count = (0, 0);
        let dir = tempfile::tempdir().unwrap();
        let subject = generate_subject(dir.path(), "s", &spec).unwrap();
        assert_eq!(subject.label, ClassLabel::NonCovid);
        assert_eq!(subject.n_lesions, 0);
        for i in 0..spec.n_slices {
            let truth =
                read_truth_mask(&dir.path().join("s").join(format!("slice{i:04}.mask.pgm")))
                    .unwrap();
            assert_eq!(truth.lesion.count(), 0, "slice {i} has lesion pixels");
        }
    }

    #[test]
    fn three_lesions_give_three_components_inside_lungs() {
        let mut spec = PhantomSpec::new(11, ClassLabel::Covid);
        spec.lesion_count = (3, 3);
        let dir = tempfile::tempdir().unwrap();
        let subject = generate_subject(dir.path(), "s", &spec).unwrap();
        assert_eq!(subject.label, ClassLabel::Covid);
        assert_eq!(subject.n_lesions, 3);
        for i in 0..spec.n_slices {
            let truth =
                read_truth_mask(&dir.path().join("s").join(format!("slice{i:04}.mask.pgm")))
                    .unwrap();
            let comps = connected_components(&truth.lesion);
            assert_eq!(comps.len(), 3, "slice {i}: {} lesion components", comps.len());
            // Lesion core pixels only ever land on lung pixels; together with
            // the lung truth they form the full lung ellipses.
            assert_eq!(truth.lesion.intersect(&truth.lung), truth.lesion);
        }
    }

    #[test]
    fn truth_lung_is_inside_truth_body() {
        for seed in [1u64, 2, 3] {
            let spec = PhantomSpec::new(seed, ClassLabel::Covid);
            let dir = tempfile::tempdir().unwrap();
            generate_subject(dir.path(), "s", &spec).unwrap();
            for i in 0..spec.n_slices {
                let truth =
                    read_truth_mask(&dir.path().join("s").join(format!("slice{i:04}.mask.pgm")))
                        .unwrap();
                assert!(truth.lung.is_subset_of(&truth.body));
                assert!(truth.lung.count() > 0);
            }
        }
    }

    #[test]
    fn lungless_leading_slices_have_no_lung_truth() {
        let mut spec = PhantomSpec::new(9, ClassLabel::NonCovid);
        spec.lungless_leading = 3;
        let dir = tempfile::tempdir().unwrap();
        generate_subject(dir.path(), "s", &spec).unwrap();
        for i in 0..spec.n_slices {
            let truth =
                read_truth_mask(&dir.path().join("s").join(format!("slice{i:04}.mask.pgm")))
                    .unwrap();
            if i < 3 {
                assert_eq!(truth.lung.count(), 0, "slice {i} should be lungless");
            } else {
                assert!(truth.lung.count() > 0, "slice {i} should have lungs");
            }
        }
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let subjects = generate_dataset(dir.path(), Split::Train, 0, 0, 7).unwrap();
        assert!(subjects.is_empty());
        let labels = fs::read_to_string(dir.path().join("train/labels.csv")).unwrap();
        assert!(labels.is_empty());
        assert!(crate::dataset::scan_dataset(dir.path(), Split::Train)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn dataset_counts_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let subjects = generate_dataset(dir.path(), Split::Train, 20, 20, 7).unwrap();
        assert_eq!(subjects.len(), 40);
        let labels =
            crate::dataset::read_labels(&dir.path().join("train/labels.csv")).unwrap();
        assert_eq!(labels.len(), 40);
        let covid = labels.values().filter(|&&l| l == ClassLabel::Covid).count();
        assert_eq!(covid, 20);
        let dirs = fs::read_dir(dir.path().join("train"))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().is_dir())
            .count();
        assert_eq!(dirs, 40);
    }

    #[test]
    fn different_seeds_same_structure_different_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate_dataset(dir_a.path(), Split::Train, 3, 3, 1).unwrap();
        generate_dataset(dir_b.path(), Split::Train, 3, 3, 2).unwrap();
        let list = |root: &Path| -> Vec<String> {
            let mut names = Vec::new();
            for subject in fs::read_dir(root.join("train")).unwrap() {
                let p = subject.unwrap().path();
                if p.is_dir() {
                    for f in fs::read_dir(&p).unwrap() {
                        names.push(
                            f.unwrap()
                                .path()
                                .strip_prefix(root)
                                .unwrap()
                                .to_string_lossy()
                                .into_owned(),
                        );
                    }
                }
            }
            names.sort();
            names
        };
        let names_a = list(dir_a.path());
        assert_eq!(names_a, list(dir_b.path()), "directory structure differs");
        let mut any_diff = false;
        for name in &names_a {
            if name.ends_with(".mask.pgm") {
                continue;
            }
            let a = fs::read(dir_a.path().join(name)).unwrap();
            let b = fs::read(dir_b.path().join(name)).unwrap();
            if a != b {
                any_diff = true;
            }
        }
        assert!(any_diff, "different seeds should change pixel bytes");
    }

    #[test]
    fn impossible_geometry_is_rejected() {
        let mut spec = PhantomSpec::new(3, ClassLabel::Covid);
        spec.width = 20;
        spec.height = 20;
        let dir = tempfile::tempdir().unwrap();
        let result = generate_subject(dir.path(), "s", &spec);
        assert!(result.is_err(), "20x20 lungs cannot hold any lesion");
    }
}
