//! Binary mask primitives: Otsu thresholding, 4-connected components,
//! hole filling and disk morphology.

use crate::image::GrayImage;

/// Boolean mask with image dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask size mismatch");
        Mask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits
            .iter()
            .zip(&other.bits)
            .all(|(&a, &b)| !a || b)
    }

    pub fn intersect(&self, other: &Mask) -> Mask {
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a && b)
            .collect();
        Mask::from_bits(self.width, self.height, bits)
    }

    pub fn union(&self, other: &Mask) -> Mask {
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a || b)
            .collect();
        Mask::from_bits(self.width, self.height, bits)
    }

    /// Tight bounding box (x0, y0, x1, y1) inclusive, or None when empty.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0) = (usize::MAX, usize::MAX);
        let (mut x1, mut y1) = (0, 0);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then_some((x0, y0, x1, y1))
    }
}

/// Otsu threshold over the 256-bin histogram. Foreground is `pixel > t`.
pub fn otsu_threshold(image: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    for &p in image.pixels() {
        hist[p as usize] += 1;
    }
    let total = image.pixels().len() as f64;
    let grand_sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();

    let mut best_t = 0u8;
    let mut best_var = -1.0;
    let mut weight_bg = 0.0;
    let mut sum_bg = 0.0;
    for t in 0..256 {
        weight_bg += hist[t] as f64;
        if weight_bg == 0.0 {
            continue;
        }
        let weight_fg = total - weight_bg;
        if weight_fg == 0.0 {
            break;
        }
        sum_bg += t as f64 * hist[t] as f64;
        let mean_bg = sum_bg / weight_bg;
        let mean_fg = (grand_sum - sum_bg) / weight_fg;
        let between = weight_bg * weight_fg * (mean_bg - mean_fg) * (mean_bg - mean_fg);
        if between > best_var {
            best_var = between;
            best_t = t as u8;
        }
    }
    best_t
}

pub fn threshold_above(image: &GrayImage, t: u8) -> Mask {
    let bits = image.pixels().iter().map(|&p| p > t).collect();
    Mask::from_bits(image.width(), image.height(), bits)
}

pub fn threshold_at_or_below(image: &GrayImage, t: u8) -> Mask {
    let bits = image.pixels().iter().map(|&p| p <= t).collect();
    Mask::from_bits(image.width(), image.height(), bits)
}

/// 4-connected components, largest first. Each component is returned as its
/// own mask.
pub fn connected_components(mask: &Mask) -> Vec<Mask> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut components: Vec<(usize, Mask)> = Vec::new();
    let mut queue = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        let mut comp = Mask::empty(w, h);
        let mut size = 0usize;
        seen[start] = true;
        queue.push(start);
        while let Some(idx) = queue.pop() {
            comp.bits[idx] = true;
            size += 1;
            let (x, y) = (idx % w, idx / w);
            let mut visit = |nx: usize, ny: usize| {
                let nidx = ny * w + nx;
                if mask.bits[nidx] && !seen[nidx] {
                    seen[nidx] = true;
                    queue.push(nidx);
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < w {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < h {
                visit(x, y + 1);
            }
        }
        components.push((size, comp));
    }
    components.sort_by_key(|(size, _)| std::cmp::Reverse(*size));
    components.into_iter().map(|(_, m)| m).collect()
}

/// Fills interior holes: foreground plus any background region that cannot
/// reach the image border through background pixels.
pub fn fill_holes(mask: &Mask) -> Mask {
    let (w, h) = (mask.width, mask.height);
    let mut outside = vec![false; w * h];
    let mut queue = Vec::new();
    let push = |idx: usize, outside: &mut Vec<bool>, queue: &mut Vec<usize>| {
        if !mask.bits[idx] && !outside[idx] {
            outside[idx] = true;
            queue.push(idx);
        }
    };
    for x in 0..w {
        push(x, &mut outside, &mut queue);
        push((h - 1) * w + x, &mut outside, &mut queue);
    }
    for y in 0..h {
        push(y * w, &mut outside, &mut queue);
        push(y * w + w - 1, &mut outside, &mut queue);
    }
    while let Some(idx) = queue.pop() {
        let (x, y) = (idx % w, idx / w);
        if x > 0 {
            push(idx - 1, &mut outside, &mut queue);
        }
        if x + 1 < w {
            push(idx + 1, &mut outside, &mut queue);
        }
        if y > 0 {
            push(idx - w, &mut outside, &mut queue);
        }
        if y + 1 < h {
            push(idx + w, &mut outside, &mut queue);
        }
    }
    let bits = outside.iter().map(|&o| !o).collect();
    Mask::from_bits(w, h, bits)
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offsets.push((dx, dy));
            }
        }
    }
    offsets
}

pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    let offsets = disk_offsets(radius);
    let (w, h) = (mask.width as isize, mask.height as isize);
    let mut out = Mask::empty(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && nx < w && ny >= 0 && ny < h {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
    }
    out
}

pub fn erode(mask: &Mask, radius: usize) -> Mask {
    let offsets = disk_offsets(radius);
    let (w, h) = (mask.width as isize, mask.height as isize);
    let mut out = Mask::empty(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            // Outside the image counts as foreground, so closing never
            // shrinks a mask that touches the border.
            let keep = offsets.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                nx < 0 || nx >= w || ny < 0 || ny >= h || mask.get(nx as usize, ny as usize)
            });
            if keep {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Morphological closing: dilation followed by erosion.
pub fn close(mask: &Mask, radius: usize) -> Mask {
    erode(&dilate(mask, radius), radius)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_from(rows: &[&[u8]]) -> GrayImage {
        let h = rows.len();
        let w = rows[0].len();
        let pixels: Vec<u8> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        GrayImage::new(w, h, pixels).unwrap()
    }

    #[test]
    fn otsu_separates_bimodal_histogram() {
        let mut pixels = vec![20u8; 50];
        pixels.extend(vec![200u8; 50]);
        let img = GrayImage::new(10, 10, pixels).unwrap();
        let t = otsu_threshold(&img);
        assert!((20..200).contains(&t), "threshold {t}");
        let fg = threshold_above(&img, t);
        assert_eq!(fg.count(), 50);
    }

    #[test]
    fn otsu_on_all_zero_gives_empty_foreground() {
        let img = GrayImage::zeros(4, 4);
        let t = otsu_threshold(&img);
        assert_eq!(threshold_above(&img, t).count(), 0);
    }

    #[test]
    fn components_sorted_by_size() {
        let img = image_from(&[
            &[9, 9, 0, 0, 9],
            &[9, 9, 0, 0, 0],
            &[0, 0, 0, 9, 9],
        ]);
        let mask = threshold_above(&img, 0);
        let comps = connected_components(&mask);
        assert_eq!(comps.len(), 3);
        assert_eq!(comps[0].count(), 4);
        assert_eq!(comps[1].count(), 2);
        assert_eq!(comps[2].count(), 1);
    }

    #[test]
    fn fill_holes_closes_interior() {
        let img = image_from(&[
            &[9, 9, 9, 9],
            &[9, 0, 0, 9],
            &[9, 0, 0, 9],
            &[9, 9, 9, 9],
        ]);
        let mask = threshold_above(&img, 0);
        let filled = fill_holes(&mask);
        assert_eq!(filled.count(), 16);
    }

    #[test]
    fn fill_holes_keeps_border_background() {
        let img = image_from(&[
            &[0, 9, 9, 0],
            &[0, 9, 9, 0],
        ]);
        let mask = threshold_above(&img, 0);
        let filled = fill_holes(&mask);
        assert_eq!(filled.count(), 4);
    }

    #[test]
    fn closing_bridges_small_gaps() {
        let mut mask = Mask::empty(11, 5);
        for y in 0..5 {
            for x in 0..4 {
                mask.set(x, y, true);
                mask.set(x + 6, y, true);
            }
        }
        let closed = close(&mask, 2);
        // The 2-pixel gap is bridged in the middle rows.
        assert!(closed.get(4, 2) && closed.get(5, 2));
        // Closing never shrinks the original mask.
        assert!(mask.is_subset_of(&closed));
    }

    #[test]
    fn bounding_box_none_for_empty() {
        assert!(Mask::empty(3, 3).bounding_box().is_none());
        let mut m = Mask::empty(5, 4);
        m.set(1, 2, true);
        m.set(3, 3, true);
        assert_eq!(m.bounding_box(), Some((1, 2, 3, 3)));
    }
}
