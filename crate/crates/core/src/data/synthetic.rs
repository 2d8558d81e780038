//! Seeded synthetic segmentation task: colored rectangles and discs on a
//! dark background, with exact ground truth. Small enough to train the
//! miniature network in seconds, structured enough that accuracy means
//! something.

use crate::error::DataError;
use crate::rng::{derive_seed, SplitMix64};

use super::{ClassMap, Image, Palette, SegSample};

/// The 6x6x6 color cube holds this many distinct palette entries.
pub const MAX_SYNTHETIC_CLASSES: usize = 216;

/// Uniform per-channel noise added to rendered images, in byte units.
const NOISE_AMPLITUDE: i32 = 12;

/// Stream tag separating sample generation from other uses of the seed.
const SAMPLE_TAG: u64 = 0x53594e54;

/// Deterministic palette: class `i` takes position `(i * 97) mod 216` in a
/// 6-level color cube (channel values 0, 51, ..., 255), so any two classes
/// differ by at least 51 in some channel. Class 0 is black (background).
pub fn synthetic_palette(num_classes: usize) -> Result<Palette, DataError> {
    if !(2..=MAX_SYNTHETIC_CLASSES).contains(&num_classes) {
        return Err(DataError::Palette(format!(
            "synthetic palette supports 2..={MAX_SYNTHETIC_CLASSES} classes, got {num_classes}"
        )));
    }
    let entries = (0..num_classes)
        .map(|i| {
            let idx = (i * 97) % 216;
            let rgb = [
                (51 * (idx / 36)) as u8,
                (51 * ((idx / 6) % 6)) as u8,
                (51 * (idx % 6)) as u8,
            ];
            (format!("class{i:02}"), rgb)
        })
        .collect();
    Palette::new(entries)
}

#[derive(Clone, Copy)]
enum ShapeKind {
    Rect { half_w: usize, half_h: usize },
    Disc { radius: usize },
}

#[derive(Clone, Copy)]
struct Shape {
    class: u8,
    cx: usize,
    cy: usize,
    kind: ShapeKind,
}

fn span(rng: &mut SplitMix64, full: usize) -> usize {
    let lo = (full / 8).max(1);
    let hi = (full / 3).max(lo);
    lo + rng.next_below((hi - lo + 1) as u64) as usize
}

fn raster(shape: &Shape, map: &mut ClassMap) {
    let (w, h) = (map.width, map.height);
    let (x_lo, x_hi, y_lo, y_hi, r2) = match shape.kind {
        ShapeKind::Rect { half_w, half_h } => (
            shape.cx.saturating_sub(half_w),
            (shape.cx + half_w).min(w - 1),
            shape.cy.saturating_sub(half_h),
            (shape.cy + half_h).min(h - 1),
            None,
        ),
        ShapeKind::Disc { radius } => (
            shape.cx.saturating_sub(radius),
            (shape.cx + radius).min(w - 1),
            shape.cy.saturating_sub(radius),
            (shape.cy + radius).min(h - 1),
            Some((radius * radius) as i64),
        ),
    };
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            if let Some(r2) = r2 {
                let dx = x as i64 - shape.cx as i64;
                let dy = y as i64 - shape.cy as i64;
                if dx * dx + dy * dy > r2 {
                    continue;
                }
            }
            map.indices[y * w + x] = shape.class;
        }
    }
}

/// Generate `n` image/label pairs. Every sample carries one to three shapes
/// of distinct non-background classes; sample `i` is guaranteed to contain
/// class `1 + (i mod (num_classes - 1))`, drawn topmost, so every class
/// appears once `n >= num_classes - 1`. Each sample depends only on `seed`
/// and its own index, never on `n`.
pub fn generate_synthetic(
    n: usize,
    width: usize,
    height: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<SegSample>, DataError> {
    if width == 0 || height == 0 {
        return Err(DataError::Dataset(format!(
            "synthetic size must be positive, got {width}x{height}"
        )));
    }
    let palette = synthetic_palette(num_classes)?;
    let fg = (num_classes - 1) as u64;

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = SplitMix64::new(derive_seed(seed, i as u64, SAMPLE_TAG));
        let count = 1 + rng.next_below(fg.min(3)) as usize;
        let mut shapes = Vec::with_capacity(count);
        let mut used = Vec::with_capacity(count);
        for s in 0..count {
            let class = if s == 0 {
                1 + (i as u64 % fg) as u8
            } else {
                loop {
                    let c = 1 + rng.next_below(fg) as u8;
                    if !used.contains(&c) {
                        break c;
                    }
                }
            };
            used.push(class);
            let kind = if rng.next_below(2) == 0 {
                ShapeKind::Rect {
                    half_w: span(&mut rng, width),
                    half_h: span(&mut rng, height),
                }
            } else {
                ShapeKind::Disc {
                    radius: span(&mut rng, width.min(height)),
                }
            };
            shapes.push(Shape {
                class,
                cx: rng.next_below(width as u64) as usize,
                cy: rng.next_below(height as u64) as usize,
                kind,
            });
        }

        let mut target = ClassMap::new(width, height, vec![0; width * height])?;
        // later shapes overwrite earlier ones; the guaranteed class went
        // first in the list, so draw it last to keep it visible
        for shape in shapes.iter().skip(1).chain(shapes.first()) {
            raster(shape, &mut target);
        }

        let mut pixels = Vec::with_capacity(width * height * 3);
        for &c in &target.indices {
            let rgb = palette.rgb(c as usize).expect("raster stays in palette");
            for ch in rgb {
                let noise = rng.next_below(2 * NOISE_AMPLITUDE as u64 + 1) as i32 - NOISE_AMPLITUDE;
                pixels.push((ch as i32 + noise).clamp(0, 255) as u8);
            }
        }
        samples.push(SegSample::new(
            Image::new(width, height, 3, pixels)?,
            target,
        )?);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_bad_args() {
        assert!(generate_synthetic(0, 32, 32, 4, 1).unwrap().is_empty());
        assert!(generate_synthetic(1, 0, 32, 4, 1).is_err());
        assert!(generate_synthetic(1, 32, 32, 1, 1).is_err());
        assert!(generate_synthetic(1, 32, 32, 300, 1).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(5, 24, 16, 4, 7).unwrap();
        let b = generate_synthetic(5, 24, 16, 4, 7).unwrap();
        let c = generate_synthetic(5, 24, 16, 4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn samples_do_not_depend_on_n() {
        let five = generate_synthetic(5, 24, 16, 4, 7).unwrap();
        let three = generate_synthetic(3, 24, 16, 4, 7).unwrap();
        assert_eq!(&five[..3], &three[..]);
    }

    #[test]
    fn covers_every_class_over_many_samples() {
        let samples = generate_synthetic(100, 32, 32, 5, 3).unwrap();
        let mut seen = [false; 5];
        for s in &samples {
            for &c in &s.target.indices {
                seen[c as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "class histogram has holes: {seen:?}");
    }

    #[test]
    fn guaranteed_class_cycles_with_index() {
        let samples = generate_synthetic(6, 32, 32, 4, 11).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let expect = 1 + (i % 3) as u8;
            assert!(
                s.target.indices.contains(&expect),
                "sample {i} lost its guaranteed class {expect}"
            );
        }
    }

    #[test]
    fn palette_formula_properties() {
        let p = synthetic_palette(216).unwrap();
        assert_eq!(p.len(), 216);
        assert_eq!(p.rgb(0), Some([0, 0, 0]));
        let q = synthetic_palette(4).unwrap();
        // prefix stability: smaller palettes are prefixes of larger ones
        for i in 0..4 {
            assert_eq!(q.rgb(i), p.rgb(i));
        }
    }

    #[test]
    fn targets_stay_in_range_and_images_match_dims() {
        let samples = generate_synthetic(10, 20, 12, 4, 9).unwrap();
        for s in &samples {
            assert_eq!((s.image.width, s.image.height), (20, 12));
            assert!(s.target.indices.iter().all(|&c| c < 4));
        }
    }
}
