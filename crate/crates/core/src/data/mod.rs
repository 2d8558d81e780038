//! Dataset plumbing: image and class-map containers, deterministic silo
//! partitioning, epoch batching, and the bridges that turn samples into
//! training tensors.

pub mod coco;
pub mod dataset;
pub mod palette;
pub mod ppm;
pub mod synthetic;

pub use coco::{parse_coco, CocoAnnotation, CocoAnnotationSet, CocoCategory, CocoImage};
pub use dataset::{load_dataset, save_dataset};
pub use palette::{
    class_to_rgb, rgb_to_class, rgb_to_class_reference, Palette, PaletteIndex, UnknownRgbPolicy,
};
pub use ppm::{load_ppm, write_ppm};
pub use synthetic::{generate_synthetic, synthetic_palette};

use crate::error::DataError;
use crate::rng::SplitMix64;
use crate::tensor::{Element, Tensor};

/// 8-bit raster, 1 (gray) or 3 (RGB) channels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::Dataset(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(DataError::Dataset(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(DataError::Dataset(format!(
                "expected {} pixel bytes, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// `[channels, H, W]` tensor with byte values scaled to `[0, 1]`.
    pub fn to_tensor<E: Element>(&self) -> Tensor<E> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut data = vec![E::ZERO; c * h * w];
        for y in 0..h {
            for x in 0..w {
                let px = (y * w + x) * c;
                for ch in 0..c {
                    data[(ch * h + y) * w + x] =
                        E::from_f64(self.pixels[px + ch] as f64 / 255.0);
                }
            }
        }
        Tensor::new(vec![c, h, w], data).expect("sized above")
    }
}

/// Per-pixel class indices. Limited to 255 classes so palettes can be
/// compiled into a byte lookup table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    pub width: usize,
    pub height: usize,
    pub indices: Vec<u8>,
}

impl ClassMap {
    pub fn new(width: usize, height: usize, indices: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::Dataset(format!(
                "class map dimensions must be positive, got {width}x{height}"
            )));
        }
        if indices.len() != width * height {
            return Err(DataError::Dataset(format!(
                "expected {} class indices, got {}",
                width * height,
                indices.len()
            )));
        }
        Ok(ClassMap {
            width,
            height,
            indices,
        })
    }

    pub fn max_index(&self) -> u8 {
        self.indices.iter().copied().max().unwrap_or(0)
    }
}

/// One training pair: image and its ground-truth class map, same size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegSample {
    pub image: Image,
    pub target: ClassMap,
}

impl SegSample {
    pub fn new(image: Image, target: ClassMap) -> Result<Self, DataError> {
        if image.width != target.width || image.height != target.height {
            return Err(DataError::Dataset(format!(
                "image {}x{} and target {}x{} differ",
                image.width, image.height, target.width, target.height
            )));
        }
        Ok(SegSample { image, target })
    }
}

/// One federate's share of the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Silo {
    pub id: usize,
    pub samples: Vec<SegSample>,
}

/// Seeded shuffle of `0..n` followed by round-robin assignment. Silo `j`
/// receives the shuffled positions `j, j + n_silos, ...`, so sizes differ by
/// at most one and the silos partition the input exactly.
pub fn partition_indices(n: usize, n_silos: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if n_silos == 0 {
        return Err(DataError::Dataset("cannot partition into 0 silos".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let mut silos = vec![Vec::with_capacity(n / n_silos + 1); n_silos];
    for (i, idx) in order.into_iter().enumerate() {
        silos[i % n_silos].push(idx);
    }
    Ok(silos)
}

/// Deterministically split `samples` into `n_silos` disjoint silos.
pub fn partition(samples: &[SegSample], n_silos: usize, seed: u64) -> Result<Vec<Silo>, DataError> {
    let index_sets = partition_indices(samples.len(), n_silos, seed)?;
    Ok(index_sets
        .into_iter()
        .enumerate()
        .map(|(id, idxs)| Silo {
            id,
            samples: idxs.iter().map(|&i| samples[i].clone()).collect(),
        })
        .collect())
}

/// Shuffled epoch order over `n` samples, chunked into batches; the final
/// short batch is kept.
pub fn batch_order(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 {
        return Err(DataError::Dataset("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(epoch_seed).shuffle(&mut order);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// One epoch of batches over a silo, deterministic per `epoch_seed`.
pub fn batches(
    silo: &Silo,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<Vec<&SegSample>>, DataError> {
    let order = batch_order(silo.samples.len(), batch_size, epoch_seed)?;
    Ok(order
        .into_iter()
        .map(|idxs| idxs.into_iter().map(|i| &silo.samples[i]).collect())
        .collect())
}

/// One-vs-all probability planes: `[num_classes, H, W]` with a single 1.0
/// per pixel at its class index.
pub fn class_to_onehot<E: Element>(
    map: &ClassMap,
    num_classes: usize,
) -> Result<Tensor<E>, DataError> {
    let (w, h) = (map.width, map.height);
    let mut data = vec![E::ZERO; num_classes * h * w];
    for (i, &c) in map.indices.iter().enumerate() {
        let c = c as usize;
        if c >= num_classes {
            return Err(DataError::Dataset(format!(
                "class index {c} out of range for {num_classes} classes"
            )));
        }
        data[c * h * w + i] = E::ONE;
    }
    Tensor::new(vec![num_classes, h, w], data)
        .map_err(|e| DataError::Dataset(e.to_string()))
}

/// Stack samples into `(images [N,C,H,W], targets [N,num_classes,H,W])`.
/// All samples must share one size.
pub fn to_batch<E: Element>(
    samples: &[&SegSample],
    num_classes: usize,
) -> Result<(Tensor<E>, Tensor<E>), DataError> {
    if samples.is_empty() {
        return Err(DataError::Dataset("cannot batch zero samples".into()));
    }
    let (w, h, c) = (
        samples[0].image.width,
        samples[0].image.height,
        samples[0].image.channels,
    );
    let n = samples.len();
    let mut images = Vec::with_capacity(n * c * h * w);
    let mut targets = Vec::with_capacity(n * num_classes * h * w);
    for s in samples {
        if s.image.width != w || s.image.height != h || s.image.channels != c {
            return Err(DataError::Dataset(
                "batch samples must share image dimensions".into(),
            ));
        }
        images.extend(s.image.to_tensor::<E>().into_data());
        targets.extend(class_to_onehot::<E>(&s.target, num_classes)?.into_data());
    }
    Ok((
        Tensor::new(vec![n, c, h, w], images).map_err(|e| DataError::Dataset(e.to_string()))?,
        Tensor::new(vec![n, num_classes, h, w], targets)
            .map_err(|e| DataError::Dataset(e.to_string()))?,
    ))
}

/// Per-pixel argmax over the class axis of `[N, C, H, W]` logits; ties go to
/// the lowest class index.
pub fn argmax_classes<E: Element>(logits: &Tensor<E>) -> Result<Vec<ClassMap>, DataError> {
    let (n, c, h, w) = logits
        .dims4("argmax_classes")
        .map_err(|e| DataError::Dataset(e.to_string()))?;
    if c == 0 || c > 255 {
        return Err(DataError::Dataset(format!(
            "class axis must have 1..=255 entries, got {c}"
        )));
    }
    let data = logits.data();
    let mut maps = Vec::with_capacity(n);
    for ni in 0..n {
        let mut indices = vec![0u8; h * w];
        let base = ni * c * h * w;
        for (i, slot) in indices.iter_mut().enumerate() {
            let mut best = data[base + i];
            let mut best_c = 0u8;
            for ci in 1..c {
                let v = data[base + ci * h * w + i];
                if v > best {
                    best = v;
                    best_c = ci as u8;
                }
            }
            *slot = best_c;
        }
        maps.push(ClassMap::new(w, h, indices)?);
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sample(tag: u8) -> SegSample {
        let image = Image::new(2, 2, 3, vec![tag; 12]).unwrap();
        let target = ClassMap::new(2, 2, vec![0, 1, 0, 1]).unwrap();
        SegSample::new(image, target).unwrap()
    }

    #[test]
    fn image_and_map_invariants() {
        assert!(Image::new(2, 2, 3, vec![0; 12]).is_ok());
        assert!(Image::new(2, 2, 3, vec![0; 11]).is_err());
        assert!(Image::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(Image::new(0, 2, 3, vec![]).is_err());
        assert!(ClassMap::new(2, 2, vec![0; 3]).is_err());
        let img = Image::new(2, 1, 3, vec![0; 6]).unwrap();
        let map = ClassMap::new(1, 2, vec![0, 0]).unwrap();
        assert!(SegSample::new(img, map).is_err());
    }

    #[test]
    fn partition_367_into_2_gives_184_183() {
        let silos = partition_indices(367, 2, 9).unwrap();
        let mut sizes: Vec<usize> = silos.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![183, 184]);
    }

    #[test]
    fn partition_disjoint_covering_balanced() {
        for &(n, k) in &[(10usize, 3usize), (367, 2), (100, 7), (5, 8), (0, 2)] {
            let silos = partition_indices(n, k, 123).unwrap();
            assert_eq!(silos.len(), k);
            let mut seen = vec![false; n];
            for silo in &silos {
                for &i in silo {
                    assert!(!seen[i], "index {i} assigned twice");
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "not all samples covered");
            let sizes: Vec<usize> = silos.iter().map(Vec::len).collect();
            let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(max - min <= 1, "unbalanced sizes {sizes:?}");
        }
    }

    #[test]
    fn partition_deterministic_and_seed_sensitive() {
        let a = partition_indices(100, 3, 7).unwrap();
        let b = partition_indices(100, 3, 7).unwrap();
        let c = partition_indices(100, 3, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(partition_indices(10, 0, 1).is_err());
    }

    #[test]
    fn single_silo_is_shuffled_input() {
        let samples: Vec<SegSample> = (0..5).map(|i| tiny_sample(i as u8 * 10)).collect();
        let silos = partition(&samples, 1, 3).unwrap();
        assert_eq!(silos.len(), 1);
        assert_eq!(silos[0].samples.len(), 5);
        let order = partition_indices(5, 1, 3).unwrap();
        for (got, &idx) in silos[0].samples.iter().zip(&order[0]) {
            assert_eq!(got, &samples[idx]);
        }
    }

    #[test]
    fn batches_cover_each_sample_once_and_keep_short_tail() {
        let order = batch_order(7, 3, 99).unwrap();
        assert_eq!(order.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 1]);
        let mut all: Vec<usize> = order.concat();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert_eq!(batch_order(7, 3, 99).unwrap(), order);
        assert!(batch_order(7, 0, 99).is_err());
    }

    #[test]
    fn onehot_single_pixel() {
        let map = ClassMap::new(1, 1, vec![2]).unwrap();
        let t = class_to_onehot::<f64>(&map, 4).unwrap();
        assert_eq!(t.shape(), [4, 1, 1]);
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(class_to_onehot::<f64>(&map, 2).is_err());
    }

    #[test]
    fn onehot_sums_to_one_and_argmax_inverts() {
        let map = ClassMap::new(3, 2, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let t = class_to_onehot::<f32>(&map, 3).unwrap();
        for i in 0..6 {
            let s: f32 = (0..3).map(|c| t.data()[c * 6 + i]).sum();
            assert_eq!(s, 1.0);
        }
        let batch = Tensor::new(vec![1, 3, 2, 3], t.into_data()).unwrap();
        let maps = argmax_classes(&batch).unwrap();
        assert_eq!(maps[0], map);
    }

    #[test]
    fn to_batch_shapes_and_normalization() {
        let s = tiny_sample(255);
        let refs = vec![&s, &s];
        let (images, targets) = to_batch::<f64>(&refs, 2).unwrap();
        assert_eq!(images.shape(), [2, 3, 2, 2]);
        assert_eq!(targets.shape(), [2, 2, 2, 2]);
        assert!(images.data().iter().all(|&v| v == 1.0));
        assert!(to_batch::<f64>(&[], 2).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_class_on_ties() {
        let logits = Tensor::new(vec![1, 3, 1, 1], vec![0.5f32, 0.5, 0.1]).unwrap();
        let maps = argmax_classes(&logits).unwrap();
        assert_eq!(maps[0].indices, vec![0]);
    }
}
