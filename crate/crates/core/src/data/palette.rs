//! Class palettes and RGB-to-class mapping.
//!
//! Mapping runs through [`PaletteIndex`], a 16 MiB table indexed by the
//! packed 24-bit color, so the per-pixel cost is one load instead of a
//! palette scan. [`rgb_to_class_reference`] keeps the naive double loop
//! around as the oracle the fast path is checked against.

use crate::error::DataError;

use super::{ClassMap, Image};

/// Ordered `(class name, RGB)` list; the position is the class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    entries: Vec<(String, [u8; 3])>,
}

/// What to do with a pixel whose exact color is not in the palette.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownRgbPolicy {
    /// Fail, naming the color and pixel position.
    Error,
    /// Take the nearest palette color by squared L2 distance (ties go to the
    /// lowest class index). Useful for antialiased source masks.
    NearestL2,
}

impl Palette {
    /// At most 255 classes (class indices are bytes; 255 is reserved).
    pub fn new(entries: Vec<(String, [u8; 3])>) -> Result<Self, DataError> {
        if entries.is_empty() {
            return Err(DataError::Palette("palette must not be empty".into()));
        }
        if entries.len() > 255 {
            return Err(DataError::Palette(format!(
                "at most 255 classes supported, got {}",
                entries.len()
            )));
        }
        for (i, (name, rgb)) in entries.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(DataError::Palette(format!(
                    "class {i} name {name:?} must be non-empty without whitespace"
                )));
            }
            for (j, (other_name, other_rgb)) in entries.iter().enumerate().skip(i + 1) {
                if rgb == other_rgb {
                    return Err(DataError::Palette(format!(
                        "classes {i} and {j} share color {rgb:?}"
                    )));
                }
                if name == other_name {
                    return Err(DataError::Palette(format!(
                        "classes {i} and {j} share name {name:?}"
                    )));
                }
            }
        }
        Ok(Palette { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, [u8; 3])] {
        &self.entries
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.entries.get(class).map(|(n, _)| n.as_str())
    }

    pub fn rgb(&self, class: usize) -> Option<[u8; 3]> {
        self.entries.get(class).map(|(_, c)| *c)
    }

    /// Linear palette scan for an exact color match.
    pub fn index_of(&self, rgb: [u8; 3]) -> Option<usize> {
        self.entries.iter().position(|(_, c)| *c == rgb)
    }

    /// Nearest class by squared L2 distance; lowest index wins ties.
    pub fn nearest(&self, rgb: [u8; 3]) -> usize {
        let mut best = 0usize;
        let mut best_d = u32::MAX;
        for (i, (_, c)) in self.entries.iter().enumerate() {
            let d: u32 = (0..3)
                .map(|k| {
                    let diff = c[k] as i32 - rgb[k] as i32;
                    (diff * diff) as u32
                })
                .sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Parse the text form: one `name R G B` per line, `#` comments and
    /// blank lines ignored, line order = class index.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(DataError::Palette(format!(
                    "line {}: expected `name R G B`, got {line:?}",
                    lineno + 1
                )));
            }
            let mut rgb = [0u8; 3];
            for (slot, field) in rgb.iter_mut().zip(&fields[1..]) {
                *slot = field.parse().map_err(|_| {
                    DataError::Palette(format!(
                        "line {}: bad channel value {field:?}",
                        lineno + 1
                    ))
                })?;
            }
            entries.push((fields[0].to_string(), rgb));
        }
        Palette::new(entries)
    }

    /// Inverse of [`Palette::parse`] for canonical files.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, [r, g, b]) in &self.entries {
            out.push_str(&format!("{name} {r} {g} {b}\n"));
        }
        out
    }

    /// The 32-class CamVid palette, in the checked-in file's order.
    pub fn camvid32() -> Palette {
        Palette::parse(include_str!("camvid32.txt")).expect("embedded palette is valid")
    }
}

const ABSENT: u8 = 0xFF;

/// Palette compiled to a full 24-bit color lookup table.
pub struct PaletteIndex {
    palette: Palette,
    lut: Vec<u8>,
}

impl PaletteIndex {
    pub fn new(palette: Palette) -> PaletteIndex {
        let mut lut = vec![ABSENT; 1 << 24];
        for (i, (_, [r, g, b])) in palette.entries().iter().enumerate() {
            lut[(*r as usize) << 16 | (*g as usize) << 8 | *b as usize] = i as u8;
        }
        PaletteIndex { palette, lut }
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn lookup(&self, rgb: [u8; 3]) -> Option<u8> {
        let v = self.lut[(rgb[0] as usize) << 16 | (rgb[1] as usize) << 8 | rgb[2] as usize];
        (v != ABSENT).then_some(v)
    }

    /// Map a 3-channel image to class indices; the hot path of the module.
    pub fn map_image(&self, image: &Image) -> Result<ClassMap, DataError> {
        self.map_image_with(image, UnknownRgbPolicy::Error)
    }

    pub fn map_image_with(
        &self,
        image: &Image,
        policy: UnknownRgbPolicy,
    ) -> Result<ClassMap, DataError> {
        if image.channels != 3 {
            return Err(DataError::Palette(format!(
                "palette mapping needs 3 channels, image has {}",
                image.channels
            )));
        }
        let mut indices = Vec::with_capacity(image.width * image.height);
        for (i, px) in image.pixels.chunks_exact(3).enumerate() {
            let key = (px[0] as usize) << 16 | (px[1] as usize) << 8 | px[2] as usize;
            let v = self.lut[key];
            if v != ABSENT {
                indices.push(v);
            } else {
                match policy {
                    UnknownRgbPolicy::Error => {
                        return Err(DataError::UnknownRgb(
                            px[0],
                            px[1],
                            px[2],
                            i % image.width,
                            i / image.width,
                        ))
                    }
                    UnknownRgbPolicy::NearestL2 => {
                        indices.push(self.palette.nearest([px[0], px[1], px[2]]) as u8)
                    }
                }
            }
        }
        ClassMap::new(image.width, image.height, indices)
    }
}

/// Map every pixel to the class index of its exact color.
///
/// Builds the lookup table on the fly; callers mapping many images should
/// hold a [`PaletteIndex`] instead.
pub fn rgb_to_class(image: &Image, palette: &Palette) -> Result<ClassMap, DataError> {
    PaletteIndex::new(palette.clone()).map_image(image)
}

/// Pixel-by-pixel palette-scan oracle the vectorized path is tested against.
pub fn rgb_to_class_reference(image: &Image, palette: &Palette) -> Result<ClassMap, DataError> {
    if image.channels != 3 {
        return Err(DataError::Palette(format!(
            "palette mapping needs 3 channels, image has {}",
            image.channels
        )));
    }
    let mut indices = Vec::with_capacity(image.width * image.height);
    for y in 0..image.height {
        for x in 0..image.width {
            let p = (y * image.width + x) * 3;
            let rgb = [image.pixels[p], image.pixels[p + 1], image.pixels[p + 2]];
            match palette.index_of(rgb) {
                Some(c) => indices.push(c as u8),
                None => return Err(DataError::UnknownRgb(rgb[0], rgb[1], rgb[2], x, y)),
            }
        }
    }
    ClassMap::new(image.width, image.height, indices)
}

/// Render a class map back to its palette colors.
pub fn class_to_rgb(map: &ClassMap, palette: &Palette) -> Result<Image, DataError> {
    let mut pixels = Vec::with_capacity(map.indices.len() * 3);
    for &c in &map.indices {
        let rgb = palette.rgb(c as usize).ok_or_else(|| {
            DataError::Palette(format!(
                "class index {c} out of range for palette of {}",
                palette.len()
            ))
        })?;
        pixels.extend_from_slice(&rgb);
    }
    Image::new(map.width, map.height, 3, pixels)
}
