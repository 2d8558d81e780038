//! On-disk dataset layout: a directory of paired `img_NNNN.ppm` /
//! `lbl_NNNN.ppm` files (1-based numbering) plus a `palette.txt` describing
//! the label colors.

use std::fs;
use std::path::Path;

use crate::error::DataError;

use super::{class_to_rgb, load_ppm, write_ppm, Palette, PaletteIndex, SegSample};

/// Write samples and palette to `dir`, creating it if needed. Labels are
/// rendered to their palette colors so the pairs view cleanly in any image
/// tool.
pub fn save_dataset(dir: &Path, samples: &[SegSample], palette: &Palette) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("palette.txt"), palette.to_text())?;
    for (i, sample) in samples.iter().enumerate() {
        let n = i + 1;
        fs::write(
            dir.join(format!("img_{n:04}.ppm")),
            write_ppm(&sample.image),
        )?;
        let label = class_to_rgb(&sample.target, palette)?;
        fs::write(dir.join(format!("lbl_{n:04}.ppm")), write_ppm(&label))?;
    }
    Ok(())
}

/// Load a dataset directory written by [`save_dataset`] (or hand-assembled
/// in the same layout). Pairs are returned in filename order.
pub fn load_dataset(dir: &Path) -> Result<(Vec<SegSample>, Palette), DataError> {
    let palette_text = fs::read_to_string(dir.join("palette.txt"))
        .map_err(|e| DataError::Dataset(format!("{}: palette.txt: {e}", dir.display())))?;
    let palette = Palette::parse(&palette_text)?;
    let index = PaletteIndex::new(palette.clone());

    let mut image_names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|name| {
            name.strip_prefix("img_")
                .and_then(|rest| rest.strip_suffix(".ppm"))
                .is_some_and(|stem| !stem.is_empty() && stem.bytes().all(|b| b.is_ascii_digit()))
        })
        .collect();
    image_names.sort();

    let mut samples = Vec::with_capacity(image_names.len());
    for name in image_names {
        let label_name = format!("lbl_{}", &name["img_".len()..]);
        let image = load_ppm(&fs::read(dir.join(&name))?)
            .map_err(|e| DataError::Dataset(format!("{name}: {e}")))?;
        let label_bytes = fs::read(dir.join(&label_name))
            .map_err(|_| DataError::Dataset(format!("{name} has no matching {label_name}")))?;
        let label = load_ppm(&label_bytes)
            .map_err(|e| DataError::Dataset(format!("{label_name}: {e}")))?;
        let target = index
            .map_image(&label)
            .map_err(|e| DataError::Dataset(format!("{label_name}: {e}")))?;
        samples.push(
            SegSample::new(image, target)
                .map_err(|e| DataError::Dataset(format!("{name}: {e}")))?,
        );
    }
    Ok((samples, palette))
}
