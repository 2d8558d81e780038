//! Utility subcommands: standalone model evaluation, prediction
//! rendering, synthetic dataset export, and COCO annotation inspection.

use std::path::PathBuf;

use clap::Args;

use fedseg_core::data::{
    argmax_classes, class_to_rgb, generate_synthetic, parse_coco, synthetic_palette, write_ppm,
    Image, SegSample,
};
use fedseg_core::metrics::Mode;
use fedseg_core::nn::{forward, init_params, FcnConfig};
use fedseg_core::{AnyParamSet, Element, ParamSet};

use crate::config::{dataset_spec_from_args, load_dataset_spec, prepare_out_dir, LoadedData, RunArgs};
use crate::experiment::{evaluate_params, load_params_any};
use crate::CliError;

/// Dataset flags shared by the read-only subcommands.
#[derive(Args, Debug, Default, Clone)]
pub struct DataArgs {
    /// Dataset: `synthetic` or `camvid:<dir>`.
    #[arg(long)]
    pub data: Option<String>,

    /// Held-out evaluation dataset (`camvid:<dir>`).
    #[arg(long)]
    pub eval_data: Option<String>,

    /// Synthetic dataset: number of classes including background.
    #[arg(long)]
    pub classes: Option<usize>,

    /// Synthetic dataset: square image side.
    #[arg(long)]
    pub image_size: Option<usize>,

    /// Synthetic dataset: training sample count.
    #[arg(long)]
    pub train_samples: Option<usize>,

    /// Synthetic dataset: evaluation sample count.
    #[arg(long)]
    pub eval_samples: Option<usize>,

    /// Without --eval-data, every k-th loaded sample is held out.
    #[arg(long)]
    pub holdout_every: Option<usize>,

    /// Seed for synthetic generation.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<LoadedData, CliError> {
        let carrier = RunArgs {
            data: self.data.clone(),
            eval_data: self.eval_data.clone(),
            classes: self.classes,
            image_size: self.image_size,
            train_samples: self.train_samples,
            eval_samples: self.eval_samples,
            holdout_every: self.holdout_every,
            ..RunArgs::default()
        };
        let spec = dataset_spec_from_args(&carrier)?;
        load_dataset_spec(&spec, self.seed)
    }
}

/// Reads the network shape back out of a parameter file: entry count
/// gives the stage count, encoder weight shapes give the channel plan.
pub fn infer_config(params: &AnyParamSet) -> Result<FcnConfig, CliError> {
    match params {
        AnyParamSet::F32(p) => infer_config_from(p),
        AnyParamSet::F64(p) => infer_config_from(p),
    }
}

fn infer_config_from<E: Element>(params: &ParamSet<E>) -> Result<FcnConfig, CliError> {
    let bad = |why: &str| CliError::Config(format!("model file: {why}"));
    if params.len() < 4 || !params.len().is_multiple_of(4) {
        return Err(bad("expected weight and bias per encoder and decoder stage"));
    }
    let stages = params.len() / 4;
    let enc_weight = |i: usize| -> Result<&[usize], CliError> {
        let (name, t) = params.get_index(2 * i);
        if name != format!("enc{i}.weight") || t.shape().len() != 4 {
            return Err(bad("unrecognized parameter layout"));
        }
        Ok(t.shape())
    };
    let first = enc_weight(0)?;
    let mut hidden = vec![first[0]];
    for i in 1..stages {
        hidden.push(enc_weight(i)?[0]);
    }
    let (_, last_dec) = params.get_index(4 * stages - 2);
    if last_dec.shape().len() != 4 {
        return Err(bad("unrecognized parameter layout"));
    }
    let config = FcnConfig {
        in_channels: first[1],
        num_classes: last_dec.shape()[1],
        hidden_channels: hidden,
        kernel_size: first[2],
        seed: 0,
    };
    config.validate().map_err(|e| bad(&e.to_string()))?;
    let reference = init_params::<E>(&config).map_err(|e| bad(&e.to_string()))?;
    reference
        .ensure_compatible(params, "parameters do not form this network")
        .map_err(|e| bad(&e.to_string()))?;
    Ok(config)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// FPS1 model file to evaluate.
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// Mini-batch size for the forward passes.
    #[arg(long = "batch", default_value_t = 8)]
    pub batch_size: u32,

    /// run_id stamped into the printed record (default: model file stem).
    #[arg(long)]
    pub run_id: Option<String>,

    /// Mode label for the record: centralized | local | federated.
    #[arg(long, default_value = "centralized")]
    pub mode: String,
}

/// Evaluates a saved model on the evaluation split and prints the metric
/// record as JSON. Touches nothing on disk.
pub fn run_eval(args: &EvalArgs) -> Result<(), CliError> {
    let mode: Mode = args.mode.parse().map_err(CliError::Config)?;
    let params = load_params_any(&args.model)?;
    let config = infer_config(&params)?;
    let data = args.data.load()?;
    if data.palette.len() != config.num_classes {
        return Err(CliError::Config(format!(
            "model predicts {} classes but the palette has {}",
            config.num_classes,
            data.palette.len()
        )));
    }
    let run_id = args.run_id.clone().unwrap_or_else(|| {
        args.model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "eval".into())
    });
    let record = match &params {
        AnyParamSet::F32(p) => evaluate_params(
            p,
            &config,
            &data.eval,
            &data.palette,
            args.batch_size as usize,
            &run_id,
            mode,
            0,
            0,
            None,
        )?,
        AnyParamSet::F64(p) => evaluate_params(
            p,
            &config,
            &data.eval,
            &data.palette,
            args.batch_size as usize,
            &run_id,
            mode,
            0,
            0,
            None,
        )?,
    };
    let line = serde_json::to_string_pretty(&record)
        .map_err(|e| CliError::Config(format!("record serialization: {e}")))?;
    println!("{line}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// FPS1 model file to render predictions from.
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// Output directory for the PPM files.
    #[arg(long)]
    pub out: PathBuf,

    /// How many evaluation samples to render.
    #[arg(long, default_value_t = 4)]
    pub count: usize,
}

/// Writes `render_{i}.ppm` files showing input and predicted mask side
/// by side for the first evaluation samples.
pub fn run_render(args: &RenderArgs) -> Result<(), CliError> {
    let params = load_params_any(&args.model)?;
    let config = infer_config(&params)?;
    let data = args.data.load()?;
    if data.palette.len() != config.num_classes {
        return Err(CliError::Config(format!(
            "model predicts {} classes but the palette has {}",
            config.num_classes,
            data.palette.len()
        )));
    }
    prepare_out_dir(&args.out)?;
    let written = match &params {
        AnyParamSet::F32(p) => render_with(p, &config, args, &data)?,
        AnyParamSet::F64(p) => render_with(p, &config, args, &data)?,
    };
    println!("wrote {written} renders to {}", args.out.display());
    Ok(())
}

fn render_with<E: Element>(
    params: &ParamSet<E>,
    config: &FcnConfig,
    args: &RenderArgs,
    data: &LoadedData,
) -> Result<usize, CliError> {
    let mut written = 0;
    for (i, sample) in data.eval.iter().take(args.count).enumerate() {
        if sample.image.channels != 3 {
            return Err(CliError::Config(
                "rendering needs 3-channel input images".into(),
            ));
        }
        let (images, _) = fedseg_core::data::to_batch::<E>(&[sample], config.num_classes)?;
        let logits = forward(params, config, &images)?;
        let pred = argmax_classes(&logits)?.remove(0);
        let mask = class_to_rgb(&pred, &data.palette)?;
        let composite = side_by_side(&sample.image, &mask)?;
        std::fs::write(args.out.join(format!("render_{i}.ppm")), write_ppm(&composite))?;
        written += 1;
    }
    Ok(written)
}

/// Two equally sized RGB images joined horizontally.
fn side_by_side(left: &Image, right: &Image) -> Result<Image, CliError> {
    let (w, h) = (left.width, left.height);
    let mut pixels = Vec::with_capacity(w * h * 6);
    for y in 0..h {
        pixels.extend_from_slice(&left.pixels[y * w * 3..(y + 1) * w * 3]);
        pixels.extend_from_slice(&right.pixels[y * w * 3..(y + 1) * w * 3]);
    }
    Ok(Image::new(w * 2, h, 3, pixels)?)
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output directory for the PPM pairs and palette file.
    #[arg(long)]
    pub out: PathBuf,

    /// Number of samples to generate.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,

    /// Square image side.
    #[arg(long, default_value_t = 32)]
    pub image_size: usize,

    /// Number of classes including background.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Materializes a synthetic dataset as PPM files so it can be inspected
/// or fed back through `--data camvid:<dir>`.
pub fn run_gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    let samples: Vec<SegSample> = generate_synthetic(
        args.samples,
        args.image_size,
        args.image_size,
        args.classes,
        args.seed,
    )?;
    let palette = synthetic_palette(args.classes)?;
    fedseg_core::data::save_dataset(&args.out, &samples, &palette)?;
    println!(
        "wrote {} samples ({} classes, {}x{}) to {}",
        samples.len(),
        args.classes,
        args.image_size,
        args.image_size,
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct InspectCocoArgs {
    /// COCO-style JSON annotation file.
    pub file: PathBuf,
}

/// Prints summary statistics for a COCO-subset annotation file.
pub fn run_inspect_coco(args: &InspectCocoArgs) -> Result<(), CliError> {
    let bytes = std::fs::read(&args.file)?;
    let set = parse_coco(&bytes)?;
    println!("images:      {}", set.images.len());
    println!("annotations: {}", set.annotations.len());
    println!("categories:  {}", set.categories.len());
    for cat in &set.categories {
        let boxes: Vec<f64> = set
            .annotations
            .iter()
            .filter(|a| a.category_id == cat.id)
            .map(|a| a.bbox[2] * a.bbox[3])
            .collect();
        let mean = if boxes.is_empty() {
            0.0
        } else {
            boxes.iter().sum::<f64>() / boxes.len() as f64
        };
        println!(
            "  {:<24} {:>6} boxes, mean area {:>10.1}",
            cat.name,
            boxes.len(),
            mean
        );
    }
    Ok(())
}
