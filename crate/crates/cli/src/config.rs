//! Run configuration: flag parsing, optional JSON config file, and
//! resolution into a validated [`RunConfig`].
//!
//! Precedence is flags over file over built-in defaults. The resolved
//! config is echoed as JSON into the output directory, and every seed a
//! run consumes is derived from the single `--seed` value, so a config
//! file reproduces a run exactly.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use fedseg_core::data::{
    generate_synthetic, load_dataset, synthetic_palette, Palette, SegSample,
};
use fedseg_core::fedproto::Hyperparams;
use fedseg_core::metrics::Mode;
use fedseg_core::nn::FcnConfig;
use fedseg_core::rng::derive_seed;
use fedseg_core::Aggregation;

use crate::CliError;

// Domain separators under the user-facing seed, one per consumer.
const TAG_MODEL: u64 = 0x4d4f_444c; // "MODL"
const TAG_SHUFFLE: u64 = 0x5348_5546; // "SHUF"
const TAG_TRAIN: u64 = 0x5452_414e; // "TRAN"
const TAG_EVAL: u64 = 0x4556_414c; // "EVAL"
const TAG_SPLIT: u64 = 0x5350_4c54; // "SPLT"

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// One model on the full training set.
    Centralized,
    /// One independent model per silo.
    Local,
    /// Server plus all federates inside this process.
    Federated,
    /// Federation server half, over TCP.
    Serve,
    /// Single federate half, over TCP.
    Join,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Centralized => "centralized",
            RunMode::Local => "local",
            RunMode::Federated => "federated",
            RunMode::Serve => "serve",
            RunMode::Join => "join",
        }
    }

    /// Mode under which this run's metric records are written.
    pub fn record_mode(self) -> Mode {
        match self {
            RunMode::Centralized => Mode::Centralized,
            RunMode::Local => Mode::Local,
            RunMode::Federated | RunMode::Serve | RunMode::Join => Mode::Federated,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum TransportKind {
    #[value(name = "in-process")]
    #[serde(rename = "in-process")]
    InProcess,
    #[value(name = "tcp")]
    #[serde(rename = "tcp")]
    Tcp,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationArg {
    Mean,
    Weighted,
}

impl AggregationArg {
    pub fn to_core(self) -> Aggregation {
        match self {
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::Weighted => Aggregation::Weighted,
        }
    }
}

/// The flag surface. Every field is optional; the same struct describes
/// a JSON config file, so one merge routine covers both sources.
#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// centralized | local | federated | serve | join
    #[arg(long, value_enum)]
    pub mode: Option<RunMode>,

    /// Dataset: `synthetic`, `camvid:<dir>`, or `coco:<file>`.
    #[arg(long)]
    pub data: Option<String>,

    /// Held-out evaluation dataset (`camvid:<dir>`); defaults to a
    /// deterministic holdout from the training data.
    #[arg(long)]
    pub eval_data: Option<String>,

    /// Number of data silos (federates).
    #[arg(long = "silos")]
    #[serde(rename = "silos")]
    pub n_silos: Option<usize>,

    /// Federated rounds.
    #[arg(long)]
    pub rounds: Option<u32>,

    /// Local epochs per round; total epochs for centralized and local modes.
    #[arg(long)]
    pub epochs: Option<u32>,

    /// SGD learning rate.
    #[arg(long)]
    pub lr: Option<f64>,

    /// Mini-batch size.
    #[arg(long = "batch")]
    #[serde(rename = "batch")]
    pub batch_size: Option<u32>,

    /// Master seed; everything random derives from it.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory for models, metrics, and the config echo.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Transport for federated mode: in-process | tcp.
    #[arg(long, value_enum)]
    pub transport: Option<TransportKind>,

    /// Listen address for serve mode, e.g. 127.0.0.1:7440 (port 0 picks
    /// a free port; the bound address lands in listen_addr.txt).
    #[arg(long)]
    pub listen: Option<String>,

    /// Server address for join mode.
    #[arg(long)]
    pub connect: Option<String>,

    /// Which silo this federate owns in join mode.
    #[arg(long)]
    pub silo_index: Option<usize>,

    /// mean | weighted
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,

    /// Parameter precision: f32 | f64.
    #[arg(long, value_enum)]
    pub dtype: Option<DtypeArg>,

    /// Hidden channel widths, comma separated; each adds a stride-2
    /// stage and its mirror.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,

    /// Convolution kernel size (odd).
    #[arg(long)]
    pub kernel: Option<usize>,

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

    /// Receive timeout for protocol messages, in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

macro_rules! take {
    ($dst:ident, $src:ident, $($f:ident),+ $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )+
    };
}

impl RunArgs {
    /// Overlays `src` onto `self`: present fields win.
    fn absorb(&mut self, src: &RunArgs) {
        take!(
            self, src, mode, data, eval_data, n_silos, rounds, epochs, lr, batch_size, seed,
            out, transport, listen, connect, silo_index, aggregation, dtype, hidden, kernel,
            classes, image_size, train_samples, eval_samples, holdout_every, timeout_secs,
        );
    }

    /// Resolves file plus flags into a validated config.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut merged = RunArgs::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config file {}: {e}", path.display()))
            })?;
            let from_file: RunArgs = serde_json::from_str(&text).map_err(|e| {
                CliError::Config(format!("config file {}: {e}", path.display()))
            })?;
            merged.absorb(&from_file);
        }
        merged.absorb(self);
        RunConfig::from_args(merged)
    }
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synthetic {
        classes: usize,
        image_size: usize,
        train_samples: usize,
        eval_samples: usize,
    },
    Camvid {
        dir: PathBuf,
        eval_dir: Option<PathBuf>,
        holdout_every: usize,
    },
    /// Bounding-box annotations; readable by `inspect-coco` only, since
    /// there is no detection training mode.
    Coco { file: PathBuf },
}

pub fn parse_data_spec(s: &str) -> Result<(String, Option<PathBuf>), CliError> {
    if s == "synthetic" {
        return Ok(("synthetic".into(), None));
    }
    if let Some(dir) = s.strip_prefix("camvid:") {
        return Ok(("camvid".into(), Some(PathBuf::from(dir))));
    }
    if let Some(file) = s.strip_prefix("coco:") {
        return Ok(("coco".into(), Some(PathBuf::from(file))));
    }
    Err(CliError::Config(format!(
        "unrecognized dataset {s:?}; expected synthetic, camvid:<dir>, or coco:<file>"
    )))
}

/// A fully resolved, validated run description.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub mode: RunMode,
    pub dataset: DatasetSpec,
    pub n_silos: usize,
    pub rounds: u32,
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub transport: TransportKind,
    pub listen: Option<String>,
    pub connect: Option<String>,
    pub silo_index: Option<usize>,
    pub aggregation: AggregationArg,
    pub dtype: DtypeArg,
    pub hidden: Vec<usize>,
    pub kernel: usize,
    pub timeout_secs: u64,
}

/// Builds a [`DatasetSpec`] from the dataset-related fields of `a`,
/// defaulting to the synthetic generator.
pub(crate) fn dataset_spec_from_args(a: &RunArgs) -> Result<DatasetSpec, CliError> {
    let (data_kind, data_path) = parse_data_spec(a.data.as_deref().unwrap_or("synthetic"))?;
    match data_kind.as_str() {
        "synthetic" => Ok(DatasetSpec::Synthetic {
            classes: a.classes.unwrap_or(4),
            image_size: a.image_size.unwrap_or(32),
            train_samples: a.train_samples.unwrap_or(256),
            eval_samples: a.eval_samples.unwrap_or(64),
        }),
        "camvid" => {
            let eval_dir = match &a.eval_data {
                None => None,
                Some(s) => {
                    let (kind, path) = parse_data_spec(s)?;
                    if kind != "camvid" {
                        return Err(CliError::Config(
                            "--eval-data must be a camvid:<dir> dataset".into(),
                        ));
                    }
                    path
                }
            };
            Ok(DatasetSpec::Camvid {
                dir: data_path.expect("camvid path"),
                eval_dir,
                holdout_every: a.holdout_every.unwrap_or(5),
            })
        }
        _ => Ok(DatasetSpec::Coco { file: data_path.expect("coco path") }),
    }
}

impl RunConfig {
    fn from_args(a: RunArgs) -> Result<RunConfig, CliError> {
        let mode = a
            .mode
            .ok_or_else(|| CliError::Config("--mode is required".into()))?;
        let dataset = dataset_spec_from_args(&a)?;
        let seed = a.seed.unwrap_or(7);
        let transport = a.transport.unwrap_or(match mode {
            RunMode::Serve | RunMode::Join => TransportKind::Tcp,
            _ => TransportKind::InProcess,
        });
        let cfg = RunConfig {
            mode,
            dataset,
            n_silos: a.n_silos.unwrap_or(2),
            rounds: a.rounds.unwrap_or(50),
            epochs: a.epochs.unwrap_or(1),
            batch_size: a.batch_size.unwrap_or(8),
            learning_rate: a.lr.unwrap_or(0.5),
            seed,
            out: a
                .out
                .unwrap_or_else(|| PathBuf::from(format!("runs/{}-s{}", mode.as_str(), seed))),
            transport,
            listen: a.listen,
            connect: a.connect,
            silo_index: a.silo_index,
            aggregation: a.aggregation.unwrap_or(AggregationArg::Mean),
            dtype: a.dtype.unwrap_or(DtypeArg::F32),
            hidden: a.hidden.unwrap_or_else(|| vec![8, 16]),
            kernel: a.kernel.unwrap_or(3),
            timeout_secs: a.timeout_secs.unwrap_or(120),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if matches!(self.dataset, DatasetSpec::Coco { .. }) {
            return Err(CliError::Config(
                "coco datasets carry boxes, not masks; use `fedseg inspect-coco` instead"
                    .into(),
            ));
        }
        if self.n_silos == 0 {
            return Err(CliError::Config("--silos must be at least 1".into()));
        }
        self.hyperparams()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.hidden.is_empty() {
            return Err(CliError::Config("--hidden needs at least one stage".into()));
        }
        if let DatasetSpec::Synthetic { image_size, classes, .. } = &self.dataset {
            let stride = 1usize << self.hidden.len();
            if image_size % stride != 0 {
                return Err(CliError::Config(format!(
                    "--image-size {image_size} must be divisible by the total stride {stride}"
                )));
            }
            if *classes < 2 {
                return Err(CliError::Config("--classes must be at least 2".into()));
            }
        }
        match self.mode {
            RunMode::Serve => {
                if self.listen.is_none() {
                    return Err(CliError::Config("serve mode requires --listen".into()));
                }
            }
            RunMode::Join => {
                if self.connect.is_none() {
                    return Err(CliError::Config("join mode requires --connect".into()));
                }
                let idx = self.silo_index.ok_or_else(|| {
                    CliError::Config("join mode requires --silo-index".into())
                })?;
                if idx >= self.n_silos {
                    return Err(CliError::Config(format!(
                        "--silo-index {idx} out of range for {} silos",
                        self.n_silos
                    )));
                }
            }
            _ => {}
        }
        if matches!(self.mode, RunMode::Serve | RunMode::Join)
            && self.transport == TransportKind::InProcess
        {
            return Err(CliError::Config(
                "serve and join modes run across processes; --transport tcp only".into(),
            ));
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        format!("{}-s{}", self.mode.record_mode(), self.seed)
    }

    /// Model description; `num_classes` comes from the loaded palette.
    pub fn fcn_config(&self, num_classes: usize) -> FcnConfig {
        FcnConfig {
            in_channels: 3,
            num_classes,
            hidden_channels: self.hidden.clone(),
            kernel_size: self.kernel,
            seed: derive_seed(self.seed, TAG_MODEL, 0),
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            epochs: self.epochs,
            batch_size: self.batch_size,
            rounds: self.rounds,
            learning_rate: self.learning_rate,
            base_seed: derive_seed(self.seed, TAG_SHUFFLE, 0),
        }
    }

    /// Seed for [`fedseg_core::data::partition`]; hashing in the silo
    /// count keeps different partitionings decorrelated.
    pub fn partition_seed(&self) -> u64 {
        self.partition_seed_for(self.n_silos)
    }

    /// Partition seed for an explicit silo count. The centralized driver
    /// trains on a 1-way partition, so its sample order matches a
    /// single-federate session exactly.
    pub fn partition_seed_for(&self, n_silos: usize) -> u64 {
        derive_seed(self.seed, TAG_SPLIT, n_silos as u64)
    }

    pub fn timeout(&self) -> Option<std::time::Duration> {
        (self.timeout_secs > 0).then(|| std::time::Duration::from_secs(self.timeout_secs))
    }

    /// Loads or generates the train and evaluation splits.
    pub fn load_data(&self) -> Result<LoadedData, CliError> {
        load_dataset_spec(&self.dataset, self.seed)
    }
}

pub struct LoadedData {
    pub train: Vec<SegSample>,
    pub eval: Vec<SegSample>,
    pub palette: Palette,
}

pub fn load_dataset_spec(spec: &DatasetSpec, seed: u64) -> Result<LoadedData, CliError> {
    match spec {
        DatasetSpec::Synthetic { classes, image_size, train_samples, eval_samples } => {
            let train = generate_synthetic(
                *train_samples,
                *image_size,
                *image_size,
                *classes,
                derive_seed(seed, TAG_TRAIN, 0),
            )?;
            let eval = generate_synthetic(
                *eval_samples,
                *image_size,
                *image_size,
                *classes,
                derive_seed(seed, TAG_EVAL, 0),
            )?;
            Ok(LoadedData { train, eval, palette: synthetic_palette(*classes)? })
        }
        DatasetSpec::Camvid { dir, eval_dir, holdout_every } => {
            let (samples, palette) = load_dataset(dir)?;
            match eval_dir {
                Some(ed) => {
                    let (eval, eval_palette) = load_dataset(ed)?;
                    if eval_palette.to_text() != palette.to_text() {
                        return Err(CliError::Config(
                            "train and eval datasets use different palettes".into(),
                        ));
                    }
                    Ok(LoadedData { train: samples, eval, palette })
                }
                None => {
                    let k = (*holdout_every).max(2);
                    let mut train = Vec::new();
                    let mut eval = Vec::new();
                    for (i, s) in samples.into_iter().enumerate() {
                        if (i + 1) % k == 0 {
                            eval.push(s);
                        } else {
                            train.push(s);
                        }
                    }
                    Ok(LoadedData { train, eval, palette })
                }
            }
        }
        DatasetSpec::Coco { .. } => Err(CliError::Config(
            "coco datasets cannot be loaded as segmentation samples".into(),
        )),
    }
}

/// Resolves a path for writing, creating parent directories.
pub fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(pairs: &[(&str, &str)]) -> RunArgs {
        let mut v = vec!["fedseg".to_string()];
        for (k, val) in pairs {
            v.push(format!("--{k}"));
            v.push(val.to_string());
        }
        use clap::Parser;
        #[derive(Parser)]
        struct W {
            #[clap(flatten)]
            run: RunArgs,
        }
        W::parse_from(v).run
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = args(&[("mode", "federated")]).resolve().unwrap();
        assert_eq!(cfg.n_silos, 2);
        assert_eq!(cfg.rounds, 50);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.transport, TransportKind::InProcess);
        assert!(matches!(
            cfg.dataset,
            DatasetSpec::Synthetic { classes: 4, image_size: 32, train_samples: 256, eval_samples: 64 }
        ));
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.json");
        std::fs::write(
            &file,
            r#"{"mode": "centralized", "epochs": 9, "lr": 0.5, "silos": 4}"#,
        )
        .unwrap();
        let mut a = args(&[("epochs", "3")]);
        a.config = Some(file);
        let cfg = a.resolve().unwrap();
        assert_eq!(cfg.mode, RunMode::Centralized);
        assert_eq!(cfg.epochs, 3, "flag beats file");
        assert_eq!(cfg.learning_rate, 0.5, "file beats default");
        assert_eq!(cfg.n_silos, 4);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.json");
        std::fs::write(&file, r#"{"mode": "local", "leaning_rate": 1}"#).unwrap();
        let a = RunArgs { config: Some(file), ..RunArgs::default() };
        assert!(matches!(a.resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn mode_specific_requirements() {
        assert!(args(&[]).resolve().is_err(), "mode required");
        assert!(args(&[("mode", "serve")]).resolve().is_err(), "listen required");
        assert!(args(&[("mode", "join")]).resolve().is_err(), "connect required");
        assert!(
            args(&[("mode", "join"), ("connect", "127.0.0.1:1")]).resolve().is_err(),
            "silo index required"
        );
        assert!(args(&[
            ("mode", "join"),
            ("connect", "127.0.0.1:1"),
            ("silo-index", "5"),
            ("silos", "2"),
        ])
        .resolve()
        .is_err());
        assert!(args(&[("mode", "serve"), ("listen", "127.0.0.1:0")]).resolve().is_ok());
    }

    #[test]
    fn bad_numbers_are_config_errors() {
        assert!(args(&[("mode", "federated"), ("rounds", "0")]).resolve().is_err());
        assert!(args(&[("mode", "federated"), ("lr", "0")]).resolve().is_err());
        assert!(args(&[("mode", "federated"), ("batch", "0")]).resolve().is_err());
        assert!(args(&[("mode", "federated"), ("image-size", "30")]).resolve().is_err());
        assert!(args(&[("mode", "federated"), ("silos", "0")]).resolve().is_err());
    }

    #[test]
    fn coco_cannot_be_trained_on() {
        let e = args(&[("mode", "centralized"), ("data", "coco:x.json")])
            .resolve()
            .unwrap_err();
        assert!(e.to_string().contains("inspect-coco"));
    }

    #[test]
    fn synthetic_splits_are_disjoint_streams() {
        let cfg = args(&[("mode", "centralized")]).resolve().unwrap();
        let data = cfg.load_data().unwrap();
        assert_eq!(data.train.len(), 256);
        assert_eq!(data.eval.len(), 64);
        assert_eq!(data.palette.len(), 4);
        // Same index, different split, different content.
        assert_ne!(data.train[0].image.pixels, data.eval[0].image.pixels);
    }

    #[test]
    fn run_id_reflects_record_mode_and_seed() {
        let cfg = args(&[("mode", "federated"), ("seed", "11")]).resolve().unwrap();
        assert_eq!(cfg.run_id(), "federated-s11");
        let cfg = args(&[
            ("mode", "serve"),
            ("listen", "127.0.0.1:0"),
            ("seed", "11"),
        ])
        .resolve()
        .unwrap();
        assert_eq!(cfg.run_id(), "federated-s11", "serve logs as federated");
    }
}
