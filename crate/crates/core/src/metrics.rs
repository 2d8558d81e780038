//! Evaluation metrics (box IoU, per-class mask IoU, pixel accuracy) and an
//! append-only JSON-lines metric log.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use crate::data::ClassMap;
use crate::error::MetricsError;

/// Axis-aligned box in corner form, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<BBox, MetricsError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_max < x_min || y_max < y_min {
            return Err(MetricsError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// COCO-style `[x, y, w, h]` to corner form.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<BBox, MetricsError> {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

/// Intersection area over union area. Degenerate unions (both boxes
/// zero-area) give 0, never NaN.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Per-class overlap counts for a prediction/truth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskIouStats {
    /// `intersection / union` per class; `None` when the class appears in
    /// neither map (vacuous union).
    pub per_class: Vec<Option<f64>>,
    pub intersections: Vec<u64>,
    pub unions: Vec<u64>,
    /// Unweighted mean over present classes (macro average).
    pub mean: f64,
    /// Total intersection over total union (micro average).
    pub micro: f64,
}

/// Count per-class intersections and unions between two equally sized maps.
pub fn mask_iou_stats(
    pred: &ClassMap,
    truth: &ClassMap,
    num_classes: usize,
) -> Result<MaskIouStats, MetricsError> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(MetricsError::SizeMismatch(
            pred.width,
            pred.height,
            truth.width,
            truth.height,
        ));
    }
    let mut inter = vec![0u64; num_classes];
    let mut union = vec![0u64; num_classes];
    for (&p, &t) in pred.indices.iter().zip(&truth.indices) {
        let (p, t) = (p as usize, t as usize);
        if p >= num_classes || t >= num_classes {
            return Err(MetricsError::Record(format!(
                "class index {} out of range for {num_classes} classes",
                p.max(t)
            )));
        }
        if p == t {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[t] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().filter_map(|v| *v).collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    let micro = inter.iter().sum::<u64>() as f64 / union.iter().sum::<u64>() as f64;
    Ok(MaskIouStats {
        per_class,
        intersections: inter,
        unions: union,
        mean,
        micro,
    })
}

/// Per-class IoU; `None` marks classes absent from both maps.
pub fn mask_iou_per_class(
    pred: &ClassMap,
    truth: &ClassMap,
    num_classes: usize,
) -> Result<Vec<Option<f64>>, MetricsError> {
    Ok(mask_iou_stats(pred, truth, num_classes)?.per_class)
}

/// Fraction of pixels whose class matches.
pub fn pixel_accuracy(pred: &ClassMap, truth: &ClassMap) -> Result<f64, MetricsError> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(MetricsError::SizeMismatch(
            pred.width,
            pred.height,
            truth.width,
            truth.height,
        ));
    }
    let matches = pred
        .indices
        .iter()
        .zip(&truth.indices)
        .filter(|(p, t)| p == t)
        .count();
    Ok(matches as f64 / pred.indices.len() as f64)
}

/// How a model was trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Centralized,
    Local,
    Federated,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Centralized => "centralized",
            Mode::Local => "local",
            Mode::Federated => "federated",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centralized" => Ok(Mode::Centralized),
            "local" => Ok(Mode::Local),
            "federated" => Ok(Mode::Federated),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// One evaluation snapshot, serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub mode: Mode,
    pub round: u32,
    pub epoch: u32,
    pub loss: f64,
    pub pixel_accuracy: f64,
    pub iou_per_class: Vec<(String, Option<f64>)>,
    /// Macro average over present classes.
    pub iou_mean: f64,
    /// Micro average (total intersection / total union).
    pub iou_micro: f64,
}

impl MetricRecord {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.loss.is_finite() {
            return Err(MetricsError::Record(format!("loss {} not finite", self.loss)));
        }
        if !unit(self.pixel_accuracy) || !unit(self.iou_mean) || !unit(self.iou_micro) {
            return Err(MetricsError::Record(
                "accuracy and IoU aggregates must lie in [0, 1]".into(),
            ));
        }
        for (name, iou) in &self.iou_per_class {
            if let Some(v) = iou {
                if !unit(*v) {
                    return Err(MetricsError::Record(format!(
                        "iou for {name} = {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Append-only JSON-lines sink; each record is one line, flushed on write,
/// never interleaved across threads.
pub struct MetricSink {
    writer: Mutex<Box<dyn Write + Send>>,
}

impl MetricSink {
    pub fn to_file(path: &Path) -> Result<MetricSink, MetricsError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MetricSink::from_writer(file))
    }

    pub fn from_writer(writer: impl Write + Send + 'static) -> MetricSink {
        MetricSink {
            writer: Mutex::new(Box::new(writer)),
        }
    }

    pub fn append(&self, record: &MetricRecord) -> Result<(), MetricsError> {
        record.validate()?;
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut w = self.writer.lock().expect("metric sink poisoned");
        w.write_all(line.as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

/// Append one record to the sink.
pub fn append_metric(sink: &MetricSink, record: &MetricRecord) -> Result<(), MetricsError> {
    sink.append(record)
}

/// Parse a JSON-lines metric log back into records.
pub fn read_metric_log(path: &Path) -> Result<Vec<MetricRecord>, MetricsError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use std::sync::Arc;

    #[test]
    fn box_iou_hand_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(box_iou(&a, &a), 1.0);
        let b = BBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
        assert!((box_iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        let far = BBox::new(10.0, 10.0, 12.0, 12.0).unwrap();
        assert_eq!(box_iou(&a, &far), 0.0);
        // two zero-area points on the same spot: defined as 0
        let p = BBox::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(box_iou(&p, &p), 0.0);
    }

    #[test]
    fn box_construction_rules() {
        assert!(BBox::new(2.0, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, f64::NAN, 1.0, 1.0).is_err());
        let b = BBox::from_xywh(10.0, 20.0, 30.0, 40.0).unwrap();
        assert_eq!((b.x_max, b.y_max), (40.0, 60.0));
        assert_eq!(b.area(), 1200.0);
    }

    #[test]
    fn box_iou_symmetry_and_translation() {
        let mut rng = SplitMix64::new(50);
        for _ in 0..200 {
            let mut coords = [0.0f64; 8];
            for c in coords.iter_mut() {
                *c = rng.next_below(64) as f64;
            }
            let a = BBox::new(
                coords[0],
                coords[1],
                coords[0] + coords[2],
                coords[1] + coords[3],
            )
            .unwrap();
            let b = BBox::new(
                coords[4],
                coords[5],
                coords[4] + coords[6],
                coords[5] + coords[7],
            )
            .unwrap();
            let iou = box_iou(&a, &b);
            assert!((0.0..=1.0).contains(&iou));
            assert_eq!(iou, box_iou(&b, &a));
            // integer translation keeps every term exact
            let (dx, dy) = (rng.next_below(32) as f64, rng.next_below(32) as f64);
            assert_eq!(box_iou(&a.translate(dx, dy), &b.translate(dx, dy)), iou);
        }
    }

    #[test]
    fn mask_iou_hand_case() {
        let pred = ClassMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        let truth = ClassMap::new(2, 2, vec![0, 1, 1, 1]).unwrap();
        let per_class = mask_iou_per_class(&pred, &truth, 2).unwrap();
        assert_eq!(per_class, vec![Some(0.5), Some(2.0 / 3.0)]);
    }

    #[test]
    fn mask_iou_identity_and_absent_classes() {
        let m = ClassMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let per_class = mask_iou_per_class(&m, &m, 3).unwrap();
        assert_eq!(per_class, vec![Some(1.0), Some(1.0), None]);
        let bad = ClassMap::new(2, 2, vec![0, 1, 2, 0]).unwrap();
        assert!(mask_iou_per_class(&m, &bad, 2).is_err());
        let other = ClassMap::new(1, 4, vec![0, 1, 1, 0]).unwrap();
        assert!(mask_iou_per_class(&m, &other, 2).is_err());
    }

    #[test]
    fn pixel_accuracy_hand_cases() {
        let m = ClassMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        assert_eq!(pixel_accuracy(&m, &m).unwrap(), 1.0);
        let inv = ClassMap::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(pixel_accuracy(&m, &inv).unwrap(), 0.0);
        let three = ClassMap::new(2, 2, vec![0, 1, 1, 1]).unwrap();
        assert_eq!(pixel_accuracy(&m, &three).unwrap(), 0.75);
    }

    #[test]
    fn micro_average_equals_pixel_accuracy_over_total_union_identity() {
        let mut rng = SplitMix64::new(8);
        for _ in 0..50 {
            let n = 6 * 6;
            let pred =
                ClassMap::new(6, 6, (0..n).map(|_| rng.next_below(4) as u8).collect()).unwrap();
            let truth =
                ClassMap::new(6, 6, (0..n).map(|_| rng.next_below(4) as u8).collect()).unwrap();
            let stats = mask_iou_stats(&pred, &truth, 4).unwrap();
            let acc = pixel_accuracy(&pred, &truth).unwrap();
            let total_inter: u64 = stats.intersections.iter().sum();
            assert_eq!(total_inter as f64 / n as f64, acc);
            for iou in stats.per_class.iter().flatten() {
                assert!((0.0..=1.0).contains(iou));
            }
            assert!((0.0..=1.0).contains(&stats.mean));
            assert!((0.0..=1.0).contains(&stats.micro));
        }
    }

    fn sample_record(round: u32) -> MetricRecord {
        MetricRecord {
            run_id: "federated-s42".into(),
            mode: Mode::Federated,
            round,
            epoch: 1,
            loss: 0.25,
            pixel_accuracy: 0.9,
            iou_per_class: vec![("bg".into(), Some(0.95)), ("fg".into(), None)],
            iou_mean: 0.95,
            iou_micro: 0.9,
        }
    }

    #[test]
    fn record_validation() {
        assert!(sample_record(1).validate().is_ok());
        let mut r = sample_record(1);
        r.pixel_accuracy = 1.5;
        assert!(r.validate().is_err());
        let mut r = sample_record(1);
        r.loss = f64::INFINITY;
        assert!(r.validate().is_err());
        let mut r = sample_record(1);
        r.iou_per_class[0].1 = Some(-0.1);
        assert!(r.validate().is_err());
    }

    #[test]
    fn log_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let sink = MetricSink::to_file(&path).unwrap();
        let records: Vec<MetricRecord> = (0..5).map(sample_record).collect();
        for r in &records {
            append_metric(&sink, r).unwrap();
        }
        drop(sink);
        let back = read_metric_log(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn concurrent_appends_never_interleave() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let sink = Arc::new(MetricSink::to_file(&path).unwrap());
        let mut handles = Vec::new();
        for t in 0..4 {
            let sink = Arc::clone(&sink);
            handles.push(std::thread::spawn(move || {
                for i in 0..50 {
                    sink.append(&sample_record(t * 100 + i)).unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let back = read_metric_log(&path).unwrap();
        assert_eq!(back.len(), 200);
    }

    #[test]
    fn mode_round_trips_through_strings() {
        for mode in [Mode::Centralized, Mode::Local, Mode::Federated] {
            assert_eq!(mode.to_string().parse::<Mode>().unwrap(), mode);
        }
        assert!("federate".parse::<Mode>().is_err());
    }
}
