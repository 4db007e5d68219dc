//! Confusion counts and the overlap metrics derived from them.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One-vs-rest voxel counts for a single class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

pub fn confusion_counts(pred: &[u8], gt: &[u8], class: u8) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("prediction has {} voxels, ground truth {}", pred.len(), gt.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p == class, g == class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Which metrics fell back to the 0/0 convention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    /// Class absent from both prediction and ground truth (DSC and JI set to 1).
    pub empty: bool,
    pub sens: bool,
    pub spec: bool,
    pub prec: bool,
}

impl UndefinedFlags {
    pub fn any(&self) -> bool {
        self.empty || self.sens || self.spec || self.prec
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub dsc: f64,
    pub ji: f64,
    pub sens: f64,
    pub spec: f64,
    pub prec: f64,
    pub undefined: UndefinedFlags,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (1.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// DSC, JI, sensitivity, specificity and precision; any 0/0 reads as 1 and is flagged.
pub fn metrics_from_counts(c: &ConfusionCounts) -> ClassMetrics {
    let (dsc, empty) = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    let (ji, _) = ratio(c.tp, c.tp + c.fp + c.fn_);
    let (sens, su) = ratio(c.tp, c.tp + c.fn_);
    let (spec, pu) = ratio(c.tn, c.tn + c.fp);
    let (prec, ru) = ratio(c.tp, c.tp + c.fp);
    ClassMetrics { dsc, ji, sens, spec, prec, undefined: UndefinedFlags { empty, sens: su, spec: pu, prec: ru } }
}

/// Metrics of one evaluated volume, one entry per foreground class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeMetrics {
    pub name: String,
    pub classes: Vec<ClassEntry>,
    pub inference_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class: u8,
    pub counts: ConfusionCounts,
    pub metrics: ClassMetrics,
}

impl VolumeMetrics {
    /// Counts and metrics of classes `1..num_classes` for one volume.
    pub fn compute(name: impl Into<String>, pred: &[u8], gt: &[u8], num_classes: usize, inference_seconds: f64) -> Result<Self> {
        let classes = (1..num_classes as u8)
            .map(|k| {
                let counts = confusion_counts(pred, gt, k)?;
                Ok(ClassEntry { class: k, counts, metrics: metrics_from_counts(&counts) })
            })
            .collect::<Result<_>>()?;
        Ok(Self { name: name.into(), classes, inference_seconds })
    }
}

/// Mean metrics of one class over a set of volumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub class: u8,
    pub dsc: f64,
    pub ji: f64,
    pub sens: f64,
    pub spec: f64,
    pub prec: f64,
    /// Volumes in which at least one of the values used the 0/0 convention.
    pub undefined_volumes: usize,
}

/// Per-volume and aggregate metrics of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<AggregateRow>,
    pub volumes: Vec<VolumeMetrics>,
    pub params: usize,
    pub inference_seconds: f64,
}

/// Column order of the CSV rows.
pub const CSV_COLUMNS: [&str; 8] = ["class", "DSC", "JI", "Sens", "Spec", "Prec", "Params", "InfTimeSeconds"];

impl MetricsReport {
    pub fn aggregate(volumes: Vec<VolumeMetrics>, params: usize) -> Result<Self> {
        let first = volumes.first().ok_or_else(|| Error::EmptyDataset("no volumes to aggregate".into()))?;
        let n = volumes.len() as f64;
        let classes = first
            .classes
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let mean = |f: fn(&ClassMetrics) -> f64| volumes.iter().map(|v| f(&v.classes[i].metrics)).sum::<f64>() / n;
                AggregateRow {
                    class: e.class,
                    dsc: mean(|m| m.dsc),
                    ji: mean(|m| m.ji),
                    sens: mean(|m| m.sens),
                    spec: mean(|m| m.spec),
                    prec: mean(|m| m.prec),
                    undefined_volumes: volumes.iter().filter(|v| v.classes[i].metrics.undefined.any()).count(),
                }
            })
            .collect();
        let inference_seconds = volumes.iter().map(|v| v.inference_seconds).sum();
        Ok(Self { classes, volumes, params, inference_seconds })
    }

    pub fn class(&self, k: u8) -> Option<&AggregateRow> {
        self.classes.iter().find(|r| r.class == k)
    }

    /// Header plus one row per class.
    pub fn to_csv(&self) -> String {
        let mut s = CSV_COLUMNS.join(",");
        s.push('\n');
        for r in &self.classes {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.class, r.dsc, r.ji, r.sens, r.spec, r.prec, self.params, self.inference_seconds
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counts() {
        let m = metrics_from_counts(&ConfusionCounts { tp: 3, fp: 1, fn_: 1, tn: 10 });
        assert_eq!((m.dsc, m.ji, m.prec, m.sens), (0.75, 0.6, 0.75, 0.75));
        assert!(!m.undefined.any());
    }

    #[test]
    fn empty_class_reads_as_perfect() {
        let m = metrics_from_counts(&ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 64 });
        assert_eq!((m.dsc, m.ji, m.sens, m.prec), (1.0, 1.0, 1.0, 1.0));
        assert!(m.undefined.empty && m.undefined.sens && m.undefined.prec && !m.undefined.spec);
    }

    #[test]
    fn csv_column_order() {
        let v = VolumeMetrics::compute("a", &[1, 0, 1], &[1, 1, 0], 2, 0.5).unwrap();
        let r = MetricsReport::aggregate(vec![v], 42).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("class,DSC,JI,Sens,Spec,Prec,Params,InfTimeSeconds\n1,0.5,"), "{csv}");
    }
}
