use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::encoding::EncodedImage;

/// Confusion matrix (rows: true class, columns: predicted) with accuracy
/// and per-class recall. Classes without test samples have no recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
}

/// Builds the report from `(truth, prediction)` pairs.
pub fn evaluate(
    pairs: impl IntoIterator<Item = (usize, usize)>,
    classes: usize,
) -> Result<MetricsReport, HarnessError> {
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (truth, pred) in pairs {
        if truth >= classes || pred >= classes {
            return Err(HarnessError::Data(format!(
                "label pair ({truth}, {pred}) outside 0..{classes}"
            )));
        }
        confusion[truth][pred] += 1;
    }
    MetricsReport::from_confusion(confusion)
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self, HarnessError> {
        let m = confusion.len();
        if confusion.iter().any(|row| row.len() != m) {
            return Err(HarnessError::Data("confusion matrix is not square".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(HarnessError::EmptyTestSet);
        }
        let correct: u64 = (0..m).map(|k| confusion[k][k]).sum();
        let per_class_recall = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let support: u64 = row.iter().sum();
                (support > 0).then(|| row[k] as f64 / support as f64)
            })
            .collect();
        Ok(Self { accuracy: correct as f64 / total as f64, per_class_recall, confusion })
    }

    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.confusion[class].iter().sum()
    }

    /// Per-class table followed by an `overall` row. Undefined recall is an
    /// empty field.
    pub fn to_csv(&self, names: Option<&[String]>) -> String {
        let mut out = String::from("class,name,support,correct,recall\n");
        for k in 0..self.classes() {
            let name = names.and_then(|n| n.get(k)).cloned().unwrap_or_else(|| format!("class{k}"));
            let recall = self.per_class_recall[k].map(|r| r.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{k},{name},{},{},{recall}", self.support(k), self.confusion[k][k]);
        }
        let correct: u64 = (0..self.classes()).map(|k| self.confusion[k][k]).sum();
        let _ = writeln!(out, "overall,,{},{correct},{}", self.total(), self.accuracy);
        out
    }

    /// Square matrix, one row per true class.
    pub fn confusion_csv(&self) -> String {
        let m = self.classes();
        let mut out = String::from("true\\predicted");
        for k in 0..m {
            let _ = write!(out, ",{k}");
        }
        out.push('\n');
        for (k, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{k}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.csv`, `<stem>_confusion.csv` and `<stem>.json` in `dir`.
    pub fn write(&self, dir: &Path, stem: &str, names: Option<&[String]>) -> Result<(), HarnessError> {
        let files = [
            (format!("{stem}.csv"), self.to_csv(names)),
            (format!("{stem}_confusion.csv"), self.confusion_csv()),
            (
                format!("{stem}.json"),
                serde_json::to_string_pretty(self).map_err(|e| HarnessError::Data(e.to_string()))?,
            ),
        ];
        for (name, text) in files {
            let p = dir.join(name);
            fs::write(&p, text).map_err(HarnessError::io(&p))?;
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(HarnessError::io(path))?;
        let r: Self = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        Self::from_confusion(r.confusion)
    }
}

/// Bar chart of per-class recall: one bar per class on a white canvas with
/// grid lines at quarters. Classes without samples get a short red stub.
pub fn render_recall_chart(report: &MetricsReport) -> EncodedImage {
    const HEIGHT: usize = 200;
    const BAR: usize = 24;
    const GAP: usize = 8;
    const PLOT: usize = HEIGHT - 20;
    let m = report.classes().max(1);
    let width = GAP + m * (BAR + GAP);
    let mut img = EncodedImage::filled(width, HEIGHT, [255, 255, 255]).expect("positive size");
    let base = HEIGHT - 10;
    for q in 0..=4 {
        let y = base - PLOT * q / 4;
        for x in 0..width {
            img.set_pixel(x, y, [200, 200, 200]);
        }
    }
    for (k, recall) in report.per_class_recall.iter().enumerate() {
        let x0 = GAP + k * (BAR + GAP);
        let (h, color) = match recall {
            Some(r) => ((r * PLOT as f64).round() as usize, [40, 90, 200]),
            None => (3, [220, 30, 30]),
        };
        for y in base + 1 - h..=base {
            for x in x0..x0 + BAR {
                img.set_pixel(x, y, color);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant_predictors() {
        let r = evaluate([(0, 0), (1, 1), (2, 2), (1, 1)], 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_class_recall, vec![Some(1.0); 3]);
        let r = evaluate([(0, 0), (0, 0), (1, 0), (1, 0)], 2).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.per_class_recall, vec![Some(1.0), Some(0.0)]);
    }

    #[test]
    fn three_class_example() {
        let r = MetricsReport::from_confusion(vec![vec![5, 0, 0], vec![1, 3, 1], vec![0, 0, 5]]).unwrap();
        assert_eq!(r.per_class_recall, vec![Some(1.0), Some(0.6), Some(1.0)]);
        assert!((r.accuracy - 13.0 / 15.0).abs() < 1e-15);
        assert_eq!(r.total(), 15);
    }

    #[test]
    fn undefined_recall_and_empty_set() {
        let r = evaluate([(0, 0), (0, 1)], 3).unwrap();
        assert_eq!(r.per_class_recall, vec![Some(0.5), None, None]);
        assert!(r.accuracy.is_finite());
        assert!(r.to_csv(None).contains("1,class1,0,0,\n"));
        assert!(matches!(evaluate([], 2), Err(HarnessError::EmptyTestSet)));
        assert!(evaluate([(0, 3)], 2).is_err());
    }

    #[test]
    fn csv_json_and_chart() {
        let r = MetricsReport::from_confusion(vec![vec![2, 0], vec![1, 1]]).unwrap();
        let names = vec!["mug".to_string(), "bowl".to_string()];
        assert_eq!(
            r.to_csv(Some(&names)),
            "class,name,support,correct,recall\n0,mug,2,2,1\n1,bowl,2,1,0.5\noverall,,4,3,0.75\n"
        );
        assert_eq!(r.confusion_csv(), "true\\predicted,0,1\n0,2,0\n1,1,1\n");
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path(), "m", None).unwrap();
        assert_eq!(MetricsReport::read_json(&dir.path().join("m.json")).unwrap(), r);
        let chart = render_recall_chart(&r);
        assert_eq!(chart.height(), 200);
        // full bar reaches the top grid line, half bar does not
        assert_eq!(chart.pixel(8 + 5, 11), [40, 90, 200]);
        assert_eq!(chart.pixel(40 + 5, 60), [255, 255, 255]);
    }
}
