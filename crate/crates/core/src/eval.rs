//! Pointwise detection metrics: confusion counts, precision/recall/F1,
//! and ROC/AUC. Unknown-labeled points are skipped everywhere; 0/0
//! ratios are 0 by convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{format_f64, Label};

/// Pointwise confusion counts over known-label points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    #[serde(rename = "tp")]
    pub true_positives: usize,
    #[serde(rename = "fn")]
    pub false_negatives: usize,
    #[serde(rename = "tn")]
    pub true_negatives: usize,
    #[serde(rename = "fp")]
    pub false_positives: usize,
}

/// One ROC sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Decision threshold producing this point (`score >= threshold` flags).
    pub score: f64,
}

/// Per-task evaluation summary. Serializes to the flat report JSON
/// `{pre, rec, f1, tp, fn, tn, fp, auc, threshold}`; the ROC points are
/// exported separately as CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub confusion: Confusion,
    /// Absent when the query labels contain a single class.
    pub auc: Option<f64>,
    pub threshold: f64,
    #[serde(skip)]
    pub roc_points: Vec<RocPoint>,
}

impl Report {
    /// Assemble a report from labels, binary decisions, and raw scores.
    pub fn build(labels: &[Label], predictions: &[bool], scores: &[f64], threshold: f64) -> Result<Report> {
        let confusion = confusion(labels, predictions)?;
        let (pre, rec, f1) = prf1(&confusion);
        let (roc_points, auc) = match roc(scores, labels) {
            Ok((points, auc)) => (points, Some(auc)),
            Err(Error::TooFew { .. }) => (Vec::new(), None),
            Err(e) => return Err(e),
        };
        Ok(Report {
            pre,
            rec,
            f1,
            confusion,
            auc,
            threshold,
            roc_points,
        })
    }

    /// Render the ROC sweep as `fpr,tpr,score` CSV.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,score\n");
        for p in &self.roc_points {
            out.push_str(&format!(
                "{},{},{}\n",
                format_f64(p.fpr),
                format_f64(p.tpr),
                if p.score.is_infinite() { "inf".to_string() } else { format_f64(p.score) }
            ));
        }
        out
    }
}

/// Count pointwise outcomes; unknown labels are skipped.
pub fn confusion(labels: &[Label], predictions: &[bool]) -> Result<Confusion> {
    if labels.len() != predictions.len() {
        return Err(Error::ShapeMismatch {
            context: "labels vs predictions".into(),
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    let mut c = Confusion::default();
    for (label, &flagged) in labels.iter().zip(predictions.iter()) {
        match (label, flagged) {
            (Label::Anomalous, true) => c.true_positives += 1,
            (Label::Anomalous, false) => c.false_negatives += 1,
            (Label::Normal, false) => c.true_negatives += 1,
            (Label::Normal, true) => c.false_positives += 1,
            (Label::Unknown, _) => {}
        }
    }
    Ok(c)
}

/// Precision, recall, and their harmonic mean; 0/0 is 0.
pub fn prf1(c: &Confusion) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let pre = ratio(c.true_positives, c.true_positives + c.false_positives);
    let rec = ratio(c.true_positives, c.true_positives + c.false_negatives);
    let f1 = if pre + rec == 0.0 {
        0.0
    } else {
        2.0 * pre * rec / (pre + rec)
    };
    (pre, rec, f1)
}

/// ROC sweep over every distinct score plus the trapezoidal AUC.
///
/// Requires both classes among the known labels.
pub fn roc(scores: &[f64], labels: &[Label]) -> Result<(Vec<RocPoint>, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "scores vs labels".into(),
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let known: Vec<(f64, bool)> = scores
        .iter()
        .zip(labels.iter())
        .filter_map(|(&s, &l)| match l {
            Label::Anomalous => Some((s, true)),
            Label::Normal => Some((s, false)),
            Label::Unknown => None,
        })
        .collect();
    let positives = known.iter().filter(|(_, p)| *p).count();
    let negatives = known.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::TooFew {
            context: "classes for a ROC sweep (both required)".into(),
            needed: 1,
            got: 0,
        });
    }
    let mut ordered = known;
    ordered.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        score: f64::INFINITY,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < ordered.len() {
        let threshold = ordered[i].0;
        // consume the whole tie group at once
        while i < ordered.len() && ordered[i].0 == threshold {
            if ordered[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            score: threshold,
        });
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += 0.5 * (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr);
    }
    Ok((points, auc))
}

/// One scored, labeled query point as exported in the `t,score,label` CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPoint {
    pub t: i64,
    pub score: f64,
    pub label: Label,
}

/// Render scored points as `t,score,label` CSV.
pub fn scores_to_csv(points: &[ScoredPoint]) -> String {
    let mut out = String::from("t,score,label\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.t, format_f64(p.score), p.label));
    }
    out
}

/// Parse a `t,score,label` CSV.
pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoredPoint>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::CsvHeader("scores file is empty".into()))?;
    if header.trim() != "t,score,label" {
        return Err(Error::CsvHeader(format!(
            "expected `t,score,label`, got `{header}`"
        )));
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::CsvParse {
                line: line_no,
                reason: format!("expected 3 columns, found {}", fields.len()),
            });
        }
        let t = fields[0].trim().parse::<i64>().map_err(|_| Error::CsvParse {
            line: line_no,
            reason: format!("tick `{}` is not an integer", fields[0]),
        })?;
        let score = fields[1].trim().parse::<f64>().map_err(|_| Error::CsvParse {
            line: line_no,
            reason: format!("score `{}` is not numeric", fields[1]),
        })?;
        let code = fields[2].trim().parse::<i64>().map_err(|_| Error::CsvParse {
            line: line_no,
            reason: format!("label `{}` is not an integer", fields[2]),
        })?;
        let label = Label::from_code(code).map_err(|e| Error::CsvParse {
            line: line_no,
            reason: e.to_string(),
        })?;
        out.push(ScoredPoint { t, score, label });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(codes: &[i64]) -> Vec<Label> {
        codes.iter().map(|&c| Label::from_code(c).unwrap()).collect()
    }

    #[test]
    fn confusion_perfect_split() {
        let c = confusion(&labels(&[1, 0, 1, 0]), &[true, false, true, false]).unwrap();
        assert_eq!(
            c,
            Confusion {
                true_positives: 2,
                false_negatives: 0,
                true_negatives: 2,
                false_positives: 0
            }
        );
    }

    #[test]
    fn confusion_skips_unknown() {
        let c = confusion(&labels(&[-1, -1, -1]), &[true, false, true]).unwrap();
        assert_eq!(c, Confusion::default());
    }

    #[test]
    fn confusion_mixed_case() {
        let c = confusion(&labels(&[1, 1, 0]), &[false, true, true]).unwrap();
        assert_eq!(c.true_positives, 1);
        assert_eq!(c.false_negatives, 1);
        assert_eq!(c.false_positives, 1);
        assert_eq!(c.true_negatives, 0);
    }

    #[test]
    fn confusion_length_mismatch() {
        assert!(confusion(&labels(&[1, 0]), &[true]).is_err());
    }

    #[test]
    fn prf1_reported_triple() {
        // precision 1.000, recall 0.981 -> F1 0.990
        let c = Confusion {
            true_positives: 981,
            false_negatives: 19,
            true_negatives: 0,
            false_positives: 0,
        };
        let (pre, rec, f1) = prf1(&c);
        assert_eq!(pre, 1.0);
        assert!((rec - 0.981).abs() < 1e-12);
        assert!((f1 - 0.990).abs() < 5e-4, "f1 = {f1}");
    }

    #[test]
    fn prf1_zero_convention() {
        let (pre, rec, f1) = prf1(&Confusion::default());
        assert_eq!((pre, rec, f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn prf1_harmonic_mean_fixed_point() {
        let c = Confusion {
            true_positives: 30,
            false_negatives: 10,
            true_negatives: 50,
            false_positives: 10,
        };
        let (pre, rec, f1) = prf1(&c);
        assert_eq!(pre, rec);
        assert!((f1 - pre).abs() < 1e-12);
    }

    #[test]
    fn roc_perfect_separation() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let (_, auc) = roc(&scores, &labels(&[1, 1, 0, 0])).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn roc_anti_separation() {
        // anomalies score lowest: reversed ordering gives AUC 0
        let scores = [0.0, 0.0, 1.0, 1.0];
        let (_, auc) = roc(&scores, &labels(&[1, 1, 0, 0])).unwrap();
        assert_eq!(auc, 0.0);
    }

    /// Rank-statistic oracle: fraction of positive/negative pairs ordered
    /// correctly, ties counting half.
    fn mann_whitney(scores: &[f64], labels: &[Label]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, (&si, &li)) in scores.iter().zip(labels.iter()).enumerate() {
            for (j, (&sj, &lj)) in scores.iter().zip(labels.iter()).enumerate() {
                if i == j {
                    continue;
                }
                if li == Label::Anomalous && lj == Label::Normal {
                    den += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_matches_rank_statistic_hand_case() {
        let scores = [0.9, 0.4, 0.7, 0.4, 0.2, 0.6];
        let l = labels(&[1, 0, 1, 1, 0, 0]);
        let (_, auc) = roc(&scores, &l).unwrap();
        let oracle = mann_whitney(&scores, &l);
        assert!((auc - oracle).abs() < 1e-9, "{auc} vs {oracle}");
    }

    #[test]
    fn auc_matches_rank_statistic_random_sets_with_ties() {
        let mut rng = crate::rng::Rng::new(8);
        for _ in 0..10 {
            let n = 60;
            let scores: Vec<f64> = (0..n).map(|_| (rng.next_f64() * 8.0).round() / 8.0).collect();
            let l: Vec<Label> = (0..n)
                .map(|_| if rng.next_f64() < 0.3 { Label::Anomalous } else { Label::Normal })
                .collect();
            if !l.contains(&Label::Anomalous) || !l.contains(&Label::Normal) {
                continue;
            }
            let (_, auc) = roc(&scores, &l).unwrap();
            let oracle = mann_whitney(&scores, &l);
            assert!((auc - oracle).abs() < 1e-9, "{auc} vs {oracle}");
        }
    }

    #[test]
    fn roc_invariant_under_monotone_transform() {
        let scores = [0.9, 0.4, 0.7, 0.4, 0.2, 0.6];
        let l = labels(&[1, 0, 1, 1, 0, 0]);
        let (points_a, auc_a) = roc(&scores, &l).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let (points_b, auc_b) = roc(&transformed, &l).unwrap();
        assert!((auc_a - auc_b).abs() < 1e-12);
        for (a, b) in points_a.iter().zip(points_b.iter()) {
            assert_eq!(a.fpr, b.fpr);
            assert_eq!(a.tpr, b.tpr);
        }
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(roc(&[0.1, 0.2], &labels(&[0, 0])).is_err());
        assert!(roc(&[0.1, 0.2], &labels(&[1, -1])).is_err());
    }

    #[test]
    fn report_json_shape() {
        let l = labels(&[1, 0, 1, 0]);
        let scores = [0.9, 0.1, 0.8, 0.2];
        let preds: Vec<bool> = scores.iter().map(|&s| s > 0.5).collect();
        let report = Report::build(&l, &preds, &scores, 0.5).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(
            json,
            "{\"pre\":1.0,\"rec\":1.0,\"f1\":1.0,\"tp\":2,\"fn\":0,\"tn\":2,\"fp\":0,\"auc\":1.0,\"threshold\":0.5}"
        );
    }

    #[test]
    fn report_without_both_classes_has_no_auc() {
        let l = labels(&[0, 0, 0]);
        let scores = [0.1, 0.2, 0.3];
        let report = Report::build(&l, &[false, false, true], &scores, 0.25).unwrap();
        assert_eq!(report.auc, None);
        assert!(report.roc_points.is_empty());
        assert!(serde_json::to_string(&report).unwrap().contains("\"auc\":null"));
    }

    #[test]
    fn scores_csv_round_trip() {
        let points = vec![
            ScoredPoint { t: 5, score: 0.125, label: Label::Normal },
            ScoredPoint { t: 6, score: 2.5, label: Label::Anomalous },
            ScoredPoint { t: 7, score: 1.0 / 3.0, label: Label::Unknown },
        ];
        let text = scores_to_csv(&points);
        let back = parse_scores_csv(&text).unwrap();
        assert_eq!(points, back);
    }

    #[test]
    fn scores_csv_error_contracts() {
        assert!(parse_scores_csv("wrong,header\n").is_err());
        let bad_row = "t,score,label\n0,abc,0\n";
        assert!(matches!(
            parse_scores_csv(bad_row),
            Err(Error::CsvParse { line: 2, .. })
        ));
    }
}
