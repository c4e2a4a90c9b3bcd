//! Detection evaluation against labelled crowns: box IoU, greedy matching,
//! precision and recall per confidence threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoError, GeoPoint, GeoPolygon, Projection};
use crate::index::PointIndex;
use crate::ingest::PalmDetection;
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid match configuration: {0}")]
    InvalidConfig(String),
    #[error("label {label}: {source}")]
    Label {
        label: usize,
        #[source]
        source: GeoError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    pub confidence_thresholds: Vec<f64>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            confidence_thresholds: vec![0.2, 0.3, 0.4],
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let in_range = |t: f64| t > 0.0 && t <= 1.0;
        if !in_range(self.iou_threshold) {
            return Err(EvalError::InvalidConfig(format!("iou_threshold {} not in (0, 1]", self.iou_threshold)));
        }
        if let Some(t) = self.confidence_thresholds.iter().find(|t| !in_range(**t)) {
            return Err(EvalError::InvalidConfig(format!("confidence threshold {t} not in (0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurvePoint {
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    /// Set when no prediction survived the threshold and precision was
    /// reported as 1 by convention.
    pub precision_undefined: bool,
}

type Box2 = [f64; 4];

fn planar_box(poly: &GeoPolygon, proj: &Projection) -> Box2 {
    poly.exterior().iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, p| {
            let [x, y] = proj.project_unchecked(*p);
            [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)]
        },
    )
}

fn box_area(b: &Box2) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

fn box_iou(a: &Box2, b: &Box2) -> f64 {
    let inter = box_area(&[a[0].max(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].min(b[3])]);
    let union = box_area(a) + box_area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// IoU of the axis-aligned bounding boxes of two polygons, in local meters.
pub fn iou(a: &GeoPolygon, b: &GeoPolygon) -> Result<f64, GeoError> {
    let proj = Projection::new(a.reference_point());
    let (ba, bb) = (planar_box(a, &proj), planar_box(b, &proj));
    for bx in [&ba, &bb] {
        if box_area(bx) <= 0.0 {
            return Err(GeoError::DegenerateHull("polygon has a zero-area bounding box".into()));
        }
    }
    Ok(box_iou(&ba, &bb))
}

fn center(b: &Box2) -> [f64; 2] {
    [(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0]
}

fn half_diagonal(b: &Box2) -> f64 {
    (b[2] - b[0]).hypot(b[3] - b[1]) / 2.0
}

/// Greedy matching per threshold. Predictions are visited by descending
/// confidence (ties by id); each takes the unmatched label of highest IoU
/// (ties by lower label index) if it reaches the IoU threshold. Point-only
/// predictions have no box and never match.
pub fn match_and_score(preds: &[PalmDetection], labels: &[GeoPolygon], cfg: &MatchConfig) -> Result<Vec<PrCurvePoint>, EvalError> {
    cfg.validate()?;
    let frame = Projection::new(labels.first().map_or(GeoPoint { lon: 0.0, lat: 0.0 }, |l| l.reference_point()));
    let label_boxes: Vec<Box2> = labels.iter().map(|l| planar_box(l, &frame)).collect();
    if let Some(i) = label_boxes.iter().position(|b| box_area(b) <= 0.0) {
        return Err(EvalError::Label {
            label: i,
            source: GeoError::DegenerateHull("zero-area label box".into()),
        });
    }
    let pred_boxes: Vec<Option<Box2>> = preds
        .iter()
        .map(|p| p.footprint.as_ref().map(|f| planar_box(f, &frame)).filter(|b| box_area(b) > 0.0))
        .collect();
    let max_label_reach = label_boxes.iter().map(half_diagonal).fold(0.0, f64::max);
    let index = if labels.is_empty() {
        None
    } else {
        Some(PointIndex::from_xy(frame.origin(), label_boxes.iter().map(center).collect()).expect("non-empty"))
    };

    // candidate labels with positive overlap, best first
    let candidates: Vec<Vec<(usize, f64)>> = par::map_slice(&pred_boxes, |pb| {
        let (Some(pb), Some(index)) = (pb, &index) else {
            return Vec::new();
        };
        let mut c: Vec<(usize, f64)> = index
            .within_radius(center(pb), half_diagonal(pb) + max_label_reach)
            .into_iter()
            .map(|(l, _)| (l, box_iou(pb, &label_boxes[l])))
            .filter(|&(_, v)| v >= cfg.iou_threshold)
            .collect();
        c.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        c
    });

    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .total_cmp(&preds[a].confidence)
            .then_with(|| preds[a].id.cmp(&preds[b].id))
            .then(a.cmp(&b))
    });

    Ok(par::map_slice(&cfg.confidence_thresholds, |&threshold| {
        let mut matched = vec![false; labels.len()];
        let (mut tp, mut fp) = (0, 0);
        for &i in order.iter().take_while(|&&i| preds[i].confidence >= threshold) {
            match candidates[i].iter().find(|(l, _)| !matched[*l]) {
                Some(&(l, _)) => {
                    matched[l] = true;
                    tp += 1;
                }
                None => fp += 1,
            }
        }
        let fn_ = labels.len() - tp;
        let precision_undefined = tp + fp == 0;
        PrCurvePoint {
            threshold,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision: if precision_undefined { 1.0 } else { tp as f64 / (tp + fp) as f64 },
            recall: if labels.is_empty() { 1.0 } else { tp as f64 / labels.len() as f64 },
            precision_undefined,
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    const O: GeoPoint = GeoPoint { lon: -73.9, lat: 11.1 };

    pub(crate) fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> GeoPolygon {
        let proj = Projection::new(O);
        let ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
            .iter()
            .map(|&(x, y)| proj.unproject(x, y))
            .collect();
        GeoPolygon::new(ring, vec![]).unwrap()
    }

    fn pred(id: &str, poly: GeoPolygon, confidence: f64) -> PalmDetection {
        PalmDetection {
            id: id.into(),
            centroid: poly.centroid().unwrap(),
            footprint: Some(poly),
            confidence,
        }
    }

    #[test]
    fn iou_examples() {
        let a = rect(0.0, 0.0, 1.0, 1.0);
        assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(iou(&a, &rect(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
        let half = iou(&a, &rect(0.5, 0.0, 1.5, 1.0)).unwrap();
        assert!((half - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn single_exact_match() {
        let l = rect(0.0, 0.0, 5.0, 5.0);
        let r = match_and_score(&[pred("a", l.clone(), 0.9)], &[l], &MatchConfig::default()).unwrap();
        let at = r.iter().find(|p| p.threshold == 0.4).unwrap();
        assert_eq!((at.precision, at.recall), (1.0, 1.0));
    }

    #[test]
    fn no_predictions_convention() {
        let labels: Vec<GeoPolygon> = (0..5).map(|i| rect(10.0 * i as f64, 0.0, 10.0 * i as f64 + 5.0, 5.0)).collect();
        let r = match_and_score(&[], &labels, &MatchConfig::default()).unwrap();
        assert!(r.iter().all(|p| p.precision == 1.0 && p.recall == 0.0 && p.precision_undefined));
    }

    #[test]
    fn greedy_hand_walk() {
        let labels = vec![rect(0.0, 0.0, 5.0, 5.0), rect(20.0, 0.0, 25.0, 5.0), rect(40.0, 0.0, 45.0, 5.0)];
        let preds = vec![
            pred("p1", labels[0].clone(), 0.9),
            pred("p2", rect(100.0, 100.0, 105.0, 105.0), 0.8),
            pred("p3", labels[0].clone(), 0.7),
        ];
        let cfg = MatchConfig {
            iou_threshold: 0.5,
            confidence_thresholds: vec![0.4],
        };
        let r = &match_and_score(&preds, &labels, &cfg).unwrap()[0];
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (1, 2, 2));
    }

    #[test]
    fn invalid_config() {
        let cfg = MatchConfig {
            iou_threshold: 0.0,
            ..Default::default()
        };
        assert!(match_and_score(&[], &[], &cfg).is_err());
    }
}
