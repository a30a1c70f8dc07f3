//! Detection scoring: IoU, per-class greedy matching, average precision and mAP.
//!
//! Everything here is a pure function over immutable inputs. Categories are
//! independent, so callers are free to evaluate them concurrently.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Overlap required for a detection to count as correct.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Size of the contest label space.
pub const NUM_CATEGORIES: u32 = 200;

pub type CategoryId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("invalid box ({xmin}, {ymin}, {xmax}, {ymax}): {reason}")]
    InvalidBox {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
        reason: &'static str,
    },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("category {0} is not in the label space")]
    UnknownCategory(CategoryId),
}

/// Axis-aligned box in real-valued pixel coordinates.
///
/// Construction validates `xmin < xmax`, `ymin < ymax` and finiteness, so
/// every value of this type has positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl BoundingBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, ScoringError> {
        let err = |reason| ScoringError::InvalidBox {
            xmin,
            ymin,
            xmax,
            ymax,
            reason,
        };
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) {
            return Err(err("non-finite coordinate"));
        }
        if xmin >= xmax {
            return Err(err("xmin must be less than xmax"));
        }
        if ymin >= ymax {
            return Err(err("ymin must be less than ymax"));
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    pub fn ymin(&self) -> f64 {
        self.ymin
    }

    pub fn xmax(&self) -> f64 {
        self.xmax
    }

    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, ScoringError> {
        Self::new(
            self.xmin * factor,
            self.ymin * factor,
            self.xmax * factor,
            self.ymax * factor,
        )
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = ScoringError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.xmin, b.ymin, b.xmax, b.ymax]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.xmin, self.ymin, self.xmax, self.ymax)
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One submitted answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub category_id: CategoryId,
    confidence: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

impl Detection {
    pub fn new(
        image_id: impl Into<String>,
        category_id: CategoryId,
        confidence: f64,
        bbox: BoundingBox,
    ) -> Result<Self, ScoringError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ScoringError::InvalidConfidence(confidence));
        }
        Ok(Self {
            image_id: image_id.into(),
            category_id,
            confidence,
            bbox,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

/// An annotated object in the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub image_id: String,
    pub category_id: CategoryId,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

impl GroundTruthObject {
    pub fn new(image_id: impl Into<String>, category_id: CategoryId, bbox: BoundingBox) -> Self {
        Self {
            image_id: image_id.into(),
            category_id,
            bbox,
        }
    }
}

/// Set of valid category ids, with optional human-readable names.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelSpace {
    names: BTreeMap<CategoryId, String>,
}

impl LabelSpace {
    /// Categories `1..=n`, named by their number.
    pub fn contiguous(n: u32) -> Self {
        Self {
            names: (1..=n).map(|id| (id, id.to_string())).collect(),
        }
    }

    pub fn from_names(names: BTreeMap<CategoryId, String>) -> Self {
        Self { names }
    }

    pub fn contains(&self, id: CategoryId) -> bool {
        self.names.contains_key(&id)
    }

    pub fn name(&self, id: CategoryId) -> Option<&str> {
        self.names.get(&id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = CategoryId> + '_ {
        self.names.keys().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchFlag {
    TruePositive,
    FalsePositive,
}

impl MatchFlag {
    pub fn is_tp(self) -> bool {
        self == MatchFlag::TruePositive
    }
}

/// Outcome for one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOutcome {
    /// Index into the detection slice passed to [`match_class`].
    pub detection: usize,
    pub flag: MatchFlag,
    /// Index into the ground-truth slice of the consumed object, if any.
    pub ground_truth: Option<usize>,
    /// Best IoU against any still-unmatched ground truth in the same image.
    pub iou: f64,
}

/// Detection indices sorted by descending confidence; equal confidences keep
/// submission order.
fn confidence_order(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .total_cmp(&detections[a].confidence)
            .then(a.cmp(&b))
    });
    order
}

/// Greedily matches one category's detections against its ground truth.
///
/// Detections are visited by descending confidence. Each takes the unmatched
/// ground truth in its image with the highest IoU (first one on ties) when
/// that IoU reaches `threshold`; everything else is a false positive. The
/// result is in visiting order.
pub fn match_class(
    detections: &[Detection],
    gts: &[GroundTruthObject],
    threshold: f64,
) -> Vec<MatchOutcome> {
    debug_assert!(threshold > 0.0 && threshold <= 1.0);

    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, gt) in gts.iter().enumerate() {
        by_image.entry(gt.image_id.as_str()).or_default().push(i);
    }
    let mut consumed = vec![false; gts.len()];

    confidence_order(detections)
        .into_iter()
        .map(|di| {
            let det = &detections[di];
            let mut best: Option<(usize, f64)> = None;
            for &gi in by_image.get(det.image_id.as_str()).into_iter().flatten() {
                if consumed[gi] {
                    continue;
                }
                let o = iou(&det.bbox, &gts[gi].bbox);
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((gi, o));
                }
            }
            match best {
                Some((gi, o)) if o >= threshold => {
                    consumed[gi] = true;
                    MatchOutcome {
                        detection: di,
                        flag: MatchFlag::TruePositive,
                        ground_truth: Some(gi),
                        iou: o,
                    }
                }
                other => MatchOutcome {
                    detection: di,
                    flag: MatchFlag::FalsePositive,
                    ground_truth: None,
                    iou: other.map_or(0.0, |(_, o)| o),
                },
            }
        })
        .collect()
}

/// Area under the monotone precision envelope of the PR curve.
///
/// `flags` must already be in descending-confidence order. Returns 0 when
/// there is no ground truth or no detection.
pub fn average_precision(flags: &[MatchFlag], num_gt: usize) -> f64 {
    if num_gt == 0 || flags.is_empty() {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(flags.len());
    for (k, flag) in flags.iter().enumerate() {
        if flag.is_tp() {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // envelope: best precision at this or any later rank
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let step = 1.0 / num_gt as f64;
    flags
        .iter()
        .zip(&precision)
        .filter(|(f, _)| f.is_tp())
        .map(|(_, p)| p * step)
        .sum()
}

/// Per-class component of the mAP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub category_id: CategoryId,
    pub ap: f64,
    pub num_gt: usize,
    pub num_tp: usize,
    pub num_fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    /// Every category that has ground truth or detections, ascending by id.
    pub per_class: Vec<ClassScore>,
}

/// Mean of the per-class AP over categories that have ground truth.
///
/// Images that have ground truth but no answers only add misses.
pub fn mean_average_precision(
    detections: &[Detection],
    gts: &[GroundTruthObject],
    label_space: &LabelSpace,
) -> Result<MapResult, ScoringError> {
    let mut classes: BTreeMap<CategoryId, (Vec<Detection>, Vec<GroundTruthObject>)> =
        BTreeMap::new();
    for d in detections {
        if !label_space.contains(d.category_id) {
            return Err(ScoringError::UnknownCategory(d.category_id));
        }
        classes.entry(d.category_id).or_default().0.push(d.clone());
    }
    for g in gts {
        if !label_space.contains(g.category_id) {
            return Err(ScoringError::UnknownCategory(g.category_id));
        }
        classes.entry(g.category_id).or_default().1.push(g.clone());
    }

    let per_class: Vec<ClassScore> = classes
        .into_iter()
        .map(|(category_id, (dets, gts))| {
            let flags: Vec<MatchFlag> = match_class(&dets, &gts, IOU_THRESHOLD)
                .into_iter()
                .map(|m| m.flag)
                .collect();
            let num_tp = flags.iter().filter(|f| f.is_tp()).count();
            ClassScore {
                category_id,
                ap: average_precision(&flags, gts.len()),
                num_gt: gts.len(),
                num_tp,
                num_fp: flags.len() - num_tp,
            }
        })
        .collect();

    let scored: Vec<f64> = per_class
        .iter()
        .filter(|c| c.num_gt > 0)
        .map(|c| c.ap)
        .collect();
    let map = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(MapResult { map, per_class })
}
