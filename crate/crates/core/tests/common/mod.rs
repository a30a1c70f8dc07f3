//! Independent oracles and random instance generators shared by the test targets.
#![allow(dead_code)]

use lpref::energy::PowerTrace;
use lpref::scoring::{BoundingBox, Detection, GroundTruthObject, LabelSpace};
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub type RawBox = [f64; 4];

pub fn oracle_iou(a: RawBox, b: RawBox) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area = |r: RawBox| (r[2] - r[0]) * (r[3] - r[1]);
    if inter == 0.0 {
        0.0
    } else {
        inter / (area(a) + area(b) - inter)
    }
}

#[derive(Debug, Clone)]
pub struct RawDet {
    pub image: usize,
    pub class: u32,
    pub conf: f64,
    pub bbox: RawBox,
}

#[derive(Debug, Clone)]
pub struct RawGt {
    pub image: usize,
    pub class: u32,
    pub bbox: RawBox,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub dets: Vec<RawDet>,
    pub gts: Vec<RawGt>,
    pub classes: u32,
}

fn raw_box(r: &mut StdRng) -> RawBox {
    let x = r.random_range(0..8) as f64;
    let y = r.random_range(0..8) as f64;
    let w = r.random_range(1..6) as f64;
    let h = r.random_range(1..6) as f64;
    [x, y, x + w, y + h]
}

fn jitter(r: &mut StdRng, b: RawBox) -> RawBox {
    let mut d = || r.random_range(-1i32..=1) as f64;
    let (dx, dy, dw, dh) = (d(), d(), d(), d());
    let x0 = b[0] + dx;
    let y0 = b[1] + dy;
    let x1 = (b[2] + dx + dw).max(x0 + 1.0);
    let y1 = (b[3] + dy + dh).max(y0 + 1.0);
    [x0, y0, x1, y1]
}

/// At most 3 images, 3 classes and 4 ground-truth and 4 detected boxes per
/// class; integer grid coordinates and a coarse confidence set so ties occur.
pub fn random_instance(r: &mut StdRng) -> Instance {
    const CONFS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
    let images = r.random_range(1..=3);
    let classes = r.random_range(1..=3u32);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for class in 1..=classes {
        for _ in 0..r.random_range(0..=4) {
            gts.push(RawGt {
                image: r.random_range(0..images),
                class,
                bbox: raw_box(r),
            });
        }
        let class_gts: Vec<RawGt> = gts.iter().filter(|g| g.class == class).cloned().collect();
        for _ in 0..r.random_range(0..=4) {
            let (image, bbox) = match class_gts.len() {
                n if n > 0 && r.random_bool(0.7) => {
                    let g = &class_gts[r.random_range(0..n)];
                    let b = if r.random_bool(0.5) {
                        g.bbox
                    } else {
                        jitter(r, g.bbox)
                    };
                    (g.image, b)
                }
                _ => (r.random_range(0..images), raw_box(r)),
            };
            dets.push(RawDet {
                image,
                class,
                conf: CONFS[r.random_range(0..CONFS.len())],
                bbox,
            });
        }
    }
    if gts.is_empty() {
        gts.push(RawGt {
            image: 0,
            class: 1,
            bbox: raw_box(r),
        });
    }
    Instance { dets, gts, classes }
}

impl Instance {
    pub fn label_space(&self) -> LabelSpace {
        LabelSpace::contiguous(self.classes)
    }

    pub fn detections(&self) -> Vec<Detection> {
        self.dets
            .iter()
            .map(|d| {
                Detection::new(format!("i{}", d.image), d.class, d.conf, to_box(d.bbox)).unwrap()
            })
            .collect()
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthObject> {
        self.gts
            .iter()
            .map(|g| GroundTruthObject::new(format!("i{}", g.image), g.class, to_box(g.bbox)))
            .collect()
    }
}

pub fn to_box(b: RawBox) -> BoundingBox {
    BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap()
}

/// Per-class AP by brute force: rank detections (confidence desc, then input
/// order), match each to the best still-free ground truth in its image, then
/// sum recall steps weighted by the best precision at any later rank.
pub fn oracle_class_ap(inst: &Instance, class: u32) -> Option<f64> {
    let gts: Vec<&RawGt> = inst.gts.iter().filter(|g| g.class == class).collect();
    if gts.is_empty() {
        return None;
    }
    let mut ranked: Vec<(usize, &RawDet)> = inst
        .dets
        .iter()
        .enumerate()
        .filter(|(_, d)| d.class == class)
        .collect();
    ranked.sort_by(|(ia, a), (ib, b)| b.conf.partial_cmp(&a.conf).unwrap().then(ia.cmp(ib)));

    let mut used = vec![false; gts.len()];
    let mut hits = Vec::new();
    for (_, d) in &ranked {
        let mut best: Option<usize> = None;
        let mut best_iou = -1.0;
        for (gi, g) in gts.iter().enumerate() {
            if used[gi] || g.image != d.image {
                continue;
            }
            let o = oracle_iou(d.bbox, g.bbox);
            if o > best_iou {
                best_iou = o;
                best = Some(gi);
            }
        }
        let tp = best_iou >= 0.5;
        if let (true, Some(gi)) = (tp, best) {
            used[gi] = true;
        }
        hits.push(tp);
    }

    let n = hits.len();
    let mut precision = vec![0.0; n];
    let mut recall = vec![0.0; n];
    let mut tp = 0usize;
    for k in 0..n {
        tp += usize::from(hits[k]);
        precision[k] = tp as f64 / (k + 1) as f64;
        recall[k] = tp as f64 / gts.len() as f64;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..n {
        let later_best = precision[k..].iter().cloned().fold(0.0, f64::max);
        ap += (recall[k] - prev_recall) * later_best;
        prev_recall = recall[k];
    }
    Some(ap)
}

pub fn oracle_map(inst: &Instance) -> f64 {
    let aps: Vec<f64> = (1..=inst.classes)
        .filter_map(|c| oracle_class_ap(inst, c))
        .collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

/// Continuous piecewise-linear draw, known at its breakpoints.
#[derive(Debug, Clone)]
pub struct PiecewiseLinear {
    pub points: Vec<(f64, f64)>,
}

pub fn random_piecewise(r: &mut StdRng) -> PiecewiseLinear {
    let n = r.random_range(2..=40);
    let mut t = r.random_range(0.0..500.0);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push((t, r.random_range(0.5..25.0)));
        t += r.random_range(1.0..2000.0);
    }
    PiecewiseLinear { points }
}

impl PiecewiseLinear {
    pub fn trace(&self) -> PowerTrace {
        PowerTrace::from_pairs(self.points.iter().copied()).unwrap()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.points[0].0, self.points.last().unwrap().0)
    }

    /// Exact integral over [a, b] in watt-hours, from each piece's antiderivative.
    pub fn exact_wh(&self, a: f64, b: f64) -> f64 {
        let mut joules_ms = 0.0;
        for w in self.points.windows(2) {
            let ((t0, p0), (t1, p1)) = (w[0], w[1]);
            let lo = a.max(t0);
            let hi = b.min(t1);
            if hi <= lo {
                continue;
            }
            let m = (p1 - p0) / (t1 - t0);
            let c = p0 - m * t0;
            joules_ms += m / 2.0 * (hi * hi - lo * lo) + c * (hi - lo);
        }
        joules_ms / 3_600_000.0
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}
