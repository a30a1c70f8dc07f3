//! Small synthetic contest fixtures for demos, tests and dry runs.
//!
//! Builders only; expected scores are left to the caller to derive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::dataset::{format_detections, GroundTruthSet, ImageCatalog};
use crate::energy::PowerTrace;
use crate::referee::{SessionRecord, SessionState};
use crate::scoring::{BoundingBox, Detection, GroundTruthObject, LabelSpace};

/// Binary PGM (`P5`) of a uniform gray level.
pub fn pgm(width: usize, height: usize, level: u8) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(std::iter::repeat_n(level, width * height));
    out
}

/// Constant draw sampled every `step_ms` from 0 through at least `until_ms`.
pub fn constant_trace(watts: f64, until_ms: f64, step_ms: f64) -> PowerTrace {
    let n = (until_ms / step_ms).ceil() as usize;
    PowerTrace::from_pairs((0..=n).map(|i| (i as f64 * step_ms, watts)))
        .expect("constant trace is well formed")
}

fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).expect("fixture box is valid")
}

fn det(image: &str, class: u32, conf: f64, b: BoundingBox) -> Detection {
    Detection::new(image, class, conf, b).expect("fixture detection is valid")
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)
}

fn gt_text(gts: &GroundTruthSet) -> String {
    let mut out = String::new();
    for o in &gts.objects {
        let _ = writeln!(out, "{} {} {}", o.image_id, o.category_id, o.bbox);
    }
    out
}

fn labels_text(labels: &LabelSpace) -> String {
    let mut out = String::new();
    for id in labels.ids() {
        let _ = writeln!(out, "{id} {}", labels.name(id).unwrap_or(""));
    }
    out
}

/// A 20-image, two-class referee fixture.
///
/// `img01`..`img10` each hold one class-1 object, `img11`..`img20` one class-2
/// object. The canned answers hit class 1 on `img01`..`img08` only, hit every
/// class-2 object, and add one high-confidence class-2 miss on `img11`.
#[derive(Debug, Clone)]
pub struct LoopbackFixture {
    pub catalog: ImageCatalog,
    pub ground_truth: GroundTruthSet,
    pub answers: Vec<Detection>,
}

pub const LOOPBACK_IMAGES: usize = 20;

impl LoopbackFixture {
    pub fn new() -> Self {
        let ids: Vec<String> = (1..=LOOPBACK_IMAGES)
            .map(|i| format!("img{i:02}"))
            .collect();
        let catalog = ImageCatalog::from_images(ids.iter().enumerate().map(|(i, id)| {
            (
                id.clone(),
                pgm(8, 8, (i * 12) as u8),
                "image/x-portable-graymap".to_string(),
            )
        }))
        .expect("fixture ids are unique");

        let class_box = |class: u32| match class {
            1 => bbox(10.0, 10.0, 50.0, 50.0),
            _ => bbox(20.0, 20.0, 60.0, 60.0),
        };
        let class_of = |i: usize| if i < 10 { 1 } else { 2 };
        let objects = ids
            .iter()
            .enumerate()
            .map(|(i, id)| GroundTruthObject::new(id, class_of(i), class_box(class_of(i))))
            .collect();
        let label_space = LabelSpace::from_names(BTreeMap::from([
            (1, "cat".to_string()),
            (2, "dog".to_string()),
        ]));
        let ground_truth = GroundTruthSet {
            objects,
            label_space,
            images: ids.iter().cloned().collect::<BTreeSet<_>>(),
        };

        let mut answers: Vec<Detection> = ids[..8]
            .iter()
            .map(|id| det(id, 1, 0.9, class_box(1)))
            .collect();
        answers.push(det(&ids[10], 2, 0.95, bbox(100.0, 100.0, 140.0, 140.0)));
        answers.extend(ids[10..].iter().map(|id| det(id, 2, 0.8, class_box(2))));

        Self {
            catalog,
            ground_truth,
            answers,
        }
    }

    /// Number of distinct images the canned answers touch.
    pub fn answered_images(&self) -> usize {
        self.answers
            .iter()
            .map(|d| d.image_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Writes `images/`, `gt.txt`, `labels.txt` and `answers.txt` under `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        for img in self.catalog.iter() {
            write(
                &dir.join("images").join(format!("{}.pgm", img.image_id)),
                &img.payload,
            )?;
        }
        write(&dir.join("gt.txt"), gt_text(&self.ground_truth))?;
        write(
            &dir.join("labels.txt"),
            labels_text(&self.ground_truth.label_space),
        )?;
        write(&dir.join("answers.txt"), format_detections(&self.answers))
    }
}

impl Default for LoopbackFixture {
    fn default() -> Self {
        Self::new()
    }
}

/// A finished 50-class, 100-image session with a constant-power trace.
///
/// Every image holds one object of every class on a non-overlapping grid.
/// Each class is answered exactly on its first `hits[c]` images and nowhere
/// else. The session lasts `window_ms` at `watts`.
#[derive(Debug, Clone)]
pub struct RecordedSession {
    pub session: SessionRecord,
    pub ground_truth: GroundTruthSet,
    pub trace: PowerTrace,
}

pub const GRID_CLASSES: u32 = 50;
pub const GRID_IMAGES: usize = 100;

impl RecordedSession {
    /// `hits` lists answered images per class, class 1 first.
    pub fn grid(hits: &[usize], window_ms: u64, watts: f64) -> Self {
        assert_eq!(hits.len(), GRID_CLASSES as usize, "one hit count per class");
        let ids: Vec<String> = (1..=GRID_IMAGES).map(|i| format!("img{i:03}")).collect();
        let cell = |class: u32| {
            let k = f64::from(class - 1);
            let (x, y) = ((k % 10.0) * 50.0, (k / 10.0).floor() * 50.0);
            bbox(x, y, x + 40.0, y + 40.0)
        };

        let mut objects = Vec::new();
        for id in &ids {
            for class in 1..=GRID_CLASSES {
                objects.push(GroundTruthObject::new(id, class, cell(class)));
            }
        }
        let mut answers: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
        for (class, &n) in (1..=GRID_CLASSES).zip(hits) {
            for id in &ids[..n] {
                answers
                    .entry(id.clone())
                    .or_default()
                    .push(det(id, class, 0.9, cell(class)));
            }
        }

        let session = SessionRecord {
            session_id: "winner-0001".into(),
            team_id: "winner".into(),
            state: SessionState::Closed,
            login_at_ms: 0,
            logout_at_ms: Some(window_ms),
            window_limit_ms: crate::energy::SESSION_LIMIT_MS as u64,
            answers,
            images_served: (1..=GRID_IMAGES).collect(),
            late_posts_ms: Vec::new(),
        };
        Self {
            session,
            ground_truth: GroundTruthSet {
                objects,
                label_space: LabelSpace::contiguous(GRID_CLASSES),
                images: ids.into_iter().collect(),
            },
            trace: constant_trace(watts, window_ms as f64, 1000.0),
        }
    }

    /// Writes `session/session.json`, `gt.txt`, `labels.txt` and `trace.csv` under `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        let json = serde_json::to_string_pretty(&self.session).map_err(io::Error::other)?;
        write(
            &dir.join("session")
                .join(crate::referee::report::SESSION_FILE),
            json,
        )?;
        write(&dir.join("gt.txt"), gt_text(&self.ground_truth))?;
        write(
            &dir.join("labels.txt"),
            labels_text(&self.ground_truth.label_space),
        )?;
        write(&dir.join("trace.csv"), self.trace.to_text())
    }
}
