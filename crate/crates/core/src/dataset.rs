//! Ground truth, label space and image catalog ingestion; answer validation;
//! thumbnail near-duplicate search.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::scoring::{
    BoundingBox, CategoryId, Detection, GroundTruthObject, LabelSpace, NUM_CATEGORIES,
};

/// Side length of a dedup thumbnail.
pub const THUMB_SIDE: usize = 30;
pub const THUMB_LEN: usize = THUMB_SIDE * THUMB_SIDE;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {reason}")]
    Invalid {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {reason}")]
    Decode { path: String, reason: String },
    #[error("{0}")]
    Catalog(String),
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))
}

/// Reads a `<category_id> <name>` sidecar. Names may contain spaces.
pub fn load_label_space(path: impl AsRef<Path>) -> Result<LabelSpace, DatasetError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut names = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let invalid = |reason: String| DatasetError::Invalid {
            path: path.display().to_string(),
            line: i + 1,
            reason,
        };
        let (id, name) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let id: CategoryId = id
            .parse()
            .map_err(|e| invalid(format!("category id `{id}`: {e}")))?;
        let name = name.trim();
        let name = if name.is_empty() {
            id.to_string()
        } else {
            name.to_string()
        };
        if names.insert(id, name).is_some() {
            return Err(invalid(format!("category {id} listed twice")));
        }
    }
    Ok(LabelSpace::from_names(names))
}

/// Validated annotations for the test set.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    pub objects: Vec<GroundTruthObject>,
    pub label_space: LabelSpace,
    pub images: BTreeSet<String>,
}

impl GroundTruthSet {
    /// Parses ground truth text: `<image_id> <category_id> <xmin> <ymin> <xmax> <ymax>`
    /// per object. A line holding only an image id registers an image with no
    /// objects. `origin` names the source in diagnostics.
    pub fn parse(text: &str, label_space: LabelSpace, origin: &str) -> Result<Self, DatasetError> {
        let mut objects = Vec::new();
        let mut images = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let invalid = |reason: String| DatasetError::Invalid {
                path: origin.to_string(),
                line: i + 1,
                reason,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[..] {
                [image_id] => {
                    images.insert(image_id.to_string());
                }
                [image_id, category, x0, y0, x1, y1] => {
                    let category_id: CategoryId = category
                        .parse()
                        .map_err(|e| invalid(format!("category `{category}`: {e}")))?;
                    if !label_space.contains(category_id) {
                        return Err(invalid(format!(
                            "category {category_id} is outside the {}-class label space",
                            label_space.len()
                        )));
                    }
                    let bbox = parse_box([x0, y0, x1, y1]).map_err(invalid)?;
                    images.insert(image_id.to_string());
                    objects.push(GroundTruthObject::new(image_id, category_id, bbox));
                }
                _ => {
                    return Err(invalid(format!(
                        "expected 6 fields `<image_id> <category_id> <xmin> <ymin> <xmax> <ymax>`, got {}",
                        fields.len()
                    )))
                }
            }
        }
        Ok(Self {
            objects,
            label_space,
            images,
        })
    }
}

/// Loads and validates ground truth; either the whole file loads or nothing does.
///
/// Without a label sidecar the contest's 200 contiguous categories apply.
pub fn load_ground_truth(
    path: impl AsRef<Path>,
    labels: Option<&Path>,
) -> Result<GroundTruthSet, DatasetError> {
    let path = path.as_ref();
    let label_space = match labels {
        Some(p) => load_label_space(p)?,
        None => LabelSpace::contiguous(NUM_CATEGORIES),
    };
    GroundTruthSet::parse(&read_text(path)?, label_space, &path.display().to_string())
}

fn parse_box(fields: [&str; 4]) -> Result<BoundingBox, String> {
    let mut v = [0.0; 4];
    for (slot, f) in v.iter_mut().zip(fields) {
        *slot = f.parse().map_err(|e| format!("coordinate `{f}`: {e}"))?;
    }
    BoundingBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

/// A rejected line of an answer body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    pub line: usize,
    pub fields: Vec<&'static str>,
    pub reason: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}: {} ({})",
            self.line,
            self.reason,
            self.fields.join(", ")
        )
    }
}

/// Rules applied to incoming answers.
#[derive(Debug, Clone, Copy)]
pub struct AnswerRules<'a> {
    pub label_space: &'a LabelSpace,
    /// Known image ids; `None` accepts any id.
    pub images: Option<&'a HashSet<String>>,
}

/// Parses answer lines `<image_id> <category_id> <confidence> <xmin> <ymin> <xmax> <ymax>`.
///
/// Every line is checked; on any failure all offending lines are returned and
/// nothing is accepted.
pub fn parse_detections(
    text: &str,
    rules: AnswerRules<'_>,
) -> Result<Vec<Detection>, Vec<RecordError>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_detection_line(line, rules) {
            Ok(d) => out.push(d),
            Err((fields, reason)) => errors.push(RecordError {
                line: i + 1,
                fields,
                reason,
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

fn parse_detection_line(
    line: &str,
    rules: AnswerRules<'_>,
) -> Result<Detection, (Vec<&'static str>, String)> {
    let f: Vec<&str> = line.split_whitespace().collect();
    let [image_id, category, confidence, x0, y0, x1, y1] = f[..] else {
        return Err((vec!["line"], format!("expected 7 fields, got {}", f.len())));
    };
    let mut bad = Vec::new();
    let mut reasons = Vec::new();

    if let Some(images) = rules.images {
        if !images.contains(image_id) {
            bad.push("image_id");
            reasons.push(format!("unknown image `{image_id}`"));
        }
    }
    let category_id = match category.parse::<CategoryId>() {
        Ok(c) if rules.label_space.contains(c) => Some(c),
        Ok(c) => {
            bad.push("category_id");
            reasons.push(format!("category {c} not in label space"));
            None
        }
        Err(e) => {
            bad.push("category_id");
            reasons.push(format!("category `{category}`: {e}"));
            None
        }
    };
    let conf = match confidence.parse::<f64>() {
        Ok(c) if (0.0..=1.0).contains(&c) => Some(c),
        Ok(c) => {
            bad.push("confidence");
            reasons.push(format!("confidence {c} outside [0, 1]"));
            None
        }
        Err(e) => {
            bad.push("confidence");
            reasons.push(format!("confidence `{confidence}`: {e}"));
            None
        }
    };
    let bbox = match parse_box([x0, y0, x1, y1]) {
        Ok(b) => Some(b),
        Err(r) => {
            bad.push("box");
            reasons.push(r);
            None
        }
    };
    match (category_id, conf, bbox) {
        (Some(c), Some(conf), Some(b)) if bad.is_empty() => {
            Detection::new(image_id, c, conf, b).map_err(|e| (vec!["confidence"], e.to_string()))
        }
        _ => Err((bad, reasons.join("; "))),
    }
}

/// Renders detections in the answer line format.
pub fn format_detections<'a>(detections: impl IntoIterator<Item = &'a Detection>) -> String {
    let mut out = String::new();
    for d in detections {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            d.image_id,
            d.category_id,
            d.confidence(),
            d.bbox
        );
    }
    out
}

/// One servable test image.
#[derive(Debug, Clone)]
pub struct CatalogImage {
    pub index: usize,
    pub image_id: String,
    pub payload: Vec<u8>,
    pub media_type: String,
}

/// Test images addressed by 1-based index.
#[derive(Debug, Clone, Default)]
pub struct ImageCatalog {
    images: Vec<CatalogImage>,
}

impl ImageCatalog {
    /// Builds a catalog from `(image_id, payload, media_type)` in serving order.
    pub fn from_images(
        images: impl IntoIterator<Item = (String, Vec<u8>, String)>,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (i, (image_id, payload, media_type)) in images.into_iter().enumerate() {
            if !seen.insert(image_id.clone()) {
                return Err(DatasetError::Catalog(format!(
                    "duplicate image id `{image_id}`"
                )));
            }
            out.push(CatalogImage {
                index: i + 1,
                image_id,
                payload,
                media_type,
            });
        }
        Ok(Self { images: out })
    }

    /// Every regular file in `dir`, sorted by file name; the id is the file stem.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| DatasetError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let mut images = Vec::with_capacity(paths.len());
        for p in paths {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let payload = std::fs::read(&p).map_err(|e| DatasetError::io(&p, e))?;
            images.push((id, payload, media_type_for(&p).to_string()));
        }
        Self::from_images(images)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&CatalogImage> {
        index.checked_sub(1).and_then(|i| self.images.get(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &CatalogImage> {
        self.images.iter()
    }

    pub fn ids(&self) -> HashSet<String> {
        self.images.iter().map(|i| i.image_id.clone()).collect()
    }
}

fn media_type_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("pgm") => "image/x-portable-graymap",
        Some("ppm") => "image/x-portable-pixmap",
        Some("pnm") => "image/x-portable-anymap",
        _ => "application/octet-stream",
    }
}

/// 30×30 grayscale thumbnail used for near-duplicate search.
#[derive(Clone, PartialEq, Eq)]
pub struct Thumbnail(Box<[u8; THUMB_LEN]>);

impl fmt::Debug for Thumbnail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Thumbnail({:?}..)", &self.0[..8])
    }
}

impl Thumbnail {
    pub fn new(pixels: [u8; THUMB_LEN]) -> Self {
        Self(Box::new(pixels))
    }

    pub fn filled(v: u8) -> Self {
        Self::new([v; THUMB_LEN])
    }

    pub fn from_slice(pixels: &[u8]) -> Option<Self> {
        let arr: [u8; THUMB_LEN] = pixels.try_into().ok()?;
        Some(Self::new(arr))
    }

    pub fn pixels(&self) -> &[u8; THUMB_LEN] {
        &self.0
    }

    /// Area-averages an RGB raster (row-major, 3 bytes per pixel) down to
    /// 30×30 after integer luma conversion. Integer arithmetic throughout.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8]) -> Option<Self> {
        if width == 0 || height == 0 || rgb.len() != width * height * 3 {
            return None;
        }
        let luma: Vec<u64> = rgb
            .chunks_exact(3)
            .map(|p| (77 * u64::from(p[0]) + 150 * u64::from(p[1]) + 29 * u64::from(p[2])) >> 8)
            .collect();

        // Source pixel x spans [30x, 30x+30) and output cell j spans
        // [jW, jW+W) in units of 1/30 source pixel; weights are overlaps.
        let overlaps = |src: usize, cell: usize| -> Vec<(usize, u64)> {
            let (lo, hi) = (cell * src, (cell + 1) * src);
            (lo / THUMB_SIDE..hi.div_ceil(THUMB_SIDE))
                .filter_map(|x| {
                    let (a, b) = (x * THUMB_SIDE, (x + 1) * THUMB_SIDE);
                    let w = hi.min(b).saturating_sub(lo.max(a));
                    (w > 0).then_some((x, w as u64))
                })
                .collect()
        };
        let cols: Vec<_> = (0..THUMB_SIDE).map(|j| overlaps(width, j)).collect();
        let rows: Vec<_> = (0..THUMB_SIDE).map(|i| overlaps(height, i)).collect();
        let total = (width * height) as u64;

        let mut out = [0u8; THUMB_LEN];
        for (i, row) in rows.iter().enumerate() {
            for (j, col) in cols.iter().enumerate() {
                let mut acc = 0u64;
                for &(y, wy) in row {
                    for &(x, wx) in col {
                        acc += wy * wx * luma[y * width + x];
                    }
                }
                out[i * THUMB_SIDE + j] = ((acc + total / 2) / total) as u8;
            }
        }
        Some(Self::new(out))
    }

    /// Decodes a PGM/PPM file and reduces it to a thumbnail.
    pub fn load_pnm(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let decode_err = |reason: String| DatasetError::Decode {
            path: path.display().to_string(),
            reason,
        };
        let bytes = std::fs::read(path).map_err(|e| DatasetError::io(path, e))?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
            .map_err(|e| decode_err(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb(w as usize, h as usize, img.as_raw())
            .ok_or_else(|| decode_err("empty image".into()))
    }
}

/// Euclidean norm of the pixel difference vector.
pub fn thumbnail_distance(a: &Thumbnail, b: &Thumbnail) -> f64 {
    let sq: u64 =
        a.0.iter()
            .zip(b.0.iter())
            .map(|(&x, &y)| {
                let d = u64::from(x.abs_diff(y));
                d * d
            })
            .sum();
    (sq as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicatePair {
    pub candidate_id: String,
    pub reference_id: String,
    pub distance: f64,
}

/// All candidate/reference pairs within `threshold`, nearest first.
pub fn find_duplicates(
    candidates: &[(String, Thumbnail)],
    reference: &[(String, Thumbnail)],
    threshold: f64,
) -> Vec<DuplicatePair> {
    let mut pairs: Vec<DuplicatePair> = candidates
        .par_iter()
        .flat_map_iter(|(cid, c)| {
            reference.iter().filter_map(move |(rid, r)| {
                let distance = thumbnail_distance(c, r);
                (distance <= threshold).then(|| DuplicatePair {
                    candidate_id: cid.clone(),
                    reference_id: rid.clone(),
                    distance,
                })
            })
        })
        .collect();
    pairs.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.candidate_id.cmp(&b.candidate_id))
            .then_with(|| a.reference_id.cmp(&b.reference_id))
    });
    pairs
}

/// Thumbnails for every `.pgm`/`.ppm`/`.pnm` file in `dir`, sorted by name.
pub fn load_thumbnails(dir: impl AsRef<Path>) -> Result<Vec<(String, Thumbnail)>, DatasetError> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| DatasetError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm" | "ppm" | "pnm")
            )
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((id, Thumbnail::load_pnm(&p)?))
        })
        .collect()
}

/// Report lines `<candidate_id>,<reference_id>,<distance>` under a header
/// describing how thumbnails were built.
pub fn format_dedup_report(pairs: &[DuplicatePair], threshold: f64) -> String {
    let mut out = format!(
        "# thumbnail={THUMB_SIDE}x{THUMB_SIDE} grayscale=(77R+150G+29B)>>8 resize=area-average metric=l2 threshold={threshold}\n"
    );
    for p in pairs {
        let _ = writeln!(out, "{},{},{}", p.candidate_id, p.reference_id, p.distance);
    }
    out
}
