use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use super::format::{read_features, read_json, read_jsonl, write_features, write_json, write_jsonl};
use super::types::{
    default_vocabulary, DiseaseLabels, FeatureKind, LivingCircle, Poi, RawFeatureMatrix,
    StreetAssignment,
};
use crate::error::{Error, Result};

pub const CIRCLES_FILE: &str = "circles.jsonl";
pub const POIS_FILE: &str = "pois.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const STREETS_FILE: &str = "streets.csv";

/// Locations of every file that makes up a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub circles: PathBuf,
    pub pois: PathBuf,
    pub labels: PathBuf,
    pub vocab: PathBuf,
    pub streets: PathBuf,
    pub images: PathBuf,
    pub circle_text: PathBuf,
    pub poi_review: PathBuf,
    pub poi_category: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            circles: dir.join(CIRCLES_FILE),
            pois: dir.join(POIS_FILE),
            labels: dir.join(LABELS_FILE),
            vocab: dir.join(VOCAB_FILE),
            streets: dir.join(STREETS_FILE),
            images: dir.join(FeatureKind::Image.file_name()),
            circle_text: dir.join(FeatureKind::CircleText.file_name()),
            poi_review: dir.join(FeatureKind::PoiReview.file_name()),
            poi_category: dir.join(FeatureKind::PoiCategory.file_name()),
        }
    }

    pub fn features(&self, kind: FeatureKind) -> &Path {
        match kind {
            FeatureKind::Image => &self.images,
            FeatureKind::CircleText => &self.circle_text,
            FeatureKind::PoiReview => &self.poi_review,
            FeatureKind::PoiCategory => &self.poi_category,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Category names; row `g` of `poi_category` embeds `vocab[g]`.
    pub vocab: Vec<String>,
    pub circles: Vec<LivingCircle>,
    pub pois: Vec<Poi>,
    pub labels: Vec<DiseaseLabels>,
    pub streets: Vec<StreetAssignment>,
    pub images: RawFeatureMatrix,
    pub circle_text: RawFeatureMatrix,
    pub poi_review: RawFeatureMatrix,
    pub poi_category: RawFeatureMatrix,
}

impl Dataset {
    pub fn n_circles(&self) -> usize {
        self.circles.len()
    }

    pub fn dim(&self) -> usize {
        self.images.dim
    }

    pub fn circle_index(&self) -> HashMap<&str, usize> {
        self.circles
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.as_str(), i))
            .collect()
    }

    pub fn poi_index(&self) -> HashMap<&str, usize> {
        self.pois
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.as_str(), i))
            .collect()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.vocab.iter().position(|v| v == name)
    }

    /// POIs of each circle, in the circle's `poi_ids` order.
    pub fn pois_by_circle(&self) -> Vec<Vec<&Poi>> {
        let index = self.poi_index();
        self.circles
            .iter()
            .map(|c| c.poi_ids.iter().map(|id| &self.pois[index[id.as_str()]]).collect())
            .collect()
    }

    /// Labels aligned with `circles`; `None` where a circle is unlabeled.
    pub fn labels_by_circle(&self) -> Vec<Option<&DiseaseLabels>> {
        let by_id: HashMap<&str, &DiseaseLabels> =
            self.labels.iter().map(|l| (l.circle_id.as_str(), l)).collect();
        self.circles.iter().map(|c| by_id.get(c.id.as_str()).copied()).collect()
    }

    /// Remove reviews rated 0; they carry no usable sentiment.
    pub fn drop_unrated_reviews(&mut self) -> usize {
        let mut dropped = 0;
        for poi in &mut self.pois {
            let keep: Vec<bool> = poi.rating_labels.iter().map(|&r| r != 0).collect();
            dropped += keep.iter().filter(|k| !**k).count();
            let mut it = keep.iter();
            poi.review_row_ids.retain(|_| *it.next().unwrap());
            let mut it = keep.iter();
            poi.rating_labels.retain(|_| *it.next().unwrap());
        }
        dropped
    }

    /// Check every invariant and cross-reference.
    pub fn validate(&self) -> Result<()> {
        let dim = self.images.dim;
        for m in [&self.images, &self.circle_text, &self.poi_review, &self.poi_category] {
            if m.dim != dim {
                return Err(Error::Integrity(format!(
                    "feature dimension mismatch: {:?} has {}, images have {dim}",
                    m.kind, m.dim
                )));
            }
        }
        if self.poi_category.rows != self.vocab.len() {
            return Err(Error::Integrity(format!(
                "poi_category has {} rows but the vocabulary has {} categories",
                self.poi_category.rows,
                self.vocab.len()
            )));
        }

        let mut circle_ids = HashSet::new();
        for c in &self.circles {
            if !circle_ids.insert(c.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate circle id `{}`", c.id)));
            }
            if !(-90.0..=90.0).contains(&c.lat) || !(-180.0..=180.0).contains(&c.lon) {
                return Err(Error::Integrity(format!(
                    "circle `{}` has invalid coordinates ({}, {})",
                    c.id, c.lat, c.lon
                )));
            }
            if c.image_row_ids.is_empty() {
                return Err(Error::Integrity(format!("circle `{}` has no images", c.id)));
            }
            for &r in &c.image_row_ids {
                if r as usize >= self.images.rows {
                    return Err(Error::Integrity(format!(
                        "circle `{}` references missing image row {r}",
                        c.id
                    )));
                }
            }
            if c.text_row_id as usize >= self.circle_text.rows {
                return Err(Error::Integrity(format!(
                    "circle `{}` references missing text row {}",
                    c.id, c.text_row_id
                )));
            }
        }

        let poi_by_id: HashMap<&str, &Poi> = self.pois.iter().map(|p| (p.id.as_str(), p)).collect();
        if poi_by_id.len() != self.pois.len() {
            return Err(Error::Integrity("duplicate POI id".into()));
        }
        for p in &self.pois {
            if !circle_ids.contains(p.circle_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "POI `{}` references missing circle `{}`",
                    p.id, p.circle_id
                )));
            }
            if self.category_index(&p.category).is_none() {
                return Err(Error::Integrity(format!(
                    "POI `{}` has unknown category `{}`",
                    p.id, p.category
                )));
            }
            if p.rating_labels.len() != p.review_row_ids.len() {
                return Err(Error::Integrity(format!(
                    "POI `{}` has {} ratings for {} reviews",
                    p.id,
                    p.rating_labels.len(),
                    p.review_row_ids.len()
                )));
            }
            for &r in &p.review_row_ids {
                if r as usize >= self.poi_review.rows {
                    return Err(Error::Integrity(format!(
                        "POI `{}` references missing review row {r}",
                        p.id
                    )));
                }
            }
            if let Some(bad) = p.rating_labels.iter().find(|r| !(1..=5).contains(*r)) {
                return Err(Error::Integrity(format!(
                    "POI `{}` has rating {bad} outside 1..=5",
                    p.id
                )));
            }
        }
        for c in &self.circles {
            for pid in &c.poi_ids {
                match poi_by_id.get(pid.as_str()) {
                    None => {
                        return Err(Error::Integrity(format!(
                            "circle `{}` references missing POI `{pid}`",
                            c.id
                        )))
                    }
                    Some(p) if p.circle_id != c.id => {
                        return Err(Error::Integrity(format!(
                            "POI `{pid}` listed by circle `{}` belongs to `{}`",
                            c.id, p.circle_id
                        )))
                    }
                    _ => {}
                }
            }
        }

        let circle_by_id: HashMap<&str, &LivingCircle> =
            self.circles.iter().map(|c| (c.id.as_str(), c)).collect();
        for l in &self.labels {
            let c = circle_by_id.get(l.circle_id.as_str()).ok_or_else(|| {
                Error::Integrity(format!("labels reference missing circle `{}`", l.circle_id))
            })?;
            for v in l.counts() {
                if !(v.is_finite() && v >= 0.0 && v <= c.elderly_pop as f64) {
                    return Err(Error::Integrity(format!(
                        "circle `{}` label {v} outside [0, elderly_pop = {}]",
                        l.circle_id, c.elderly_pop
                    )));
                }
            }
        }
        for s in &self.streets {
            if !circle_ids.contains(s.circle_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "street assignment references missing circle `{}`",
                    s.circle_id
                )));
            }
        }
        Ok(())
    }
}

pub fn read_streets(path: &Path) -> Result<Vec<StreetAssignment>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::format(path.display().to_string(), 0, format!("cannot open streets file: {e}"))
    })?;
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| {
                let offset = e.position().map(|p| p.byte()).unwrap_or(0);
                Error::format(path.display().to_string(), offset, e.to_string())
            })
        })
        .collect()
}

pub fn write_streets(path: &Path, streets: &[StreetAssignment]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Internal(e.to_string()))?;
    for s in streets {
        w.serialize(s).map_err(|e| Error::Internal(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load, resolve and validate a dataset. Reviews rated 0 are dropped.
///
/// `vocab.json` and `streets.csv` are optional: the default ten-category
/// vocabulary and an empty street table are used when they are absent.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let vocab = if paths.vocab.exists() {
        read_json(&paths.vocab)?
    } else {
        default_vocabulary()
    };
    let streets = if paths.streets.exists() {
        read_streets(&paths.streets)?
    } else {
        Vec::new()
    };
    let mut ds = Dataset {
        vocab,
        circles: read_jsonl(&paths.circles)?,
        pois: read_jsonl(&paths.pois)?,
        labels: read_jsonl(&paths.labels)?,
        streets,
        images: read_features(&paths.images, FeatureKind::Image)?,
        circle_text: read_features(&paths.circle_text, FeatureKind::CircleText)?,
        poi_review: read_features(&paths.poi_review, FeatureKind::PoiReview)?,
        poi_category: read_features(&paths.poi_category, FeatureKind::PoiCategory)?,
    };
    let dropped = ds.drop_unrated_reviews();
    if dropped > 0 {
        log::info!("dropped {dropped} reviews rated 0");
    }
    ds.validate()?;
    Ok(ds)
}

/// Write every file of `ds` into `dir` (created if needed).
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths::in_dir(dir);
    write_json(&paths.vocab, &ds.vocab)?;
    write_jsonl(&paths.circles, &ds.circles)?;
    write_jsonl(&paths.pois, &ds.pois)?;
    write_jsonl(&paths.labels, &ds.labels)?;
    write_streets(&paths.streets, &ds.streets)?;
    for m in [&ds.images, &ds.circle_text, &ds.poi_review, &ds.poi_category] {
        write_features(paths.features(m.kind), m)?;
    }
    Ok(paths)
}
