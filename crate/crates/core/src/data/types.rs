use serde::{Deserialize, Serialize};

/// The ten major POI categories used by default.
pub const DEFAULT_CATEGORIES: [&str; 10] = [
    "food",
    "shopping",
    "sports_fitness",
    "tourist_attraction",
    "leisure_entertainment",
    "life_services",
    "education_training",
    "culture_media",
    "transportation",
    "stores",
];

pub fn default_vocabulary() -> Vec<String> {
    DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

/// One residential area and the feature rows attached to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LivingCircle {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub households: u64,
    pub elderly_pop: u64,
    pub image_row_ids: Vec<u32>,
    pub text_row_id: u32,
    pub poi_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: String,
    pub circle_id: String,
    pub category: String,
    pub review_row_ids: Vec<u32>,
    pub rating_labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disease {
    Mci,
    Hypertension,
    Diabetes,
    Mdd,
}

impl Disease {
    pub const ALL: [Disease; 4] = [
        Disease::Mci,
        Disease::Hypertension,
        Disease::Diabetes,
        Disease::Mdd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Disease::Mci => "mci",
            Disease::Hypertension => "hypertension",
            Disease::Diabetes => "diabetes",
            Disease::Mdd => "mdd",
        }
    }

    pub fn parse(s: &str) -> Option<Disease> {
        Disease::ALL.into_iter().find(|d| d.name() == s)
    }
}

/// Affected-elderly counts for one circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseLabels {
    pub circle_id: String,
    pub mci: f64,
    pub hypertension: f64,
    pub diabetes: f64,
    pub mdd: f64,
}

impl DiseaseLabels {
    pub fn get(&self, disease: Disease) -> f64 {
        match disease {
            Disease::Mci => self.mci,
            Disease::Hypertension => self.hypertension,
            Disease::Diabetes => self.diabetes,
            Disease::Mdd => self.mdd,
        }
    }

    pub fn counts(&self) -> [f64; 4] {
        [self.mci, self.hypertension, self.diabetes, self.mdd]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Image,
    CircleText,
    PoiReview,
    PoiCategory,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::Image,
        FeatureKind::CircleText,
        FeatureKind::PoiReview,
        FeatureKind::PoiCategory,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            FeatureKind::Image => "images.cgf",
            FeatureKind::CircleText => "circle_text.cgf",
            FeatureKind::PoiReview => "poi_review.cgf",
            FeatureKind::PoiCategory => "poi_category.cgf",
        }
    }
}

/// Row-major matrix of backbone feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatureMatrix {
    pub kind: FeatureKind,
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl RawFeatureMatrix {
    pub fn new(kind: FeatureKind, rows: usize, dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * dim, "feature buffer size");
        Self {
            kind,
            rows,
            dim,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> ndarray::Array1<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }
}

/// Circle-to-street membership used for street-level aggregation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreetAssignment {
    pub circle_id: String,
    pub street_id: String,
}
