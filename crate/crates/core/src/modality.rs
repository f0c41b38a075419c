use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Visual,
    Poi,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Visual, Modality::Poi];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Visual => "visual",
            Modality::Poi => "poi",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}
