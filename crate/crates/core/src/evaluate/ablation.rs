use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::graph::GraphOptions;
use crate::modality::Modality;

/// Pipeline variants that drop modalities or inter-circle edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationTag {
    Full,
    WithoutText,
    WithoutVisual,
    WithoutPoi,
    WithoutTopK,
    TextOnly,
    VisualOnly,
    PoiOnly,
}

impl AblationTag {
    pub const ALL: [AblationTag; 8] = [
        AblationTag::Full,
        AblationTag::WithoutText,
        AblationTag::WithoutVisual,
        AblationTag::WithoutPoi,
        AblationTag::WithoutTopK,
        AblationTag::TextOnly,
        AblationTag::VisualOnly,
        AblationTag::PoiOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationTag::Full => "full",
            AblationTag::WithoutText => "w/o T",
            AblationTag::WithoutVisual => "w/o V",
            AblationTag::WithoutPoi => "w/o P",
            AblationTag::WithoutTopK => "w/o top-k sc",
            AblationTag::TextOnly => "T-only",
            AblationTag::VisualOnly => "V-only",
            AblationTag::PoiOnly => "P-only",
        }
    }

    /// Filesystem- and CLI-friendly spelling.
    pub fn slug(self) -> &'static str {
        match self {
            AblationTag::Full => "full",
            AblationTag::WithoutText => "no-text",
            AblationTag::WithoutVisual => "no-visual",
            AblationTag::WithoutPoi => "no-poi",
            AblationTag::WithoutTopK => "no-topk",
            AblationTag::TextOnly => "text-only",
            AblationTag::VisualOnly => "visual-only",
            AblationTag::PoiOnly => "poi-only",
        }
    }

    pub fn graph_options(self) -> GraphOptions {
        use Modality::*;
        let (modalities, inter_edges) = match self {
            AblationTag::Full => (vec![Text, Visual, Poi], true),
            AblationTag::WithoutText => (vec![Visual, Poi], true),
            AblationTag::WithoutVisual => (vec![Text, Poi], true),
            AblationTag::WithoutPoi => (vec![Text, Visual], true),
            AblationTag::WithoutTopK => (vec![Text, Visual, Poi], false),
            AblationTag::TextOnly => (vec![Text], true),
            AblationTag::VisualOnly => (vec![Visual], true),
            AblationTag::PoiOnly => (vec![Poi], true),
        };
        GraphOptions {
            modalities,
            inter_edges,
        }
    }
}

impl fmt::Display for AblationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationTag {
    type Err = Error;

    /// Accepts either the display name or the slug.
    fn from_str(s: &str) -> Result<Self, Error> {
        AblationTag::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s) || t.slug() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = AblationTag::ALL.iter().map(|t| t.slug()).collect();
                Error::Argument(format!("unknown ablation tag `{s}` (expected one of {})", known.join(", ")))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in AblationTag::ALL {
            assert_eq!(t.name().parse::<AblationTag>().unwrap(), t);
            assert_eq!(t.slug().parse::<AblationTag>().unwrap(), t);
        }
        assert!("w/o X".parse::<AblationTag>().is_err());
    }
}
