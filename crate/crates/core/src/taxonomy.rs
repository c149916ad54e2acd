//! The 14 report-derived finding classes and their 7 appearance super-classes.

use serde::{Deserialize, Serialize};

pub const NUM_FINE: usize = 14;
pub const NUM_SUPER: usize = 7;

pub const NO_FINDING: usize = 0;
pub const ENLARGED_CARDIOMEDIASTINUM: usize = 1;
pub const CARDIOMEGALY: usize = 2;
pub const LUNG_OPACITY: usize = 3;
pub const LUNG_LESION: usize = 4;
pub const EDEMA: usize = 5;
pub const CONSOLIDATION: usize = 6;
pub const PNEUMONIA: usize = 7;
pub const ATELECTASIS: usize = 8;
pub const PNEUMOTHORAX: usize = 9;
pub const PLEURAL_EFFUSION: usize = 10;
pub const PLEURAL_OTHER: usize = 11;
pub const FRACTURE: usize = 12;
pub const SUPPORT_DEVICES: usize = 13;

pub const FINE_CLASSES: [&str; NUM_FINE] = [
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
];

/// Super-class index (0-based) of every fine class; `None` for classes that
/// are never used as guidance targets.
pub const FINE_TO_SUPER: [Option<usize>; NUM_FINE] = [
    Some(0),
    Some(1),
    Some(1),
    None,
    Some(2),
    Some(3),
    Some(3),
    Some(3),
    Some(4),
    None,
    Some(5),
    Some(5),
    None,
    Some(6),
];

pub const SUPER_CLASSES: [&str; NUM_SUPER] = [
    "No Finding",
    "Cardiomediastinal",
    "Lung Lesion",
    "Consolidation",
    "Atelectasis",
    "Pleural",
    "Support Device",
];

/// Super-class indices (0-based) by their conventional 1-based numbering.
pub const SUPER_NO_FINDING: usize = 0;
pub const SUPER_CARDIAC: usize = 1;
pub const SUPER_LESION: usize = 2;
pub const SUPER_CONSOLIDATION: usize = 3;
pub const SUPER_ATELECTASIS: usize = 4;
pub const SUPER_PLEURAL: usize = 5;
pub const SUPER_DEVICE: usize = 6;

/// Fixed 14 → 7 class hierarchy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    pub fine_classes: Vec<String>,
    pub super_classes: Vec<String>,
    pub mapping: Vec<Option<usize>>,
}

impl Default for ClassTaxonomy {
    fn default() -> Self {
        Self {
            fine_classes: FINE_CLASSES.iter().map(|s| s.to_string()).collect(),
            super_classes: SUPER_CLASSES.iter().map(|s| s.to_string()).collect(),
            mapping: FINE_TO_SUPER.to_vec(),
        }
    }
}

impl ClassTaxonomy {
    /// Fine classes grouped under super-class `s`.
    pub fn members(&self, s: usize) -> Vec<usize> {
        self.mapping.iter().enumerate().filter(|(_, m)| **m == Some(s)).map(|(c, _)| c).collect()
    }

    /// Fine classes with no super-class.
    pub fn unassigned(&self) -> Vec<usize> {
        self.mapping.iter().enumerate().filter(|(_, m)| m.is_none()).map(|(c, _)| c).collect()
    }

    pub fn is_guidance_target(&self, s: usize) -> bool {
        s < self.super_classes.len()
    }
}

/// `labels7[s] = 1` iff any fine member of `s` is positive.
pub fn to_superclass(labels14: &[u8; NUM_FINE]) -> [u8; NUM_SUPER] {
    let mut out = [0u8; NUM_SUPER];
    for (c, &l) in labels14.iter().enumerate() {
        if let (1, Some(s)) = (l, FINE_TO_SUPER[c]) {
            out[s] = 1;
        }
    }
    out
}

/// File-system friendly class name, e.g. `pleural_effusion`.
pub fn slug(name: &str) -> String {
    name.to_lowercase().replace([' ', '-'], "_")
}

pub fn fine_index(name: &str) -> Option<usize> {
    FINE_CLASSES.iter().position(|c| c.eq_ignore_ascii_case(name.trim()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(pos: &[usize]) -> [u8; NUM_FINE] {
        let mut l = [0u8; NUM_FINE];
        pos.iter().for_each(|&c| l[c] = 1);
        l
    }

    #[test]
    fn edema_maps_to_consolidation_group_only() {
        assert_eq!(to_superclass(&labels(&[EDEMA])), [0, 0, 0, 1, 0, 0, 0]);
    }

    #[test]
    fn pleural_pair_maps_to_pleural_group_only() {
        assert_eq!(to_superclass(&labels(&[PLEURAL_EFFUSION, PLEURAL_OTHER])), [0, 0, 0, 0, 0, 1, 0]);
    }

    #[test]
    fn empty_and_unassigned_map_to_nothing() {
        assert_eq!(to_superclass(&labels(&[])), [0; NUM_SUPER]);
        assert_eq!(to_superclass(&labels(&[LUNG_OPACITY, PNEUMOTHORAX, FRACTURE])), [0; NUM_SUPER]);
    }

    #[test]
    fn taxonomy_shape() {
        let t = ClassTaxonomy::default();
        assert_eq!(t.super_classes.len(), 7);
        assert_eq!(t.super_classes[0], "No Finding");
        assert_eq!(t.unassigned(), vec![LUNG_OPACITY, PNEUMOTHORAX, FRACTURE]);
        assert_eq!(t.members(SUPER_CONSOLIDATION), vec![EDEMA, CONSOLIDATION, PNEUMONIA]);
        for s in 0..NUM_SUPER {
            assert!(!t.members(s).is_empty());
        }
    }
}
