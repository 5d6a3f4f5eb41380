//! The fixed seven-class label space for macroscale fracture surfaces.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of classes in the canonical taxonomy.
pub const NUM_CLASSES: usize = 7;

/// A fracture-surface class. The discriminant is the class id stored in masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Class {
    Background = 0,
    SideGroove = 1,
    ErosionNotch = 2,
    FatiguePrecrack = 3,
    DuctileFracture = 4,
    BrittleFracture = 5,
    Other = 6,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [
        Class::Background,
        Class::SideGroove,
        Class::ErosionNotch,
        Class::FatiguePrecrack,
        Class::DuctileFracture,
        Class::BrittleFracture,
        Class::Other,
    ];

    /// Classes that belong to the fracture surface proper (between the side grooves).
    pub const FRACTURE: [Class; 4] = [
        Class::ErosionNotch,
        Class::FatiguePrecrack,
        Class::DuctileFracture,
        Class::BrittleFracture,
    ];

    #[inline]
    pub fn id(self) -> u8 {
        self as u8
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_id(id: u8) -> Option<Class> {
        Class::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Background => "background",
            Class::SideGroove => "side_groove",
            Class::ErosionNotch => "erosion_notch",
            Class::FatiguePrecrack => "fatigue_precrack",
            Class::DuctileFracture => "ductile_fracture",
            Class::BrittleFracture => "brittle_fracture",
            Class::Other => "other",
        }
    }

    /// Resolves a free-form annotation label ("Brittle fracture", "side-groove", ...)
    /// to a class. Case, spaces and hyphens are ignored.
    pub fn from_name(label: &str) -> Option<Class> {
        let norm: String = label
            .trim()
            .chars()
            .map(|c| match c {
                ' ' | '-' => '_',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        Class::ALL.iter().copied().find(|c| c.name() == norm)
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The ordered (id, name) table. There is exactly one taxonomy; the type exists so
/// that masks and reports can carry an explicit reference to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassTaxonomy;

impl ClassTaxonomy {
    pub fn canonical() -> Self {
        ClassTaxonomy
    }

    pub fn len(&self) -> usize {
        NUM_CLASSES
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entries(&self) -> impl Iterator<Item = (u8, &'static str)> {
        Class::ALL.iter().map(|c| (c.id(), c.name()))
    }

    pub fn resolve(&self, label: &str) -> Option<Class> {
        Class::from_name(label)
    }

    pub fn contains_id(&self, id: u8) -> bool {
        (id as usize) < NUM_CLASSES
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn canonical_order_and_uniqueness() {
        let t = ClassTaxonomy::canonical();
        let entries: Vec<_> = t.entries().collect();
        assert_eq!(entries.len(), 7);
        assert_eq!(entries[0], (0, "background"));
        for (i, (id, _)) in entries.iter().enumerate() {
            assert_eq!(*id as usize, i);
        }
        let names: HashSet<_> = entries.iter().map(|e| e.1).collect();
        assert_eq!(names.len(), 7);
    }

    #[test]
    fn label_normalization() {
        assert_eq!(Class::from_name("Brittle fracture"), Some(Class::BrittleFracture));
        assert_eq!(Class::from_name("side-groove"), Some(Class::SideGroove));
        assert_eq!(Class::from_name(" OTHER "), Some(Class::Other));
        assert_eq!(Class::from_name("rust stain"), None);
        for c in Class::ALL {
            assert_eq!(Class::from_id(c.id()), Some(c));
        }
        assert_eq!(Class::from_id(7), None);
    }
}
