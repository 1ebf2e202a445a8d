use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Coarse object category of a pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
    Background,
}

impl ObjectClass {
    /// All classes in category-table order.
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::Vehicle,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
        ObjectClass::Background,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
            ObjectClass::Background => "background",
        }
    }

    pub fn is_movable(self) -> bool {
        self != ObjectClass::Background
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown class `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MotionStatus {
    Static,
    Moving,
    #[default]
    Undetermined,
}

impl fmt::Display for MotionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionStatus::Static => "static",
            MotionStatus::Moving => "moving",
            MotionStatus::Undetermined => "undetermined",
        })
    }
}
