//! Curriculum stages, their sampling ranges, and warm-up dataset generation.

mod dataset;
mod ranges;

pub use dataset::{
    build_input, gen_bc_only_dataset, gen_coarse_dataset, gen_prerun_dataset, generate, load_dataset,
    sample_parameters, split_counts, DataSpec, DatasetManifest, SampleRecord, Split, MANIFEST_FILE,
    MANIFEST_VERSION,
};
pub use ranges::{Interval, ObstacleRanges, ParamRanges, RangeViolation, ShapeKind};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::grid::Problem;

/// Pre-run solver iterations for the cavity warm-up input.
pub const PRERUN_STEPS: usize = 20;
/// Side of the coarse warm-up grid.
pub const COARSE_SIZE: usize = 8;

/// How the model input is prepared from the boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// Twenty solver steps from rest.
    Prerun20,
    /// Converged 8x8 solution interpolated to the model grid.
    Coarse8,
    /// Zero interior with the boundary values embedded.
    BcOnly,
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Recipe::Prerun20 => "prerun20",
            Recipe::Coarse8 => "coarse8",
            Recipe::BcOnly => "bc-only",
        })
    }
}

/// One model of the staged curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageId {
    A0,
    A,
    B0,
    B1,
    B2,
    B3,
}

/// Parameter surgery applied to the predecessor's model before a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surgery {
    None,
    ExpandChannels,
    ExpandDepth,
}

impl StageId {
    pub const ALL: [StageId; 6] = [StageId::A0, StageId::A, StageId::B0, StageId::B1, StageId::B2, StageId::B3];

    pub fn problem(self) -> Problem {
        match self {
            StageId::A0 | StageId::A => Problem::Cavity,
            _ => Problem::Internal,
        }
    }

    pub fn recipe(self) -> Recipe {
        match self {
            StageId::A0 => Recipe::Prerun20,
            StageId::A | StageId::B3 => Recipe::BcOnly,
            StageId::B0 | StageId::B1 | StageId::B2 => Recipe::Coarse8,
        }
    }

    pub fn grid_size(self) -> usize {
        match self {
            StageId::B2 | StageId::B3 => 64,
            _ => 32,
        }
    }

    pub fn in_channels(self) -> usize {
        match self {
            StageId::B1 | StageId::B2 | StageId::B3 => 4,
            _ => 3,
        }
    }

    /// Stage whose model this stage starts from.
    pub fn predecessor(self) -> Option<StageId> {
        match self {
            StageId::A0 => None,
            StageId::A => Some(StageId::A0),
            StageId::B0 => Some(StageId::A),
            StageId::B1 => Some(StageId::B0),
            StageId::B2 => Some(StageId::B1),
            StageId::B3 => Some(StageId::B2),
        }
    }

    pub fn surgery(self) -> Surgery {
        match self {
            StageId::B1 => Surgery::ExpandChannels,
            StageId::B2 => Surgery::ExpandDepth,
            _ => Surgery::None,
        }
    }

    /// Boundary and obstacle parameters the stage trains on.
    pub fn ranges(self) -> ParamRanges {
        let speed = Interval::new(0.0, 0.5);
        match self {
            StageId::A0 => ParamRanges::cavity(speed, None),
            StageId::A => ParamRanges::cavity(speed, Some((Interval::new(0.0, 0.5), Interval::new(0.25, 1.0)))),
            StageId::B0 => ParamRanges::internal(speed, speed, None),
            StageId::B1 => ParamRanges::internal(speed, speed, Some(ObstacleRanges::fixed_square(4))),
            StageId::B2 => ParamRanges::internal(speed, speed, Some(ObstacleRanges::fixed_square(8))),
            StageId::B3 => ParamRanges::internal(speed, speed, Some(ObstacleRanges::mixed())),
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for StageId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        StageId::ALL
            .into_iter()
            .find(|st| st.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage `{s}` (expected A0, A, B0, B1, B2 or B3)")))
    }
}
