use serde::{Deserialize, Serialize};
use std::fmt;

use crate::grid::{BoundarySpec, GridSpec, Problem, Shape};

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Interval { min, max }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    fn check(&self, name: &str, x: f64) -> Result<(), RangeViolation> {
        if x.is_nan() || x < self.min {
            return Err(RangeViolation::below(name, x, self.min));
        }
        if x > self.max {
            return Err(RangeViolation::above(name, x, self.max));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Circle,
}

impl ShapeKind {
    pub fn of(shape: &Shape) -> Self {
        match shape {
            Shape::Rectangle { .. } => ShapeKind::Rectangle,
            Shape::Circle { .. } => ShapeKind::Circle,
        }
    }
}

/// Obstacle population of a stage, in node units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleRanges {
    pub min_count: usize,
    pub max_count: usize,
    pub kinds: Vec<ShapeKind>,
    /// Nodes covered along each rectangle side.
    pub rect_side: Interval,
    /// Rectangles must be squares.
    pub square: bool,
    pub circle_radius: Interval,
    /// Minimum clearance, in nodes, between an obstacle and the outer boundary.
    pub margin: f64,
}

impl ObstacleRanges {
    /// One square of `side x side` nodes at any admissible location.
    pub fn fixed_square(side: usize) -> Self {
        ObstacleRanges {
            min_count: 1,
            max_count: 1,
            kinds: vec![ShapeKind::Rectangle],
            rect_side: Interval::new(side as f64, side as f64),
            square: true,
            circle_radius: Interval::new(0.0, 0.0),
            margin: 2.0,
        }
    }

    /// One to three rectangles (4-12 nodes per side) or circles (radius
    /// 3-8 nodes).
    pub fn mixed() -> Self {
        ObstacleRanges {
            min_count: 1,
            max_count: 3,
            kinds: vec![ShapeKind::Rectangle, ShapeKind::Circle],
            rect_side: Interval::new(4.0, 12.0),
            square: false,
            circle_radius: Interval::new(3.0, 8.0),
            margin: 2.0,
        }
    }
}

/// Admissible boundary and obstacle parameters of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub problem: Problem,
    /// Lid speed for the cavity, horizontal inlet speed for internal flow.
    pub u0: Interval,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<Interval>,
    /// Moving-lid segment; `None` means the whole lid moves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lid_start: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lid_extent: Option<Interval>,
    /// `None` means no obstacles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacles: Option<ObstacleRanges>,
}

/// A request parameter outside the trained range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeViolation {
    pub parameter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// `"min"`, `"max"`, `"required"` or `"unsupported"`.
    pub bound: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
}

impl RangeViolation {
    fn below(name: &str, value: f64, limit: f64) -> Self {
        RangeViolation {
            parameter: name.into(),
            value: Some(value),
            bound: "min".into(),
            limit: Some(limit),
        }
    }

    fn above(name: &str, value: f64, limit: f64) -> Self {
        RangeViolation {
            parameter: name.into(),
            value: Some(value),
            bound: "max".into(),
            limit: Some(limit),
        }
    }

    fn other(name: &str, bound: &str) -> Self {
        RangeViolation {
            parameter: name.into(),
            value: None,
            bound: bound.into(),
            limit: None,
        }
    }
}

impl fmt::Display for RangeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (v, l) = (self.value.unwrap_or(f64::NAN), self.limit.unwrap_or(f64::NAN));
        match self.bound.as_str() {
            "min" => write!(f, "{} = {v} is below the minimum {l}", self.parameter),
            "max" => write!(f, "{} = {v} exceeds the maximum {l}", self.parameter),
            "required" => write!(f, "{} is required by this model", self.parameter),
            _ => write!(f, "{} is not supported by this model", self.parameter),
        }
    }
}

impl std::error::Error for RangeViolation {}

impl ParamRanges {
    pub fn cavity(u0: Interval, lid: Option<(Interval, Interval)>) -> Self {
        ParamRanges {
            problem: Problem::Cavity,
            u0,
            v0: None,
            lid_start: lid.map(|l| l.0),
            lid_extent: lid.map(|l| l.1),
            obstacles: None,
        }
    }

    pub fn internal(u0: Interval, v0: Interval, obstacles: Option<ObstacleRanges>) -> Self {
        ParamRanges {
            problem: Problem::Internal,
            u0,
            v0: Some(v0),
            lid_start: None,
            lid_extent: None,
            obstacles,
        }
    }

    /// First parameter of `bc` and `shapes` outside these ranges.
    pub fn check(&self, bc: &BoundarySpec, shapes: &[Shape], grid: &GridSpec) -> Result<(), RangeViolation> {
        match self.problem {
            Problem::Cavity => {
                let Some(lid) = bc.lid else {
                    return Err(RangeViolation::other("lid", "required"));
                };
                self.u0.check("lid.u0", lid.u0)?;
                match (self.lid_start, self.lid_extent) {
                    (Some(s), Some(e)) => {
                        s.check("lid.start_fraction", lid.start_fraction)?;
                        e.check("lid.extent_fraction", lid.extent_fraction)?;
                        let end = lid.start_fraction + lid.extent_fraction;
                        Interval::new(0.0, 1.0 + 1e-12).check("lid.start_fraction + lid.extent_fraction", end)?;
                    }
                    _ => {
                        Interval::new(0.0, 0.0).check("lid.start_fraction", lid.start_fraction)?;
                        Interval::new(1.0, 1.0).check("lid.extent_fraction", lid.extent_fraction)?;
                    }
                }
            }
            Problem::Internal | Problem::Custom => {
                let Some(inlet) = bc.inlet else {
                    return Err(RangeViolation::other("inlet", "required"));
                };
                self.u0.check("inlet.u0", inlet.u0)?;
                if let Some(v) = self.v0 {
                    v.check("inlet.v0", inlet.v0)?;
                }
            }
        }
        let Some(obs) = &self.obstacles else {
            return Interval::new(0.0, 0.0).check("obstacles.count", shapes.len() as f64);
        };
        Interval::new(obs.min_count as f64, obs.max_count as f64).check("obstacles.count", shapes.len() as f64)?;
        let last = (grid.nx - 1) as f64;
        for (k, s) in shapes.iter().enumerate() {
            let name = |p: &str| format!("obstacles[{k}].{p}");
            if !obs.kinds.contains(&ShapeKind::of(s)) {
                return Err(RangeViolation::other(&name("kind"), "unsupported"));
            }
            match *s {
                Shape::Rectangle { width, height, .. } => {
                    obs.rect_side.check(&name("width_nodes"), width + 1.0)?;
                    obs.rect_side.check(&name("height_nodes"), height + 1.0)?;
                    if obs.square {
                        Interval::new(width, width).check(&name("height"), height)?;
                    }
                }
                Shape::Circle { radius, .. } => obs.circle_radius.check(&name("radius"), radius)?,
            }
            let (x0, x1, y0, y1) = s.bounds();
            let inside = Interval::new(obs.margin, last - obs.margin);
            inside.check(&name("xmin"), x0)?;
            inside.check(&name("xmax"), x1)?;
            inside.check(&name("ymin"), y0)?;
            inside.check(&name("ymax"), y1)?;
        }
        Ok(())
    }
}
