//! Discretized fields on a square node lattice.
//!
//! Arrays are row-major `[row, column]` with the row index `j` running along
//! `y` (upward) and the column index `i` along `x`. The top edge is the last
//! row. `u`, `v` and `p` are co-located on the same nodes.

mod boundary;
mod mask;
mod ops;

pub use boundary::{
    BoundarySpec, Condition, Edge, EdgeBc, EdgeValue, InletParams, LidParams, NeumannLink,
    Problem, ResolvedBoundary, DEFAULT_NU, DEFAULT_PIN,
};
pub use mask::{rasterize_obstacles, GeometryMask, Shape};
pub use ops::{
    embed_boundary_conditions, interpolate_field, rmse, sample_field, ChannelRmse, InputTensor,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Node spacing, `domain_length / (nx - 1)`.
    pub h: f64,
    pub domain_length: f64,
}

impl GridSpec {
    pub fn new(n: usize, domain_length: f64) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "node count must be a power of two >= 8, got {n}"
            )));
        }
        if !(domain_length.is_finite() && domain_length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "domain length must be positive, got {domain_length}"
            )));
        }
        Ok(GridSpec {
            nx: n,
            ny: n,
            h: domain_length / (n - 1) as f64,
            domain_length,
        })
    }

    /// Unit square with `n` nodes per side.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = GridSpec::new(self.nx, self.domain_length)?;
        if self.ny != self.nx {
            return Err(Error::InvalidGrid(format!(
                "only square grids are supported, got {}x{}",
                self.nx, self.ny
            )));
        }
        if (expected.h - self.h).abs() > 1e-12 * expected.h {
            return Err(Error::InvalidGrid(format!(
                "spacing {} inconsistent with L/(n-1) = {}",
                self.h, expected.h
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn depth(&self) -> usize {
        self.nx.trailing_zeros() as usize
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    pub fn is_ring(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    U,
    V,
    P,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::U, Channel::V, Channel::P];

    pub fn index(self) -> usize {
        match self {
            Channel::U => 0,
            Channel::V => 1,
            Channel::P => 2,
        }
    }
}

/// Velocity and pressure on a shared lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub p: Array2<f64>,
    pub grid: GridSpec,
}

impl FlowField {
    pub fn zeros(grid: GridSpec) -> Self {
        let shape = grid.shape();
        FlowField {
            u: Array2::zeros(shape),
            v: Array2::zeros(shape),
            p: Array2::zeros(shape),
            grid,
        }
    }

    pub fn from_channels(
        grid: GridSpec,
        u: Array2<f64>,
        v: Array2<f64>,
        p: Array2<f64>,
    ) -> Result<Self> {
        for (name, a) in [("u", &u), ("v", &v), ("p", &p)] {
            if a.dim() != grid.shape() {
                return Err(Error::shape(
                    format!("{name} {:?}", grid.shape()),
                    format!("{:?}", a.dim()),
                ));
            }
        }
        Ok(FlowField { u, v, p, grid })
    }

    pub fn channel(&self, c: Channel) -> &Array2<f64> {
        match c {
            Channel::U => &self.u,
            Channel::V => &self.v,
            Channel::P => &self.p,
        }
    }

    pub fn channel_mut(&mut self, c: Channel) -> &mut Array2<f64> {
        match c {
            Channel::U => &mut self.u,
            Channel::V => &mut self.v,
            Channel::P => &mut self.p,
        }
    }

    pub fn is_finite(&self) -> bool {
        Channel::ALL
            .iter()
            .all(|&c| self.channel(c).iter().all(|x| x.is_finite()))
    }

    pub fn check_same_shape(&self, other: &FlowField) -> Result<()> {
        if self.grid.shape() != other.grid.shape() {
            return Err(Error::shape(
                format!("{:?}", self.grid.shape()),
                format!("{:?}", other.grid.shape()),
            ));
        }
        Ok(())
    }

    /// Largest absolute difference across all three channels.
    pub fn max_abs_diff(&self, other: &FlowField) -> f64 {
        Channel::ALL
            .iter()
            .flat_map(|&c| {
                self.channel(c)
                    .iter()
                    .zip(other.channel(c).iter())
                    .map(|(a, b)| (a - b).abs())
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_non_power_of_two() {
        assert!(GridSpec::square(24).is_err());
        assert!(GridSpec::square(4).is_err());
        let g = GridSpec::square(32).unwrap();
        assert_eq!(g.depth(), 5);
        assert!((g.h - 1.0 / 31.0).abs() < 1e-15);
    }

    #[test]
    fn from_channels_checks_shape() {
        let g = GridSpec::square(8).unwrap();
        let ok = FlowField::from_channels(
            g,
            Array2::zeros((8, 8)),
            Array2::zeros((8, 8)),
            Array2::zeros((8, 8)),
        );
        assert!(ok.is_ok());
        let bad = FlowField::from_channels(
            g,
            Array2::zeros((8, 8)),
            Array2::zeros((8, 7)),
            Array2::zeros((8, 8)),
        );
        assert!(matches!(bad, Err(Error::Shape { .. })));
    }
}
