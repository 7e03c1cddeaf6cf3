use serde::{Deserialize, Serialize};

use super::{Channel, FlowField, GeometryMask, GridSpec};
use crate::error::{Error, Result};

/// Kinematic viscosity shared by both example problems. With `L = 1` a lid
/// speed of 0.5 gives `Re = 10`.
pub const DEFAULT_NU: f64 = 0.05;

/// Pressure reference node: the left-wall node above the origin corner. It
/// sits in the stencil of interior node `(1, 1)`, which removes the constant
/// null space of the pressure equation; the corner `(0, 0)` copies it.
pub const DEFAULT_PIN: (usize, usize) = (0, 1);

/// Upper bound of every sampled lid or inlet velocity component.
pub const MAX_VELOCITY_COMPONENT: f64 = 0.5;

/// Prescribed values along one edge, indexed by the position along the edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeValue {
    Uniform(f64),
    Profile(Vec<f64>),
    /// `value` on nodes whose fractional position lies in the closed interval
    /// `[start_fraction, start_fraction + extent_fraction]`, zero elsewhere.
    Segment {
        value: f64,
        start_fraction: f64,
        extent_fraction: f64,
    },
}

impl EdgeValue {
    fn at(&self, k: usize, len: usize) -> Result<f64> {
        match self {
            EdgeValue::Uniform(v) => Ok(*v),
            EdgeValue::Profile(values) => {
                if values.len() != len {
                    return Err(Error::InvalidBoundary(format!(
                        "edge profile has {} values for an edge of {} nodes",
                        values.len(),
                        len
                    )));
                }
                Ok(values[k])
            }
            EdgeValue::Segment {
                value,
                start_fraction,
                extent_fraction,
            } => {
                const TIE: f64 = 1e-12;
                let s = k as f64 / (len - 1) as f64;
                let inside = s >= start_fraction - TIE && s <= start_fraction + extent_fraction + TIE;
                Ok(if inside { *value } else { 0.0 })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Condition {
    Dirichlet { value: EdgeValue },
    NeumannZero,
}

impl Condition {
    pub fn dirichlet(value: f64) -> Self {
        Condition::Dirichlet {
            value: EdgeValue::Uniform(value),
        }
    }

    pub fn is_neumann(&self) -> bool {
        matches!(self, Condition::NeumannZero)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeBc {
    pub u: Condition,
    pub v: Condition,
    pub p: Condition,
}

impl EdgeBc {
    pub fn get(&self, c: Channel) -> &Condition {
        match c {
            Channel::U => &self.u,
            Channel::V => &self.v,
            Channel::P => &self.p,
        }
    }

    /// No-slip wall with zero-gradient pressure.
    pub fn wall() -> Self {
        EdgeBc {
            u: Condition::dirichlet(0.0),
            v: Condition::dirichlet(0.0),
            p: Condition::NeumannZero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Top,
    Bottom,
    Left,
    Right,
}

impl Edge {
    /// Edge governing a ring node. Corners belong to the top and bottom edges.
    pub fn of_node(grid: &GridSpec, i: usize, j: usize) -> Option<Edge> {
        if j == grid.ny - 1 {
            Some(Edge::Top)
        } else if j == 0 {
            Some(Edge::Bottom)
        } else if i == 0 {
            Some(Edge::Left)
        } else if i == grid.nx - 1 {
            Some(Edge::Right)
        } else {
            None
        }
    }

    /// Neighbor one node inward along the edge normal.
    fn inward(self, i: usize, j: usize) -> (usize, usize) {
        match self {
            Edge::Top => (i, j - 1),
            Edge::Bottom => (i, j + 1),
            Edge::Left => (i + 1, j),
            Edge::Right => (i - 1, j),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// Lid-driven cavity.
    Cavity,
    /// Channel with an inclined velocity inlet on the left and a pressure
    /// outlet on the right.
    Internal,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidParams {
    pub u0: f64,
    pub start_fraction: f64,
    pub extent_fraction: f64,
}

impl LidParams {
    pub fn full(u0: f64) -> Self {
        LidParams {
            u0,
            start_fraction: 0.0,
            extent_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InletParams {
    pub u0: f64,
    pub v0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub problem: Problem,
    pub top: EdgeBc,
    pub bottom: EdgeBc,
    pub left: EdgeBc,
    pub right: EdgeBc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lid: Option<LidParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlet: Option<InletParams>,
    /// Kinematic viscosity; the viscous coefficient of the momentum equations.
    pub nu: f64,
    /// Non-corner boundary node `(i, j)` whose pressure is fixed to zero.
    /// Used when every edge carries a zero-gradient pressure condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_pin: Option<(usize, usize)>,
}

impl BoundarySpec {
    /// Cavity with the whole top edge moving at `u0`.
    pub fn cavity(u0: f64) -> Self {
        Self::cavity_lid(LidParams::full(u0))
    }

    pub fn cavity_lid(lid: LidParams) -> Self {
        let lid_value = if lid.start_fraction <= 0.0 && lid.extent_fraction >= 1.0 {
            EdgeValue::Uniform(lid.u0)
        } else {
            EdgeValue::Segment {
                value: lid.u0,
                start_fraction: lid.start_fraction,
                extent_fraction: lid.extent_fraction,
            }
        };
        BoundarySpec {
            problem: Problem::Cavity,
            top: EdgeBc {
                u: Condition::Dirichlet { value: lid_value },
                v: Condition::dirichlet(0.0),
                p: Condition::NeumannZero,
            },
            bottom: EdgeBc::wall(),
            left: EdgeBc::wall(),
            right: EdgeBc::wall(),
            lid: Some(lid),
            inlet: None,
            nu: DEFAULT_NU,
            pressure_pin: Some(DEFAULT_PIN),
        }
    }

    /// Channel flow: inclined inlet `(u0, v0)` on the left edge, no-slip
    /// walls top and bottom, zero-gradient velocity and `p = 0` on the right.
    pub fn internal(u0: f64, v0: f64) -> Self {
        BoundarySpec {
            problem: Problem::Internal,
            top: EdgeBc::wall(),
            bottom: EdgeBc::wall(),
            left: EdgeBc {
                u: Condition::dirichlet(u0),
                v: Condition::dirichlet(v0),
                p: Condition::NeumannZero,
            },
            right: EdgeBc {
                u: Condition::NeumannZero,
                v: Condition::NeumannZero,
                p: Condition::dirichlet(0.0),
            },
            lid: None,
            inlet: Some(InletParams { u0, v0 }),
            nu: DEFAULT_NU,
            pressure_pin: None,
        }
    }

    /// Every edge a no-slip wall, pressure pinned next to the origin.
    pub fn homogeneous() -> Self {
        BoundarySpec {
            problem: Problem::Custom,
            top: EdgeBc::wall(),
            bottom: EdgeBc::wall(),
            left: EdgeBc::wall(),
            right: EdgeBc::wall(),
            lid: None,
            inlet: None,
            nu: DEFAULT_NU,
            pressure_pin: Some(DEFAULT_PIN),
        }
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn edge(&self, e: Edge) -> &EdgeBc {
        match e {
            Edge::Top => &self.top,
            Edge::Bottom => &self.bottom,
            Edge::Left => &self.left,
            Edge::Right => &self.right,
        }
    }

    /// Characteristic speed: lid speed or inlet magnitude.
    pub fn reference_speed(&self) -> f64 {
        if let Some(lid) = self.lid {
            lid.u0.abs()
        } else if let Some(inlet) = self.inlet {
            inlet.u0.hypot(inlet.v0)
        } else {
            0.0
        }
    }

    /// `Re = U L / nu`.
    pub fn reynolds(&self, domain_length: f64) -> f64 {
        self.reference_speed() * domain_length / self.nu
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::InvalidBoundary(format!(
                "viscosity must be positive, got {}",
                self.nu
            )));
        }
        let in_range = |name: &str, x: f64| -> Result<()> {
            if !(0.0..=MAX_VELOCITY_COMPONENT).contains(&x) {
                return Err(Error::InvalidBoundary(format!(
                    "{name} = {x} outside [0, {MAX_VELOCITY_COMPONENT}]"
                )));
            }
            Ok(())
        };
        if let Some(lid) = self.lid {
            in_range("lid u0", lid.u0)?;
            let end = lid.start_fraction + lid.extent_fraction;
            if lid.start_fraction < 0.0 || lid.extent_fraction <= 0.0 || end > 1.0 + 1e-12 {
                return Err(Error::InvalidBoundary(format!(
                    "lid segment [{}, {}] outside the top edge",
                    lid.start_fraction, end
                )));
            }
        }
        if let Some(inlet) = self.inlet {
            in_range("inlet u0", inlet.u0)?;
            in_range("inlet v0", inlet.v0)?;
        }
        Ok(())
    }

    pub fn resolve(&self, grid: &GridSpec, mask: Option<&GeometryMask>) -> Result<ResolvedBoundary> {
        ResolvedBoundary::new(self, grid, mask)
    }
}

/// Boundary node copying the value of its inward neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeumannLink {
    pub node: usize,
    pub from: usize,
    pub channel: Channel,
}

/// Boundary conditions expanded onto the node lattice (flat indices `j * nx + i`).
#[derive(Debug, Clone)]
pub struct ResolvedBoundary {
    pub grid: GridSpec,
    /// Imposed values, outer ring plus no-slip on solid nodes.
    pub dirichlet: Vec<(usize, Channel, f64)>,
    /// Zero-gradient links; side edges come before top/bottom so that corner
    /// copies see already-updated side values.
    pub neumann: Vec<NeumannLink>,
    /// `N_b`: nodes carrying at least one imposed value.
    pub dirichlet_nodes: usize,
    /// `N_N`: nodes carrying at least one zero-gradient condition.
    pub neumann_nodes: usize,
    pub solid: Vec<bool>,
    /// Per channel, whether the node value is imposed.
    pub fixed: [Vec<bool>; 3],
    pub pressure_pin: Option<usize>,
}

impl ResolvedBoundary {
    fn new(bc: &BoundarySpec, grid: &GridSpec, mask: Option<&GeometryMask>) -> Result<Self> {
        let (nx, ny) = (grid.nx, grid.ny);
        let n = nx * ny;
        let solid = match mask {
            Some(m) => {
                if m.mask.dim() != grid.shape() {
                    return Err(Error::shape(
                        format!("mask {:?}", grid.shape()),
                        format!("{:?}", m.mask.dim()),
                    ));
                }
                m.mask.iter().map(|&x| x == 1).collect()
            }
            None => vec![false; n],
        };
        let pin = match bc.pressure_pin {
            Some((i, j)) => {
                let corner = (i == 0 || i == nx - 1) && (j == 0 || j == ny - 1);
                if i >= nx || j >= ny || !grid.is_ring(i, j) || corner {
                    return Err(Error::InvalidBoundary(format!(
                        "pressure pin ({i}, {j}) must be a non-corner boundary node"
                    )));
                }
                Some(j * nx + i)
            }
            None => None,
        };

        let mut dirichlet = Vec::new();
        let mut side_links = Vec::new();
        let mut cap_links = Vec::new();
        let mut fixed = [vec![false; n], vec![false; n], vec![false; n]];
        let mut dirichlet_nodes = 0;
        let mut neumann_nodes = 0;

        for j in 0..ny {
            for i in 0..nx {
                let Some(edge) = Edge::of_node(grid, i, j) else {
                    continue;
                };
                let idx = j * nx + i;
                let (k, len) = match edge {
                    Edge::Top | Edge::Bottom => (i, nx),
                    Edge::Left | Edge::Right => (j, ny),
                };
                let (ii, jj) = edge.inward(i, j);
                let from = jj * nx + ii;
                let mut has_d = false;
                let mut has_n = false;
                for c in Channel::ALL {
                    if c == Channel::P && pin == Some(idx) {
                        dirichlet.push((idx, c, 0.0));
                        fixed[c.index()][idx] = true;
                        has_d = true;
                        continue;
                    }
                    match bc.edge(edge).get(c) {
                        Condition::Dirichlet { value } => {
                            dirichlet.push((idx, c, value.at(k, len)?));
                            fixed[c.index()][idx] = true;
                            has_d = true;
                        }
                        Condition::NeumannZero => {
                            let link = NeumannLink {
                                node: idx,
                                from,
                                channel: c,
                            };
                            match edge {
                                Edge::Left | Edge::Right => side_links.push(link),
                                Edge::Top | Edge::Bottom => cap_links.push(link),
                            }
                            has_n = true;
                        }
                    }
                }
                dirichlet_nodes += has_d as usize;
                neumann_nodes += has_n as usize;
            }
        }
        for (idx, &s) in solid.iter().enumerate() {
            if s {
                let (i, j) = (idx % nx, idx / nx);
                if grid.is_ring(i, j) {
                    return Err(Error::Obstacle(format!(
                        "solid node ({i}, {j}) on the outer boundary"
                    )));
                }
                for c in [Channel::U, Channel::V] {
                    dirichlet.push((idx, c, 0.0));
                    fixed[c.index()][idx] = true;
                }
                dirichlet_nodes += 1;
            }
        }
        side_links.extend(cap_links);
        Ok(ResolvedBoundary {
            grid: *grid,
            dirichlet,
            neumann: side_links,
            dirichlet_nodes,
            neumann_nodes,
            solid,
            fixed,
            pressure_pin: pin,
        })
    }

    pub fn has_mask(&self) -> bool {
        self.solid.iter().any(|&s| s)
    }

    /// Writes imposed values and zeroes pressure inside solids.
    pub fn impose_dirichlet(&self, field: &mut FlowField) {
        for &(idx, c, value) in &self.dirichlet {
            flat_mut(field, c)[idx] = value;
        }
        let p = flat_mut(field, Channel::P);
        for (idx, &s) in self.solid.iter().enumerate() {
            if s {
                p[idx] = 0.0;
            }
        }
    }

    pub fn copy_neumann(&self, field: &mut FlowField) {
        for link in &self.neumann {
            let a = flat_mut(field, link.channel);
            a[link.node] = a[link.from];
        }
    }

    pub fn apply(&self, field: &mut FlowField) {
        self.impose_dirichlet(field);
        self.copy_neumann(field);
    }
}

pub(crate) fn flat_mut(field: &mut FlowField, c: Channel) -> &mut [f64] {
    field
        .channel_mut(c)
        .as_slice_mut()
        .expect("flow field arrays are contiguous")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cavity_counts() {
        let g = GridSpec::square(32).unwrap();
        let r = BoundarySpec::cavity(0.5).resolve(&g, None).unwrap();
        assert_eq!(r.dirichlet_nodes, 4 * 32 - 4);
        assert_eq!(r.neumann_nodes, 4 * 32 - 4 - 1);
        assert_eq!(r.pressure_pin, Some(32));
    }

    #[test]
    fn internal_outlet_is_neumann_in_velocity() {
        let g = GridSpec::square(16).unwrap();
        let r = BoundarySpec::internal(0.2, 0.3).resolve(&g, None).unwrap();
        let outlet = 5 * 16 + 15;
        assert!(!r.fixed[0][outlet] && !r.fixed[1][outlet] && r.fixed[2][outlet]);
        let inlet = 5 * 16;
        assert!(r.fixed[0][inlet] && r.fixed[1][inlet] && !r.fixed[2][inlet]);
    }

    #[test]
    fn validation_ranges() {
        assert!(BoundarySpec::cavity(0.5).validate().is_ok());
        assert!(BoundarySpec::cavity(0.6).validate().is_err());
        assert!(BoundarySpec::internal(0.5, 0.51).validate().is_err());
        assert!(BoundarySpec::cavity(0.2).with_nu(0.0).validate().is_err());
        let lid = LidParams {
            u0: 0.3,
            start_fraction: 0.6,
            extent_fraction: 0.5,
        };
        assert!(BoundarySpec::cavity_lid(lid).validate().is_err());
    }

    #[test]
    fn reynolds_of_full_lid() {
        let bc = BoundarySpec::cavity(0.5);
        assert!((bc.reynolds(1.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip() {
        let bc = BoundarySpec::cavity_lid(LidParams {
            u0: 0.4,
            start_fraction: 0.25,
            extent_fraction: 0.5,
        });
        let s = serde_json::to_string(&bc).unwrap();
        let back: BoundarySpec = serde_json::from_str(&s).unwrap();
        assert_eq!(bc, back);
    }
}
