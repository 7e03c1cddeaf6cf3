use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::GridSpec;
use crate::error::{Error, Result};

/// Obstacle outline in node units (`x` along columns, `y` along rows).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Closed box `[x, x + width] x [y, y + height]`.
    Rectangle {
        x: f64,
        y: f64,
        width: f64,
        height: f64,
    },
    Circle { cx: f64, cy: f64, radius: f64 },
}

impl Shape {
    /// Axis-aligned square covering `nodes x nodes` lattice nodes, centered on
    /// the domain center.
    pub fn centered_square(grid: &GridSpec, nodes: usize) -> Shape {
        let c = (grid.nx - 1) as f64 / 2.0;
        let half = (nodes - 1) as f64 / 2.0;
        Shape::Rectangle {
            x: (c - half).round(),
            y: (c - half).round(),
            width: (nodes - 1) as f64,
            height: (nodes - 1) as f64,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rectangle {
                x: x0,
                y: y0,
                width,
                height,
            } => x >= x0 && x <= x0 + width && y >= y0 && y <= y0 + height,
            Shape::Circle { cx, cy, radius } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= radius * radius
            }
        }
    }

    /// `(xmin, xmax, ymin, ymax)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Rectangle {
                x,
                y,
                width,
                height,
            } => (x, x + width, y, y + height),
            Shape::Circle { cx, cy, radius } => (cx - radius, cx + radius, cy - radius, cy + radius),
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let extent_ok = match *self {
            Shape::Rectangle { width, height, .. } => width >= 1.0 && height >= 1.0,
            Shape::Circle { radius, .. } => radius >= 1.0,
        };
        let finite = {
            let (a, b, c, d) = self.bounds();
            [a, b, c, d].iter().all(|v| v.is_finite())
        };
        if !finite || !extent_ok {
            return Err(Error::Obstacle(format!(
                "{self:?}: extent must be finite and at least one node"
            )));
        }
        let (xmin, xmax, ymin, ymax) = self.bounds();
        let last_x = (grid.nx - 1) as f64;
        let last_y = (grid.ny - 1) as f64;
        if xmin <= 0.0 || ymin <= 0.0 || xmax >= last_x || ymax >= last_y {
            return Err(Error::Obstacle(format!(
                "{self:?} touches the outer boundary of a {}x{} grid",
                grid.nx, grid.ny
            )));
        }
        Ok(())
    }
}

/// Binary solid map: 1 marks solid nodes, 0 fluid.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryMask {
    pub mask: Array2<u8>,
    pub shapes: Vec<Shape>,
}

impl GeometryMask {
    pub fn empty(grid: &GridSpec) -> Self {
        GeometryMask {
            mask: Array2::zeros(grid.shape()),
            shapes: Vec::new(),
        }
    }

    pub fn is_solid(&self, i: usize, j: usize) -> bool {
        self.mask[[j, i]] == 1
    }

    pub fn solid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn as_f64(&self) -> Array2<f64> {
        self.mask.mapv(f64::from)
    }
}

/// Marks every node whose center lies inside any shape (ties count as solid).
pub fn rasterize_obstacles(shapes: &[Shape], grid: &GridSpec) -> Result<GeometryMask> {
    for s in shapes {
        s.validate(grid)?;
    }
    let mut mask = Array2::<u8>::zeros(grid.shape());
    for s in shapes {
        let (xmin, xmax, ymin, ymax) = s.bounds();
        let i0 = xmin.floor().max(0.0) as usize;
        let i1 = (xmax.ceil() as usize).min(grid.nx - 1);
        let j0 = ymin.floor().max(0.0) as usize;
        let j1 = (ymax.ceil() as usize).min(grid.ny - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                if s.contains(i as f64, j as f64) {
                    mask[[j, i]] = 1;
                }
            }
        }
    }
    Ok(GeometryMask {
        mask,
        shapes: shapes.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Scans every node of the lattice against every shape.
    fn enumerate(shapes: &[Shape], n: usize) -> usize {
        let mut count = 0;
        for j in 0..n {
            for i in 0..n {
                if shapes.iter().any(|s| s.contains(i as f64, j as f64)) {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn centered_square_has_64_nodes() {
        let g = GridSpec::square(64).unwrap();
        let sq = Shape::centered_square(&g, 8);
        let m = rasterize_obstacles(&[sq], &g).unwrap();
        assert_eq!(enumerate(&[sq], 64), 64);
        assert_eq!(m.solid_count(), 64);
    }

    #[test]
    fn empty_list_gives_empty_mask() {
        let g = GridSpec::square(32).unwrap();
        let m = rasterize_obstacles(&[], &g).unwrap();
        assert_eq!(m.solid_count(), 0);
    }

    #[test]
    fn three_disjoint_circles_add_up() {
        let g = GridSpec::square(64).unwrap();
        let circles = [
            Shape::Circle { cx: 15.0, cy: 40.0, radius: 4.0 },
            Shape::Circle { cx: 32.0, cy: 20.0, radius: 5.5 },
            Shape::Circle { cx: 48.3, cy: 44.7, radius: 3.2 },
        ];
        let total = rasterize_obstacles(&circles, &g).unwrap().solid_count();
        let per_shape: usize = circles.iter().map(|c| enumerate(&[*c], 64)).sum();
        assert_eq!(total, per_shape);
        assert_eq!(total, enumerate(&circles, 64));
    }

    #[test]
    fn node_on_circle_counts_as_solid() {
        let g = GridSpec::square(16).unwrap();
        let m = rasterize_obstacles(&[Shape::Circle { cx: 8.0, cy: 8.0, radius: 2.0 }], &g).unwrap();
        assert!(m.is_solid(10, 8));
        assert!(m.is_solid(8, 6));
        assert!(!m.is_solid(10, 9));
    }

    #[test]
    fn boundary_touching_shapes_rejected() {
        let g = GridSpec::square(32).unwrap();
        let touching = Shape::Rectangle { x: 0.0, y: 5.0, width: 4.0, height: 4.0 };
        assert!(matches!(rasterize_obstacles(&[touching], &g), Err(Error::Obstacle(_))));
        let big = Shape::Circle { cx: 16.0, cy: 16.0, radius: 15.5 };
        assert!(rasterize_obstacles(&[big], &g).is_err());
        let tiny = Shape::Circle { cx: 16.0, cy: 16.0, radius: 0.5 };
        assert!(rasterize_obstacles(&[tiny], &g).is_err());
    }

    fn arb_shape() -> impl Strategy<Value = Shape> {
        prop_oneof![
            (2.0..20.0f64, 2.0..20.0f64, 1.0..8.0f64, 1.0..8.0f64)
                .prop_map(|(x, y, width, height)| Shape::Rectangle { x, y, width, height }),
            (8.0..22.0f64, 8.0..22.0f64, 1.0..6.0f64)
                .prop_map(|(cx, cy, radius)| Shape::Circle { cx, cy, radius }),
        ]
    }

    proptest! {
        #[test]
        fn mask_is_binary_and_order_free(shapes in proptest::collection::vec(arb_shape(), 0..4)) {
            let g = GridSpec::square(32).unwrap();
            let m = rasterize_obstacles(&shapes, &g).unwrap();
            prop_assert!(m.mask.iter().all(|&x| x == 0 || x == 1));
            let mut rev = shapes.clone();
            rev.reverse();
            let m2 = rasterize_obstacles(&rev, &g).unwrap();
            prop_assert_eq!(&m.mask, &m2.mask);
            prop_assert_eq!(m.solid_count(), enumerate(&shapes, 32));
        }
    }
}
