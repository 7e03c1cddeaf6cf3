//! Finite-difference stencils shared by the solver and the physics loss.
//!
//! All differences are in node units: `half_dx(a)` is `(a[i+1] - a[i-1]) / 2`
//! and `lap5(a)` is the 5-point Laplacian without the `1/h^2` factor.

use ndarray::{s, Array2, Zip};

use crate::error::{Error, Result};
use crate::grid::FlowField;

/// 5-point Laplacian kernel.
pub const LAPLACIAN_KERNEL: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

#[inline(always)]
pub fn lap5(a: &[f64], k: usize, nx: usize) -> f64 {
    a[k - 1] + a[k + 1] + a[k - nx] + a[k + nx] - 4.0 * a[k]
}

#[inline(always)]
pub fn half_dx(a: &[f64], k: usize) -> f64 {
    0.5 * (a[k + 1] - a[k - 1])
}

#[inline(always)]
pub fn half_dy(a: &[f64], k: usize, nx: usize) -> f64 {
    0.5 * (a[k + nx] - a[k - nx])
}

fn check_min_shape(a: &Array2<f64>) -> Result<()> {
    let (ny, nx) = a.dim();
    if ny < 3 || nx < 3 {
        return Err(Error::shape("at least 3x3", format!("{ny}x{nx}")));
    }
    Ok(())
}

/// Valid cross-correlation with [`LAPLACIAN_KERNEL`]; output is `(ny-2, nx-2)`.
pub fn laplacian_conv(a: &Array2<f64>) -> Result<Array2<f64>> {
    check_min_shape(a)?;
    let (ny, nx) = a.dim();
    let mut out = Array2::zeros((ny - 2, nx - 2));
    Zip::from(&mut out)
        .and(a.windows((3, 3)))
        .for_each(|o, w| {
            let mut acc = 0.0;
            for (dj, row) in LAPLACIAN_KERNEL.iter().enumerate() {
                for (di, &kv) in row.iter().enumerate() {
                    if kv != 0.0 {
                        acc += kv * w[[dj, di]];
                    }
                }
            }
            *o = acc;
        });
    Ok(out)
}

fn half_x(a: &Array2<f64>) -> Array2<f64> {
    let (ny, nx) = a.dim();
    let r = a.slice(s![1..ny - 1, 2..nx]);
    let l = a.slice(s![1..ny - 1, 0..nx - 2]);
    (&r - &l) * 0.5
}

fn half_y(a: &Array2<f64>) -> Array2<f64> {
    let (ny, nx) = a.dim();
    let t = a.slice(s![2..ny, 1..nx - 1]);
    let b = a.slice(s![0..ny - 2, 1..nx - 1]);
    (&t - &b) * 0.5
}

/// Half central differences of every channel on interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralDiffs {
    pub u_x: Array2<f64>,
    pub u_y: Array2<f64>,
    pub v_x: Array2<f64>,
    pub v_y: Array2<f64>,
    pub p_x: Array2<f64>,
    pub p_y: Array2<f64>,
}

pub fn central_diffs(field: &FlowField) -> Result<CentralDiffs> {
    check_min_shape(&field.u)?;
    Ok(CentralDiffs {
        u_x: half_x(&field.u),
        u_y: half_y(&field.u),
        v_x: half_x(&field.v),
        v_y: half_y(&field.v),
        p_x: half_x(&field.p),
        p_y: half_y(&field.p),
    })
}

/// Interior view `(ny-2, nx-2)` of a full-size array.
pub fn interior(a: &Array2<f64>) -> ndarray::ArrayView2<'_, f64> {
    let (ny, nx) = a.dim();
    a.slice(s![1..ny - 1, 1..nx - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn kernel_sums_to_zero_and_is_rotation_symmetric() {
        let sum: f64 = LAPLACIAN_KERNEL.iter().flatten().sum();
        assert_eq!(sum, 0.0);
        for j in 0..3 {
            for i in 0..3 {
                assert_eq!(LAPLACIAN_KERNEL[j][i], LAPLACIAN_KERNEL[i][2 - j]);
            }
        }
    }

    #[test]
    fn laplacian_of_constant_and_quadratic() {
        let c = Array2::from_elem((9, 9), 2.5);
        assert!(laplacian_conv(&c).unwrap().iter().all(|&x| x == 0.0));
        let q = Array2::from_shape_fn((9, 9), |(j, i)| (i * i + j * j) as f64);
        let l = laplacian_conv(&q).unwrap();
        assert_eq!(l.dim(), (7, 7));
        assert!(l.iter().all(|&x| x == 4.0));
        assert!(laplacian_conv(&Array2::zeros((2, 5))).is_err());
    }

    #[test]
    fn half_difference_of_unit_ramp() {
        let g = GridSpec::square(8).unwrap();
        let mut f = FlowField::zeros(g);
        f.u = Array2::from_shape_fn((8, 8), |(_, i)| i as f64);
        let d = central_diffs(&f).unwrap();
        assert!(d.u_x.iter().all(|&x| x == 1.0));
        assert!(d.u_y.iter().all(|&x| x == 0.0));
    }
}
