use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{BoundarySpec, Channel, FlowField, GeometryMask, GridSpec};
use crate::error::{Error, Result};

/// Stacked model input: `u, v, p` and optionally the solid mask.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub channels: Vec<Array2<f64>>,
    pub grid: GridSpec,
    pub bc: BoundarySpec,
    pub mask: Option<GeometryMask>,
}

impl InputTensor {
    pub fn in_channels(&self) -> usize {
        self.channels.len()
    }

    /// Appends the mask channel and zeroes `u, v, p` on solid nodes.
    pub fn with_mask(mut self, mask: GeometryMask) -> Result<Self> {
        if mask.mask.dim() != self.grid.shape() {
            return Err(Error::shape(
                format!("mask {:?}", self.grid.shape()),
                format!("{:?}", mask.mask.dim()),
            ));
        }
        if self.channels.len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "mask channel already present ({} channels)",
                self.channels.len()
            )));
        }
        for ch in self.channels.iter_mut() {
            ndarray::Zip::from(ch).and(&mask.mask).for_each(|x, &m| {
                if m == 1 {
                    *x = 0.0;
                }
            });
        }
        self.channels.push(mask.as_f64());
        self.mask = Some(mask);
        Ok(self)
    }

    /// The `u, v, p` channels as a field.
    pub fn flow(&self) -> FlowField {
        FlowField {
            u: self.channels[0].clone(),
            v: self.channels[1].clone(),
            p: self.channels[2].clone(),
            grid: self.grid,
        }
    }
}

/// Writes the boundary values of `bc` around `interior` (zeros when `None`).
/// Zero-gradient edges copy their inward neighbor.
pub fn embed_boundary_conditions(
    bc: &BoundarySpec,
    grid: &GridSpec,
    interior: Option<&FlowField>,
) -> Result<InputTensor> {
    grid.validate()?;
    let mut field = match interior {
        Some(f) => {
            if f.grid.shape() != grid.shape() {
                return Err(Error::shape(
                    format!("{:?}", grid.shape()),
                    format!("{:?}", f.grid.shape()),
                ));
            }
            let mut f = f.clone();
            f.grid = *grid;
            f
        }
        None => FlowField::zeros(*grid),
    };
    bc.resolve(grid, None)?.apply(&mut field);
    Ok(InputTensor {
        channels: vec![field.u, field.v, field.p],
        grid: *grid,
        bc: bc.clone(),
        mask: None,
    })
}

fn bilinear(src: &Array2<f64>, n_src: usize, n_dst: usize) -> Array2<f64> {
    let scale = (n_src - 1) as f64 / (n_dst - 1) as f64;
    let locate = |k: usize| -> (usize, f64) {
        let s = k as f64 * scale;
        let k0 = (s.floor() as usize).min(n_src - 2);
        (k0, s - k0 as f64)
    };
    Array2::from_shape_fn((n_dst, n_dst), |(j, i)| {
        let (i0, tx) = locate(i);
        let (j0, ty) = locate(j);
        let a = src[[j0, i0]];
        let b = src[[j0, i0 + 1]];
        let c = src[[j0 + 1, i0]];
        let d = src[[j0 + 1, i0 + 1]];
        (1.0 - ty) * ((1.0 - tx) * a + tx * b) + ty * ((1.0 - tx) * c + tx * d)
    })
}

/// Bilinear resampling of every channel onto `target`.
pub fn interpolate_field(src: &FlowField, target: &GridSpec) -> Result<FlowField> {
    if src.grid.nx != src.grid.ny || target.nx != target.ny {
        return Err(Error::InvalidGrid("interpolation requires square grids".into()));
    }
    if target.nx < src.grid.nx {
        return Err(Error::InvalidGrid(format!(
            "target {} smaller than source {}",
            target.nx, src.grid.nx
        )));
    }
    sample_field(src, target)
}

/// Bilinear sampling of `src` at the nodes of any square `target` grid,
/// coarser or finer.
pub fn sample_field(src: &FlowField, target: &GridSpec) -> Result<FlowField> {
    if src.grid.nx != src.grid.ny || target.nx != target.ny {
        return Err(Error::InvalidGrid("sampling requires square grids".into()));
    }
    let (ns, nd) = (src.grid.nx, target.nx);
    Ok(FlowField {
        u: bilinear(&src.u, ns, nd),
        v: bilinear(&src.v, ns, nd),
        p: bilinear(&src.p, ns, nd),
        grid: *target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRmse {
    pub u: f64,
    pub v: f64,
    pub p: f64,
}

impl ChannelRmse {
    pub fn get(&self, c: Channel) -> f64 {
        match c {
            Channel::U => self.u,
            Channel::V => self.v,
            Channel::P => self.p,
        }
    }
}

/// Per-channel RMSE over fluid nodes.
pub fn rmse(pred: &FlowField, truth: &FlowField, exclude: Option<&GeometryMask>) -> Result<ChannelRmse> {
    pred.check_same_shape(truth)?;
    if let Some(m) = exclude {
        if m.mask.dim() != pred.grid.shape() {
            return Err(Error::shape(
                format!("mask {:?}", pred.grid.shape()),
                format!("{:?}", m.mask.dim()),
            ));
        }
    }
    let per_channel = |c: Channel| -> f64 {
        let a = pred.channel(c);
        let b = truth.channel(c);
        let mut sum = 0.0;
        let mut count = 0usize;
        for ((idx, x), y) in a.indexed_iter().zip(b.iter()) {
            if exclude.is_some_and(|m| m.mask[idx] == 1) {
                continue;
            }
            sum += (x - y) * (x - y);
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            (sum / count as f64).sqrt()
        }
    };
    Ok(ChannelRmse {
        u: per_channel(Channel::U),
        v: per_channel(Channel::V),
        p: per_channel(Channel::P),
    })
}
