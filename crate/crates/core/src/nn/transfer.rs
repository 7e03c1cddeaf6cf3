//! Parameter surgery for moving a trained model to a wider input or a
//! larger domain.

use serde::{Deserialize, Serialize};

use super::{Block, ModelConfig, Real, UNet};
use crate::error::{Error, Result};

/// Copy of `src` taking one extra input channel whose first-layer weights
/// are zero, so a zero-valued new channel leaves the output unchanged.
pub fn expand_channels<T: Real>(src: &UNet<T>, new_in_channels: usize) -> Result<UNet<T>> {
    let old = src.config().in_channels;
    if new_in_channels != old + 1 {
        return Err(Error::Transfer(format!(
            "channel expansion must add exactly one channel: {old} -> {new_in_channels}"
        )));
    }
    let config = ModelConfig {
        in_channels: new_in_channels,
        ..src.config().clone()
    };
    let mut dst = UNet::<T>::new(config)?;
    let first = src.encoder()[0].weight;
    let n_params = dst.params().len();
    for i in 0..n_params {
        let s = &src.params()[i];
        let d = &mut dst.params_mut()[i];
        if i == first {
            let cout = s.shape[0];
            let taps = s.shape[2] * s.shape[3];
            let mut w = vec![T::zero(); cout * new_in_channels * taps];
            for o in 0..cout {
                let from = &s.data[o * old * taps..][..old * taps];
                w[o * new_in_channels * taps..][..old * taps].copy_from_slice(from);
            }
            d.data = w;
        } else {
            d.data.clone_from(&s.data);
        }
    }
    Ok(dst)
}

/// Where a block of a depth-expanded model got its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum BlockOrigin {
    Copied { from: String },
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthMapping {
    pub source_size: usize,
    pub target_size: usize,
    pub encoder: Vec<BlockOrigin>,
    pub decoder: Vec<BlockOrigin>,
}

fn same_shape(a: &Block, b: &Block) -> bool {
    a.cin == b.cin
        && a.cout == b.cout
        && a.transposed == b.transposed
        && a.bias.is_some() == b.bias.is_some()
        && a.norm.is_some() == b.norm.is_some()
        && a.tanh == b.tanh
}

fn copy_block<T: Real>(src: &UNet<T>, s: &Block, dst: &mut UNet<T>, d: &Block) {
    for (si, di) in s.param_indices().into_iter().zip(d.param_indices()) {
        let data = src.params()[si].data.clone();
        dst.params_mut()[di].data = data;
    }
}

/// Model for a domain of twice the side. The outermost `outer` encoder and
/// decoder blocks (default `depth - 1`) are copied where shapes agree; the
/// new innermost blocks keep their fresh initialization.
pub fn expand_depth<T: Real>(
    src: &UNet<T>,
    new_size: usize,
    outer: Option<usize>,
) -> Result<(UNet<T>, DepthMapping)> {
    let a = src.config().input_size;
    if new_size != 2 * a {
        return Err(Error::Transfer(format!(
            "depth expansion must double the input size: {a} -> {new_size}"
        )));
    }
    let d_src = src.config().depth();
    let k = outer.unwrap_or(d_src - 1);
    if k > d_src {
        return Err(Error::Transfer(format!("cannot copy {k} of {d_src} blocks")));
    }
    let config = ModelConfig {
        input_size: new_size,
        ..src.config().clone()
    };
    let mut dst = UNet::<T>::new(config)?;
    let d_dst = d_src + 1;
    let mut encoder = vec![BlockOrigin::Fresh; d_dst];
    let mut decoder = vec![BlockOrigin::Fresh; d_dst];
    for (i, origin) in encoder.iter_mut().enumerate().take(k) {
        let (s, d) = (src.encoder()[i], dst.encoder()[i]);
        if same_shape(&s, &d) {
            copy_block(src, &s, &mut dst, &d);
            *origin = BlockOrigin::Copied { from: format!("enc{i}") };
        }
    }
    for j in d_src - k..d_src {
        let (s, d) = (src.decoder()[j], dst.decoder()[j + 1]);
        if same_shape(&s, &d) {
            copy_block(src, &s, &mut dst, &d);
            decoder[j + 1] = BlockOrigin::Copied { from: format!("dec{j}") };
        }
    }
    Ok((
        dst,
        DepthMapping {
            source_size: a,
            target_size: new_size,
            encoder,
            decoder,
        },
    ))
}
