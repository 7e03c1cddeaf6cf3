//! NSF1 field files: little-endian header and row-major channel data,
//! with a JSON sidecar carrying the boundary specification and shapes.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundarySpec, FlowField, GridSpec, Shape};

pub const MAGIC: &[u8; 4] = b"NSF1";
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Decoded NSF1 payload. Values are widened to f64 in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Nsf1 {
    pub dtype: Dtype,
    pub channels: Vec<Array2<f64>>,
}

impl Nsf1 {
    pub fn from_field(field: &FlowField, dtype: Dtype) -> Self {
        Nsf1 {
            dtype,
            channels: vec![field.u.clone(), field.v.clone(), field.p.clone()],
        }
    }

    pub fn into_field(self, grid: GridSpec) -> Result<FlowField> {
        if self.channels.len() != 3 {
            return Err(Error::shape("3 channels", self.channels.len()));
        }
        let mut it = self.channels.into_iter();
        let (u, v, p) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        FlowField::from_channels(grid, u, v, p)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let (ny, nx) = match self.channels.first() {
            Some(c) => c.dim(),
            None => (0, 0),
        };
        if self.channels.iter().any(|c| c.dim() != (ny, nx)) {
            return Err(Error::shape(
                format!("channels of {ny}x{nx}"),
                "channels of differing shapes",
            ));
        }
        let count = self.channels.len();
        let mut out = Vec::with_capacity(HEADER_LEN + count * nx * ny * self.dtype.width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(nx as u32).to_le_bytes());
        out.extend_from_slice(&(ny as u32).to_le_bytes());
        out.extend_from_slice(&(count as u32).to_le_bytes());
        out.push(self.dtype.tag());
        for c in &self.channels {
            for &x in c.iter() {
                match self.dtype {
                    Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                    Dtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing NSF1 header".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
        let (nx, ny, count) = (word(4), word(8), word(12));
        let dtype = match bytes[16] {
            0 => Dtype::F32,
            1 => Dtype::F64,
            t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
        };
        let expected = nx
            .checked_mul(ny)
            .and_then(|n| n.checked_mul(count))
            .and_then(|n| n.checked_mul(dtype.width()))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} data bytes for {count}x{ny}x{nx}, found {}",
                body.len()
            )));
        }
        let w = dtype.width();
        let values: Vec<f64> = body
            .chunks_exact(w)
            .map(|b| match dtype {
                Dtype::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
                Dtype::F64 => f64::from_le_bytes(b.try_into().unwrap()),
            })
            .collect();
        let plane = nx * ny;
        let channels = (0..count)
            .map(|c| {
                Array2::from_shape_vec((ny, nx), values[c * plane..(c + 1) * plane].to_vec())
                    .expect("length checked against header")
            })
            .collect();
        Ok(Nsf1 { dtype, channels })
    }
}

/// JSON companion of an NSF1 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub grid: GridSpec,
    pub channels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc: Option<BoundarySpec>,
    #[serde(default)]
    pub shapes: Vec<Shape>,
}

impl Sidecar {
    pub fn for_field(grid: GridSpec, bc: Option<BoundarySpec>, shapes: Vec<Shape>) -> Self {
        Sidecar {
            grid,
            channels: vec!["u".into(), "v".into(), "p".into()],
            bc,
            shapes,
        }
    }
}

/// `field.nsf1` -> `field.nsf1.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_nsf1(path: &Path, data: &Nsf1, sidecar: &Sidecar) -> Result<()> {
    fs::write(path, data.encode()?)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(sidecar)?)?;
    Ok(())
}

pub fn read_nsf1(path: &Path) -> Result<(Nsf1, Option<Sidecar>)> {
    let data = Nsf1::decode(&fs::read(path)?)?;
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        Some(serde_json::from_slice(&fs::read(side)?)?)
    } else {
        None
    };
    Ok((data, sidecar))
}

pub fn write_field(
    path: &Path,
    field: &FlowField,
    bc: Option<&BoundarySpec>,
    shapes: &[Shape],
) -> Result<()> {
    let sidecar = Sidecar::for_field(field.grid, bc.cloned(), shapes.to_vec());
    write_nsf1(path, &Nsf1::from_field(field, Dtype::F64), &sidecar)
}

/// Reads a 3-channel field; the grid comes from the sidecar when present.
pub fn read_field(path: &Path) -> Result<(FlowField, Option<Sidecar>)> {
    let (data, sidecar) = read_nsf1(path)?;
    let grid = match &sidecar {
        Some(s) => s.grid,
        None => {
            let (ny, nx) = data.channels.first().map(|c| c.dim()).unwrap_or((0, 0));
            if nx != ny {
                return Err(Error::InvalidGrid(format!("{nx}x{ny} field is not square")));
            }
            GridSpec::square(nx)?
        }
    };
    Ok((data.into_field(grid)?, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, c: usize, seed: u64) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..c)
            .map(|_| Array2::from_shape_fn((n, n), |_| rng.random_range(-3.0..3.0)))
            .collect()
    }

    #[test]
    fn header_layout() {
        let data = Nsf1 { dtype: Dtype::F32, channels: random(8, 4, 0) };
        let bytes = data.encode().unwrap();
        assert_eq!(&bytes[..4], b"NSF1");
        assert_eq!(&bytes[4..8], &8u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(bytes[16], 0);
        assert_eq!(bytes.len(), 17 + 4 * 64 * 4);
        // first value, row-major
        let first = f32::from_le_bytes(bytes[17..21].try_into().unwrap());
        assert_eq!(first, data.channels[0][[0, 0]] as f32);
        let second = f32::from_le_bytes(bytes[21..25].try_into().unwrap());
        assert_eq!(second, data.channels[0][[0, 1]] as f32);
    }

    #[test]
    fn f64_roundtrip_is_bit_exact() {
        let data = Nsf1 { dtype: Dtype::F64, channels: random(16, 3, 1) };
        let back = Nsf1::decode(&data.encode().unwrap()).unwrap();
        for (a, b) in data.channels.iter().zip(&back.channels) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn f32_roundtrip_of_f32_values_is_exact() {
        let mut chans = random(8, 3, 2);
        for c in chans.iter_mut() {
            c.mapv_inplace(|x| x as f32 as f64);
        }
        let data = Nsf1 { dtype: Dtype::F32, channels: chans };
        let back = Nsf1::decode(&data.encode().unwrap()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn truncated_or_foreign_files_rejected() {
        let data = Nsf1 { dtype: Dtype::F64, channels: random(8, 3, 3) };
        let bytes = data.encode().unwrap();
        assert!(Nsf1::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(Nsf1::decode(b"PNG\0aaaaaaaaaaaaaaaa").is_err());
        let mut bad = bytes.clone();
        bad[16] = 7;
        assert!(matches!(Nsf1::decode(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn field_file_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nsf1");
        let g = GridSpec::square(16).unwrap();
        let c = random(16, 3, 4);
        let f = FlowField::from_channels(g, c[0].clone(), c[1].clone(), c[2].clone()).unwrap();
        let bc = BoundarySpec::internal(0.1, 0.2);
        let shapes = [Shape::Circle { cx: 8.0, cy: 8.0, radius: 2.0 }];
        write_field(&path, &f, Some(&bc), &shapes).unwrap();
        let (back, side) = read_field(&path).unwrap();
        assert_eq!(back, f);
        let side = side.unwrap();
        assert_eq!(side.bc, Some(bc));
        assert_eq!(side.shapes, shapes.to_vec());
    }
}
