use std::fmt;
use std::str::FromStr;

use half::{bf16, f16};

/// Floating-point storage types accepted in a checkpoint container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F16,
    BF16,
}

impl Dtype {
    /// Bytes per element.
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::BF16 => 2,
        }
    }

    /// Header spelling (`"F32"`, `"F16"`, `"BF16"`).
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
        }
    }

    /// Widen little-endian element bytes to f64, appending to `out`.
    ///
    /// Every f32, f16 and bf16 value is exactly representable in f64, so
    /// this is lossless.
    pub fn widen_into(self, bytes: &[u8], out: &mut Vec<f64>) {
        debug_assert_eq!(bytes.len() % self.size(), 0);
        match self {
            Dtype::F32 => out.extend(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64),
            ),
            Dtype::F16 => out.extend(
                bytes
                    .chunks_exact(2)
                    .map(|b| f16::from_le_bytes([b[0], b[1]]).to_f64()),
            ),
            Dtype::BF16 => out.extend(
                bytes
                    .chunks_exact(2)
                    .map(|b| bf16::from_le_bytes([b[0], b[1]]).to_f64()),
            ),
        }
    }

    /// Narrow f64 values to this dtype (round to nearest even), appending
    /// little-endian bytes to `out`.
    pub fn narrow_into(self, values: &[f64], out: &mut Vec<u8>) {
        match self {
            Dtype::F32 => {
                for &v in values {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            Dtype::F16 => {
                for &v in values {
                    out.extend_from_slice(&f16::from_f64(v).to_le_bytes());
                }
            }
            Dtype::BF16 => {
                for &v in values {
                    out.extend_from_slice(&bf16::from_f64(v).to_le_bytes());
                }
            }
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            "BF16" => Ok(Dtype::BF16),
            other => Err(other.to_string()),
        }
    }
}
