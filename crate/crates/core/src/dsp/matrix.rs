use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DspError;

const MAGIC: &[u8; 4] = b"VXF1";
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mfcc,
    LogMel,
}

impl FeatureKind {
    pub fn code(self) -> u32 {
        match self {
            FeatureKind::Mfcc => 0,
            FeatureKind::LogMel => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Mfcc),
            1 => Some(FeatureKind::LogMel),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::LogMel => "log_mel",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mfcc" => Ok(FeatureKind::Mfcc),
            "log_mel" | "logmel" | "mel" => Ok(FeatureKind::LogMel),
            other => Err(format!("unknown feature kind '{other}'")),
        }
    }
}

/// Frames x dims matrix of finite features, tagged with its kind and the
/// hash of the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    kind: FeatureKind,
    config_hash: [u8; 32],
}

impl FeatureMatrix {
    pub fn new(
        data: Vec<f64>,
        n_rows: usize,
        n_cols: usize,
        kind: FeatureKind,
        config_hash: [u8; 32],
    ) -> Result<Self, DspError> {
        if n_rows == 0 || n_cols == 0 {
            return Err(DspError::Format(format!("empty {n_rows}x{n_cols} matrix")));
        }
        if data.len() != n_rows * n_cols {
            return Err(DspError::Format(format!(
                "{} values for a {n_rows}x{n_cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DspError::NonFinite("feature matrix"));
        }
        Ok(Self {
            data,
            n_rows,
            n_cols,
            kind,
            config_hash,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn config_hash(&self) -> &[u8; 32] {
        &self.config_hash
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }

    /// `VXF1` layout: magic, u32 kind, u32 rows, u32 cols, 32-byte config
    /// hash, then row-major little-endian f64 values.
    pub fn to_vxf_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        out.extend_from_slice(&(self.n_rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_cols as u32).to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_vxf_bytes(bytes: &[u8]) -> Result<Self, DspError> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(DspError::Format("missing VXF1 header".into()));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let kind = FeatureKind::from_code(u32_at(4))
            .ok_or_else(|| DspError::Format(format!("unknown kind code {}", u32_at(4))))?;
        let n_rows = u32_at(8) as usize;
        let n_cols = u32_at(12) as usize;
        let config_hash: [u8; 32] = bytes[16..48].try_into().unwrap();
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != n_rows * n_cols * 8 {
            return Err(DspError::Format(format!(
                "payload is {} bytes, header declares {n_rows}x{n_cols}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(data, n_rows, n_cols, kind, config_hash)
    }

    pub fn write_vxf(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_vxf_bytes())
    }

    pub fn read_vxf(path: &Path) -> Result<Self, crate::Error> {
        let bytes = std::fs::read(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(Self::from_vxf_bytes(&bytes)?)
    }

    /// CSV with a `frame` column followed by one column per dimension.
    pub fn to_csv(&self) -> String {
        let prefix = match self.kind {
            FeatureKind::Mfcc => "c",
            FeatureKind::LogMel => "mel",
        };
        let mut out = String::from("frame");
        for j in 0..self.n_cols {
            out.push_str(&format!(",{prefix}{j}"));
        }
        out.push('\n');
        for (i, row) in self.rows().enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = FeatureMatrix::new(vec![1.0, 2.0], 1, 2, FeatureKind::LogMel, [7; 32]).unwrap();
        let b = m.to_vxf_bytes();
        assert_eq!(&b[..4], b"VXF1");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..48], &[7u8; 32]);
        assert_eq!(&b[48..56], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 64);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(FeatureMatrix::new(vec![f64::NAN], 1, 1, FeatureKind::Mfcc, [0; 32]).is_err());
        assert!(FeatureMatrix::new(vec![], 0, 3, FeatureKind::Mfcc, [0; 32]).is_err());
        assert!(FeatureMatrix::from_vxf_bytes(b"VXF0").is_err());
        let m = FeatureMatrix::new(vec![1.0, 2.0], 1, 2, FeatureKind::Mfcc, [0; 32]).unwrap();
        let b = m.to_vxf_bytes();
        assert!(FeatureMatrix::from_vxf_bytes(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn csv_export() {
        let m = FeatureMatrix::new(vec![1.0, 2.5, -1.0, 0.0], 2, 2, FeatureKind::Mfcc, [0; 32]).unwrap();
        assert_eq!(m.to_csv(), "frame,c0,c1\n0,1,2.5\n1,-1,0\n");
    }

    proptest! {
        #[test]
        fn vxf_roundtrip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>(), mel in any::<bool>()) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| ((seed.wrapping_mul(i as u64 + 1) % 10_000) as f64 - 5000.0) / 7.0)
                .collect();
            let kind = if mel { FeatureKind::LogMel } else { FeatureKind::Mfcc };
            let m = FeatureMatrix::new(data, rows, cols, kind, [seed as u8; 32]).unwrap();
            prop_assert_eq!(FeatureMatrix::from_vxf_bytes(&m.to_vxf_bytes()).unwrap(), m);
        }
    }
}
