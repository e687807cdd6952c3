//! Lossless network checkpoints.
//!
//! Floats are stored as the 16-digit hex form of their IEEE-754 bits, so a
//! load reproduces `W`, `e` and `d` exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::model::{Activation, NetworkParams, TaskSpec};
use crate::numerics::Matrix;
use crate::training::{DaleMask, StopReason};

use super::write_atomic;

pub const FORMAT_VERSION: u32 = 1;

/// Matrix with hex-encoded entries, one string per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<String>,
}

impl From<&Matrix> for HexMatrix {
    fn from(m: &Matrix) -> Self {
        let data = (0..m.rows())
            .map(|i| m.row(i).iter().map(|x| format!("{:016x}", x.to_bits())).collect())
            .collect();
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data,
        }
    }
}

impl HexMatrix {
    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.data.len() != self.rows {
            return Err(invalid("checkpoint.matrix", format!("{} rows declared, {} stored", self.rows, self.data.len())));
        }
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for row in &self.data {
            if row.len() != 16 * self.cols || !row.is_ascii() {
                return Err(invalid("checkpoint.matrix", "row has the wrong length"));
            }
            for k in 0..self.cols {
                let bits = u64::from_str_radix(&row[16 * k..16 * (k + 1)], 16).map_err(|e| invalid("checkpoint.matrix", e.to_string()))?;
                out.push(f64::from_bits(bits));
            }
        }
        Matrix::from_vec(self.rows, self.cols, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub stop: StopReason,
    #[serde(default)]
    pub dale: Option<DaleMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub activation: Activation,
    pub w: HexMatrix,
    pub encoders: HexMatrix,
    pub decoders: HexMatrix,
    pub task: TaskSpec,
    pub training: Option<TrainingMeta>,
    /// SHA-256 of the file with this field empty.
    pub content_hash: String,
}

impl Checkpoint {
    pub fn new(p: &NetworkParams, task: &TaskSpec, training: Option<TrainingMeta>) -> Self {
        let mut c = Self {
            format_version: FORMAT_VERSION,
            activation: p.activation(),
            w: p.w().into(),
            encoders: p.encoders().into(),
            decoders: p.decoders().into(),
            task: task.clone(),
            training,
            content_hash: String::new(),
        };
        c.content_hash = c.compute_hash();
        c
    }

    fn compute_hash(&self) -> String {
        let mut bare = self.clone();
        bare.content_hash.clear();
        hex::encode(Sha256::digest(serde_json::to_vec(&bare).expect("checkpoint serializes")))
    }

    pub fn params(&self) -> Result<NetworkParams> {
        NetworkParams::new(self.w.to_matrix()?, self.encoders.to_matrix()?, self.decoders.to_matrix()?, self.activation)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    /// Reads and verifies version and content hash.
    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if c.format_version != FORMAT_VERSION {
            return Err(invalid("checkpoint.format_version", format!("unsupported version {}", c.format_version)));
        }
        if c.compute_hash() != c.content_hash {
            return Err(invalid("checkpoint.content_hash", "does not match the contents"));
        }
        c.params()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{init_network, EncoderKind, InitKind};
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bit_exact_and_byte_identical() {
        let p = init_network(9, 2, Activation::Relu, InitKind::Gaussian { gain: 0.7 }, EncoderKind::Gaussian, 3).unwrap();
        let task = TaskSpec::new(vec![0.9, 0.8], vec![1.0, 2.0], 5, Default::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        Checkpoint::new(&p, &task, None).save(&a).unwrap();
        let loaded = Checkpoint::load(&a).unwrap();
        let q = loaded.params().unwrap();
        assert_eq!(q.w().as_slice(), p.w().as_slice());
        assert_eq!(q.encoders().as_slice(), p.encoders().as_slice());
        assert_eq!(q.decoders().as_slice(), p.decoders().as_slice());
        loaded.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn tampering_is_detected() {
        let p = init_network(4, 1, Activation::Linear, InitKind::Zero, EncoderKind::Gaussian, 1).unwrap();
        let task = TaskSpec::single(0.9, 1.0, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        Checkpoint::new(&p, &task, None).save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("0000000000000000", "3ff0000000000000");
        std::fs::write(&path, text).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn hex_matrix_round_trips_any_float(v in proptest::collection::vec(proptest::num::f64::ANY, 6)) {
            let m = Matrix::from_vec(2, 3, v.clone()).unwrap();
            let back = HexMatrix::from(&m).to_matrix().unwrap();
            for (a, b) in back.as_slice().iter().zip(&v) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
