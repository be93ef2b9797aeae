use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DynamicsSeq, Segment};
use crate::error::{Error, Result};
use crate::linalg::{from_row_major, to_row_major};
use crate::lqr::{CostSpec, Theta};

/// On-disk instance schema. Matrices are flat row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub psi2: f64,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    pub segments: Vec<SegmentFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFile {
    pub len: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
}

fn check_len(what: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Dimension(format!("{what} has {} entries, expected {expected}", v.len())));
    }
    Ok(())
}

impl InstanceFile {
    pub fn from_seq(seq: &DynamicsSeq) -> Self {
        Self {
            n: seq.n(),
            d: seq.d(),
            horizon: seq.horizon(),
            psi2: seq.psi2(),
            q: to_row_major(seq.cost().q()),
            r: to_row_major(seq.cost().r()),
            segments: seq
                .segments()
                .iter()
                .map(|s| SegmentFile { len: s.len, a: to_row_major(s.theta.a()), b: to_row_major(s.theta.b()) })
                .collect(),
        }
    }

    pub fn to_seq(&self) -> Result<DynamicsSeq> {
        let (n, d) = (self.n, self.d);
        check_len("Q", &self.q, n * n)?;
        check_len("R", &self.r, d * d)?;
        let cost = CostSpec::new(from_row_major(n, n, &self.q), from_row_major(d, d, &self.r), self.psi2)?;
        let segments = self
            .segments
            .iter()
            .map(|s| {
                check_len("A", &s.a, n * n)?;
                check_len("B", &s.b, n * d)?;
                Ok(Segment { len: s.len, theta: Theta::new(from_row_major(n, n, &s.a), from_row_major(n, d, &s.b))? })
            })
            .collect::<Result<Vec<_>>>()?;
        let seq = DynamicsSeq::new(segments, cost)?;
        if seq.horizon() != self.horizon {
            return Err(Error::InvalidArgument(format!("segments cover {} steps but T = {}", seq.horizon(), self.horizon)));
        }
        Ok(seq)
    }

    pub fn read(path: &Path) -> Result<DynamicsSeq> {
        let file: InstanceFile = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        file.to_seq()
    }

    pub fn write(seq: &DynamicsSeq, path: &Path) -> Result<()> {
        let w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(w, &Self::from_seq(seq))?;
        Ok(())
    }
}
