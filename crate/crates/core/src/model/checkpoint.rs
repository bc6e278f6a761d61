//! Binary model checkpoint, all fields little-endian:
//!
//! ```text
//! magic       8 bytes  "BARGRAIN"
//! version     u32      = 1
//! n_rois, t_steps, d_h, hidden, out, classifier_hidden   u64 each
//! threshold_c, tau                                       f64 each
//! mode        u8       0 full, 1 no-corr, 2 no-optim, 3 no-gconv
//! seed        u64
//! count       u32      number of parameter matrices (14)
//! per matrix: rows u64, cols u64, rows·cols f64 values row-major
//! ```

use std::fs;
use std::path::Path;

use super::{AblationMode, ClassifierHead, GcnStack, ModelConfig, ModelState, PARAMETER_MATRICES};
use crate::error::{Error, Result};
use crate::graphgen::EdgeScorer;
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"BARGRAIN";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(state: &ModelState) -> Vec<u8> {
    let c = &state.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [c.n_rois, c.t_steps, c.d_h, c.hidden, c.out, c.classifier_hidden] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&c.threshold_c.to_le_bytes());
    out.extend_from_slice(&c.tau.to_le_bytes());
    out.push(c.mode.code());
    out.extend_from_slice(&c.seed.to_le_bytes());
    let params = state.parameters();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for m in params {
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const K: usize>(&mut self) -> Result<[u8; K]> {
        let end = self.pos + K;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r.take::<8>()? != MAGIC {
        return Err(Error::Checkpoint("not a bargrain checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let config = ModelConfig {
        n_rois: r.usize()?,
        t_steps: r.usize()?,
        d_h: r.usize()?,
        hidden: r.usize()?,
        out: r.usize()?,
        classifier_hidden: r.usize()?,
        threshold_c: r.f64()?,
        tau: r.f64()?,
        mode: {
            let code = r.take::<1>()?[0];
            AblationMode::from_code(code)
                .ok_or_else(|| Error::Checkpoint(format!("unknown mode code {code}")))?
        },
        seed: r.u64()?,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("bad configuration: {e}")))?;
    let count = r.u32()? as usize;
    if count != PARAMETER_MATRICES {
        return Err(Error::Checkpoint(format!(
            "expected {PARAMETER_MATRICES} parameter matrices, found {count}"
        )));
    }
    let expected = ModelState::expected_shapes(&config);
    let mut mats = Vec::with_capacity(count);
    for (k, &(er, ec)) in expected.iter().enumerate() {
        let rows = r.usize()?;
        let cols = r.usize()?;
        if (rows, cols) != (er, ec) {
            return Err(Error::Checkpoint(format!(
                "parameter {k} is {rows}x{cols}, configuration implies {er}x{ec}"
            )));
        }
        let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        mats.push(Matrix::from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let mut it = mats.into_iter();
    let mut next = || it.next().expect("count checked");
    Ok(ModelState {
        config,
        scorer: EdgeScorer {
            extractor_w: next(),
            extractor_b: next(),
            pair_w: next(),
            pair_b: next(),
            out_w: next(),
            out_b: next(),
        },
        filtered_gcn: GcnStack {
            w0: next(),
            w1: next(),
        },
        optimal_gcn: GcnStack {
            w0: next(),
            w1: next(),
        },
        classifier: ClassifierHead {
            hidden_w: next(),
            hidden_b: next(),
            out_w: next(),
            out_b: next(),
        },
    })
}

pub fn save(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(state)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
