//! Binary checkpoints, little-endian throughout:
//!
//! ```text
//! "CLWC" | u32 version | u32 config length | config JSON
//! u32 mode tag | u32 d | u32 hidden1 | u32 hidden2
//! 10 tensors: u32 rows | u32 cols | rows*cols f64
//! u8 has_state, then (if 1) the training state
//! ```
//!
//! The training state holds the iteration counter, refresh count, optimizer
//! accumulators, the dropout and selector generators, and every cluster state,
//! which is enough to continue a run exactly where it stopped.

use std::path::Path;

use crate::clustering::{ClusterMap, ClusterState};
use crate::dataio::SelectorState;
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams, ParamTensors, SuppressionMode};
use crate::numerics::{Mat, RngState};

use super::config::TrainConfig;
use super::optim::RmsProp;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CLWC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Number of completed iterations.
    pub iteration: u64,
    /// Number of cluster refreshes performed so far.
    pub refreshes: u64,
    pub optimizer: RmsProp,
    pub dropout_rng: RngState,
    pub selector: SelectorState,
    /// Absent when the clustering loss is disabled.
    pub clusters: Option<ClusterMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub state: Option<TrainState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len());
        self.0.extend_from_slice(v);
    }
    fn floats(&mut self, v: &[f64]) {
        self.u32(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn mat(&mut self, m: &Mat) {
        self.u32(m.rows());
        self.u32(m.cols());
        m.as_slice().iter().for_each(|&x| self.f64(x));
    }
    fn tensors(&mut self, t: &ParamTensors) {
        t.tensors().into_iter().for_each(|m| self.mat(m));
    }
    fn rng(&mut self, s: &RngState) {
        self.0.extend_from_slice(&s.seed);
        self.u64(s.stream);
        self.0.extend_from_slice(&s.word_pos.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

type Parse<T> = std::result::Result<T, String>;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Parse<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated checkpoint")?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Parse<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Parse<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Parse<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }
    fn u64(&mut self) -> Parse<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Parse<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn bool(&mut self) -> Parse<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(format!("invalid flag byte {other}")),
        }
    }
    fn bytes(&mut self) -> Parse<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }
    fn floats(&mut self) -> Parse<Vec<f64>> {
        let n = self.u32()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn mat(&mut self) -> Parse<Mat> {
        let (rows, cols) = (self.u32()?, self.u32()?);
        let n = rows.checked_mul(cols).ok_or("tensor size overflow")?;
        if n.saturating_mul(8) > self.buf.len() - self.pos {
            return Err("truncated checkpoint".into());
        }
        let data = (0..n).map(|_| self.f64()).collect::<Parse<Vec<f64>>>()?;
        Mat::from_vec(rows, cols, data).map_err(|e| e.to_string())
    }
    fn tensors(&mut self) -> Parse<ParamTensors> {
        Ok(ParamTensors {
            w1: self.mat()?,
            b1: self.mat()?,
            w2: self.mat()?,
            b2: self.mat()?,
            w3: self.mat()?,
            b3: self.mat()?,
            wn1: self.mat()?,
            bn1: self.mat()?,
            wn2: self.mat()?,
            bn2: self.mat()?,
        })
    }
    fn rng(&mut self) -> Parse<RngState> {
        Ok(RngState { seed: self.array()?, stream: self.u64()?, word_pos: u128::from_le_bytes(self.array()?) })
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);
    w.bytes(serde_json::to_string(&ckpt.config).expect("config serializes").as_bytes());
    let arch = &ckpt.params.arch;
    w.u32(arch.mode.tag() as usize);
    w.u32(arch.d);
    w.u32(arch.hidden1);
    w.u32(arch.hidden2);
    w.tensors(&ckpt.params.tensors);
    match &ckpt.state {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            w.u64(s.iteration);
            w.u64(s.refreshes);
            w.u64(s.optimizer.steps);
            w.f64(s.optimizer.decay);
            w.f64(s.optimizer.eps);
            w.tensors(&s.optimizer.accum);
            w.rng(&s.dropout_rng);
            w.u64(s.selector.order.len() as u64);
            s.selector.order.iter().for_each(|&i| w.u64(i as u64));
            w.u64(s.selector.cursor as u64);
            w.u64(s.selector.epoch);
            w.rng(&s.selector.rng);
            w.u8(s.selector.shuffle as u8);
            match &s.clusters {
                None => w.u8(0),
                Some(map) => {
                    w.u8(1);
                    w.u64(map.len() as u64);
                    for state in map.values() {
                        w.bytes(state.video_id.as_bytes());
                        w.floats(&state.c1);
                        w.floats(&state.c2);
                        w.bytes(&state.assignments);
                    }
                }
            }
        }
    }
    w.0
}

fn parse(buf: &[u8]) -> Parse<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).map_err(|_| "magic mismatch")? != CHECKPOINT_MAGIC {
        return Err("magic mismatch".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(format!("unsupported version {version}"));
    }
    let config: TrainConfig = serde_json::from_slice(r.bytes()?).map_err(|e| format!("embedded config: {e}"))?;
    let tag = r.u32()?;
    let mode = SuppressionMode::from_tag(tag as u32).ok_or(format!("unknown suppression mode tag {tag}"))?;
    let arch = Architecture { mode, d: r.u32()?, hidden1: r.u32()?, hidden2: r.u32()? };
    let tensors = r.tensors()?;
    if !tensors.same_shapes(&ParamTensors::zeros(&arch)) {
        return Err("parameter shapes disagree with the stored architecture".into());
    }
    let params = ModelParams { arch, tensors };
    let state = if r.bool()? {
        let iteration = r.u64()?;
        let refreshes = r.u64()?;
        let steps = r.u64()?;
        let decay = r.f64()?;
        let eps = r.f64()?;
        let accum = r.tensors()?;
        if !accum.same_shapes(&params.tensors) {
            return Err("optimizer shapes disagree with the parameters".into());
        }
        let dropout_rng = r.rng()?;
        let k = r.u64()? as usize;
        if k > buf.len() {
            return Err("truncated checkpoint".into());
        }
        let order = (0..k).map(|_| r.u64().map(|i| i as usize)).collect::<Parse<Vec<_>>>()?;
        let selector =
            SelectorState { order, cursor: r.u64()? as usize, epoch: r.u64()?, rng: r.rng()?, shuffle: r.bool()? };
        let clusters = if r.bool()? {
            let n = r.u64()?;
            let mut map = ClusterMap::new();
            for _ in 0..n {
                let id = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| "video id is not UTF-8")?;
                let c1 = r.floats()?;
                let c2 = r.floats()?;
                let assignments = r.bytes()?.to_vec();
                if c1.len() != c2.len() || assignments.iter().any(|&a| a != 1 && a != 2) {
                    return Err(format!("malformed cluster state for {id:?}"));
                }
                map.insert(id.clone(), ClusterState::new(id, c1, c2, assignments));
            }
            Some(map)
        } else {
            None
        };
        Some(TrainState {
            iteration,
            refreshes,
            optimizer: RmsProp { decay, eps, accum, steps },
            dropout_rng,
            selector,
            clusters,
        })
    } else {
        None
    };
    if r.pos != buf.len() {
        return Err("trailing bytes after checkpoint".into());
    }
    Ok(Checkpoint { config, params, state })
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    parse(bytes).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
