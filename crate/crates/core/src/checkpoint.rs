//! Versioned binary checkpoints.
//!
//! Layout (little-endian): 8-byte magic, `u32` version, `u8` network kind,
//! architecture, `u64` seed, `u64` step, then parameters, first and second
//! moments as `u64` length-prefixed `f64` arrays. Floats are stored as raw
//! bits, so a write-then-read reproduces the state exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{DenseLayout, DenseNet, Network, SegNet, TrainState};

const MAGIC: &[u8; 8] = b"PCSEMCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_DENSE: u8 = 0;
const KIND_SEG: u8 = 1;

#[derive(Debug, Clone)]
pub enum Checkpoint {
    Dense(TrainState<DenseNet>),
    Seg(TrainState<SegNet>),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn widths(&mut self, w: &[usize]) {
        self.u32(w.len() as u32);
        for &x in w {
            self.u64(x as u64);
        }
    }
    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.u64(x.to_bits());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn widths(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| Ok(self.u64()? as usize)).collect()
    }
    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(Error::InvalidArgument(
                "checkpoint array length exceeds file".into(),
            ));
        }
        (0..n).map(|_| Ok(f64::from_bits(self.u64()?))).collect()
    }
}

fn write_state<N: Network>(w: &mut Writer, state: &TrainState<N>) {
    w.u64(state.seed);
    w.u64(state.step);
    w.floats(state.net.params());
    w.floats(&state.first_moment);
    w.floats(&state.second_moment);
}

fn read_state<N: Network>(
    r: &mut Reader<'_>,
    build: impl FnOnce(Vec<f64>) -> Result<N>,
) -> Result<TrainState<N>> {
    let seed = r.u64()?;
    let step = r.u64()?;
    let params = r.floats()?;
    let first_moment = r.floats()?;
    let second_moment = r.floats()?;
    let net = build(params)?;
    if first_moment.len() != net.num_params() || second_moment.len() != net.num_params() {
        return Err(Error::SizeMismatch {
            what: "optimizer moments vs parameter count",
            expected: net.num_params(),
            actual: first_moment.len(),
        });
    }
    let mut state = TrainState::new(net, seed);
    state.step = step;
    state.first_moment = first_moment;
    state.second_moment = second_moment;
    Ok(state)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.u32(CHECKPOINT_VERSION);
        match self {
            Checkpoint::Dense(state) => {
                w.u8(KIND_DENSE);
                let layout = state.net.layout();
                w.widths(layout.widths());
                w.u8(layout.relu_output() as u8);
                write_state(&mut w, state);
            }
            Checkpoint::Seg(state) => {
                w.u8(KIND_SEG);
                w.widths(state.net.encoder_widths());
                w.widths(state.net.decoder_hidden());
                w.u64(state.net.num_classes() as u64);
                write_state(&mut w, state);
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::InvalidArgument("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let checkpoint = match r.u8()? {
            KIND_DENSE => {
                let widths = r.widths()?;
                let relu_output = r.u8()? != 0;
                let layout = DenseLayout::new(widths, relu_output)?;
                Checkpoint::Dense(read_state(&mut r, |p| DenseNet::from_params(layout, p))?)
            }
            KIND_SEG => {
                let encoder = r.widths()?;
                let decoder = r.widths()?;
                let classes = r.u64()? as usize;
                Checkpoint::Seg(read_state(&mut r, |p| {
                    SegNet::from_params(&encoder, &decoder, classes, p)
                })?)
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown network kind {other}"
                )))
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::InvalidArgument(
                "trailing bytes after checkpoint".into(),
            ));
        }
        Ok(checkpoint)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn into_dense(self) -> Result<TrainState<DenseNet>> {
        match self {
            Checkpoint::Dense(s) => Ok(s),
            Checkpoint::Seg(_) => Err(Error::InvalidArgument(
                "expected a dense decoder checkpoint, found a segmentation network".into(),
            )),
        }
    }

    pub fn into_seg(self) -> Result<TrainState<SegNet>> {
        match self {
            Checkpoint::Seg(s) => Ok(s),
            Checkpoint::Dense(_) => Err(Error::InvalidArgument(
                "expected a segmentation network checkpoint, found a dense decoder".into(),
            )),
        }
    }
}
