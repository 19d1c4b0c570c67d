//! Versioned binary policy checkpoints.
//!
//! Layout, little-endian: magic `QSCK`, `u32` version, `u8` control level,
//! `u32` history length, three `f64` action ranges, `u8` hidden and output
//! activation codes, `u32` layer count and `u32` sizes, `u64` parameter count
//! and the `f64` parameters, then the observation normalizer as an `f64`
//! sample count and one `f64` mean and variance per input.

use std::path::Path;

use crate::control::{ActionRanges, ControlLevel};
use crate::error::{Error, Result};
use crate::experiment::io::write_atomic;
use crate::learn::nn::{Activation, Mlp};
use crate::learn::policy::{ObsNorm, PolicyNet};

const MAGIC: &[u8; 4] = b"QSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub level: ControlLevel,
    pub history: usize,
    pub ranges: ActionRanges,
    pub actor: PolicyNet,
}

fn level_code(l: ControlLevel) -> u8 {
    match l {
        ControlLevel::Pwm => 0,
        ControlLevel::AttitudeRate => 1,
        ControlLevel::Attitude => 2,
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }
    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.actor.net;
        let mut out = Vec::with_capacity(64 + 8 * net.n_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(level_code(self.level));
        out.extend_from_slice(&(self.history as u32).to_le_bytes());
        for r in [self.ranges.max_rate_deg, self.ranges.max_angle_deg, self.ranges.max_thrust_g] {
            out.extend_from_slice(&r.to_le_bytes());
        }
        let (hidden, output) = net.activations();
        out.push(hidden.code());
        out.push(output.code());
        out.extend_from_slice(&(net.sizes().len() as u32).to_le_bytes());
        for s in net.sizes() {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        out.extend_from_slice(&(net.n_params() as u64).to_le_bytes());
        for p in net.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let norm = &self.actor.norm;
        out.extend_from_slice(&norm.count.to_le_bytes());
        for v in norm.mean.iter().chain(&norm.var) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { buf, pos: 0 };
        let short = || "truncated checkpoint".to_string();
        if r.take(4).ok_or_else(short)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32().ok_or_else(short)?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let level = match r.u8().ok_or_else(short)? {
            0 => ControlLevel::Pwm,
            1 => ControlLevel::AttitudeRate,
            2 => ControlLevel::Attitude,
            c => return Err(format!("unknown control level code {c}")),
        };
        let history = r.u32().ok_or_else(short)? as usize;
        let ranges = ActionRanges {
            max_rate_deg: r.f64().ok_or_else(short)?,
            max_angle_deg: r.f64().ok_or_else(short)?,
            max_thrust_g: r.f64().ok_or_else(short)?,
        };
        let hidden = Activation::from_code(r.u8().ok_or_else(short)?).ok_or("bad activation code")?;
        let output = Activation::from_code(r.u8().ok_or_else(short)?).ok_or("bad activation code")?;
        let n_sizes = r.u32().ok_or_else(short)? as usize;
        if n_sizes > 64 {
            return Err(format!("implausible layer count {n_sizes}"));
        }
        let sizes = (0..n_sizes).map(|_| r.u32().map(|s| s as usize)).collect::<Option<Vec<_>>>().ok_or_else(short)?;
        let n_params = r.u64().ok_or_else(short)? as usize;
        if n_params > buf.len().saturating_sub(r.pos) / 8 {
            return Err(short());
        }
        let params = (0..n_params).map(|_| r.f64()).collect::<Option<Vec<_>>>().ok_or_else(short)?;
        let net = Mlp::from_parts(sizes, hidden, output, params).ok_or("layer sizes do not match parameter count")?;
        let dim = net.input_dim();
        let count = r.f64().ok_or_else(short)?;
        let mut stats = (0..2 * dim).map(|_| r.f64()).collect::<Option<Vec<_>>>().ok_or_else(short)?;
        if r.pos != buf.len() {
            return Err("trailing bytes after normalizer".into());
        }
        let var = stats.split_off(dim);
        let norm = ObsNorm { count, mean: stats, var };
        Ok(Self { level, history, ranges, actor: PolicyNet { net, norm } })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint { path: path.to_path_buf(), reason })
    }
}
