//! Flight logs and the mini-trajectory dataset cut from them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::Rotors;
use crate::error::{Error, Result};
use crate::experiment::io::write_atomic;

/// Logging period of flight data, s.
pub const LOG_PERIOD: f64 = 0.01;

const DATASET_VERSION: u32 = 2;

const LOG_HEADER: &str = "flight,t,r_x,r_y,r_z,v_x,v_y,v_z,q_w,q_x,q_y,q_z,omega_x,omega_y,omega_z,u_1,u_2,u_3,u_4";

/// One logged sample: estimated state and the command sent at that instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    /// Flights are contiguous recordings; windows never span two flights.
    pub flight: u32,
    pub t: f64,
    pub x: [f64; 13],
    pub u: Rotors,
}

/// Rows ordered by flight, then time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlightLog {
    pub rows: Vec<LogRow>,
}

impl FlightLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Index ranges of the individual flights.
    pub fn flights(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.rows.len() {
            if i == self.rows.len() || self.rows[i].flight != self.rows[start].flight {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    /// Checks strictly increasing timestamps with uniform spacing (1% tolerance)
    /// inside each flight.
    pub fn validate(&self, period: f64) -> Result<()> {
        for range in self.flights() {
            for i in range.start + 1..range.end {
                let dt = self.rows[i].t - self.rows[i - 1].t;
                if !(dt > 0.0) {
                    return Err(Error::InvalidParameter(format!("timestamps not increasing at row {i}")));
                }
                if (dt - period).abs() > 0.01 * period {
                    return Err(Error::InvalidParameter(format!(
                        "sample spacing {dt} s at row {i} deviates from {period} s"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 256);
        out.push_str(LOG_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.flight.to_string());
            out.push(',');
            out.push_str(&row.t.to_string());
            for v in row.x.iter().chain(row.u.iter()) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Parse { path: path.to_path_buf(), reason };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == LOG_HEADER => {}
            _ => return Err(bad("missing or unexpected header".into())),
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 19 {
                return Err(bad(format!("line {}: expected 19 fields, got {}", n + 2, fields.len())));
            }
            let num = |i: usize| -> Result<f64> {
                fields[i].trim().parse::<f64>().map_err(|e| bad(format!("line {}: {e}", n + 2)))
            };
            let flight = fields[0].trim().parse::<u32>().map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
            let mut x = [0.0; 13];
            for (k, xk) in x.iter_mut().enumerate() {
                *xk = num(2 + k)?;
            }
            rows.push(LogRow { flight, t: num(1)?, x, u: [num(15)?, num(16)?, num(17)?, num(18)?] });
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text, path)
    }

    /// SHA-256 of the CSV encoding, hex.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }
}

/// Mini-trajectories over a flight log.
///
/// Window `k` starts at log row `starts[k]`: its initial state is that row's
/// state, its commands are the `len` commands from that row on, and its
/// reference states are the `len` states that follow.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub len: usize,
    pub stride: usize,
    states: Vec<[f64; 13]>,
    commands: Vec<Rotors>,
    starts: Vec<usize>,
    /// First row of the flight each window belongs to.
    flight_starts: Vec<usize>,
}

/// Borrowed view of one mini-trajectory.
#[derive(Clone, Copy, Debug)]
pub struct MiniTrajectory<'a> {
    pub x0: &'a [f64; 13],
    /// Commands of the same flight sent before `x0` was logged, oldest first.
    pub u_hist: &'a [Rotors],
    pub u_seq: &'a [Rotors],
    pub x_seq: &'a [[f64; 13]],
}

impl Dataset {
    pub fn windows(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn window(&self, k: usize) -> MiniTrajectory<'_> {
        let i = self.starts[k];
        MiniTrajectory {
            x0: &self.states[i],
            u_hist: &self.commands[self.flight_starts[k]..i],
            u_seq: &self.commands[i..i + self.len],
            x_seq: &self.states[i + 1..i + 1 + self.len],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = MiniTrajectory<'_>> + '_ {
        (0..self.windows()).map(move |k| self.window(k))
    }

    /// Keeps every `n`-th window, for cheap objective evaluation.
    pub fn thinned(&self, n: usize) -> Dataset {
        let mut out = self.clone();
        out.starts = self.starts.iter().copied().step_by(n.max(1)).collect();
        out.flight_starts = self.flight_starts.iter().copied().step_by(n.max(1)).collect();
        out
    }

    /// Writes `dataset.bin` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path, source_hash: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(16 + self.states.len() * 17 * 8 + self.starts.len() * 8);
        bytes.extend_from_slice(b"QSDS");
        bytes.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.states.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.starts.len() as u64).to_le_bytes());
        for (x, u) in self.states.iter().zip(&self.commands) {
            for v in x.iter().chain(u.iter()) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (s, f) in self.starts.iter().zip(&self.flight_starts) {
            bytes.extend_from_slice(&(*s as u64).to_le_bytes());
            bytes.extend_from_slice(&(*f as u64).to_le_bytes());
        }
        write_atomic(&dir.join("dataset.bin"), &bytes)?;
        let manifest = DatasetManifest {
            len: self.len,
            stride: self.stride,
            windows: self.windows(),
            rows: self.states.len(),
            source_hash: source_hash.to_string(),
        };
        write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
        let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        let path = dir.join("dataset.bin");
        let bytes = std::fs::read(&path)?;
        let bad = |reason: &str| Error::Parse { path: path.clone(), reason: reason.to_string() };
        if bytes.len() < 24 || &bytes[..4] != b"QSDS" {
            return Err(bad("not a dataset file"));
        }
        let mut pos = 4;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(bad("unsupported version"));
        }
        let rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let windows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut f64s = |n: usize| -> Result<Vec<f64>> {
            let raw = take(n * 8)?;
            Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let mut states = Vec::with_capacity(rows);
        let mut commands = Vec::with_capacity(rows);
        for _ in 0..rows {
            let v = f64s(17)?;
            states.push(v[..13].try_into().unwrap());
            commands.push(v[13..].try_into().unwrap());
        }
        let pairs = (0..2 * windows)
            .map(|_| take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize))
            .collect::<Result<Vec<_>>>()?;
        let starts: Vec<usize> = pairs.iter().step_by(2).copied().collect();
        let flight_starts: Vec<usize> = pairs.iter().skip(1).step_by(2).copied().collect();
        if starts.iter().zip(&flight_starts).any(|(s, f)| f > s || s + manifest.len >= rows) {
            return Err(bad("window index out of range"));
        }
        if manifest.windows != windows || manifest.rows != rows {
            return Err(bad("manifest does not match data"));
        }
        Ok((Dataset { len: manifest.len, stride: manifest.stride, states, commands, starts, flight_starts }, manifest))
    }
}

/// Metadata stored next to a cached dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub len: usize,
    pub stride: usize,
    pub windows: usize,
    pub rows: usize,
    pub source_hash: String,
}

/// Cuts a log into windows of `len` commands every `stride` rows, per flight.
/// Windows that would run past the end of their flight are dropped.
pub fn build_dataset(log: &FlightLog, len: usize, stride: usize) -> Result<Dataset> {
    if len == 0 || stride == 0 {
        return Err(Error::InvalidParameter("window length and stride must be positive".into()));
    }
    if log.len() <= len {
        return Err(Error::LogTooShort { len: log.len(), window: len });
    }
    let mut starts = Vec::new();
    let mut flight_starts = Vec::new();
    for range in log.flights() {
        let mut i = range.start;
        while i + len < range.end {
            starts.push(i);
            flight_starts.push(range.start);
            i += stride;
        }
    }
    if starts.is_empty() {
        return Err(Error::LogTooShort { len: log.len(), window: len });
    }
    Ok(Dataset {
        len,
        stride,
        states: log.rows.iter().map(|r| r.x).collect(),
        commands: log.rows.iter().map(|r| r.u).collect(),
        starts,
        flight_starts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_of(n: usize, flights: &[usize]) -> FlightLog {
        let mut rows = Vec::new();
        let mut f = 0;
        let mut left = flights.first().copied().unwrap_or(n);
        let mut t = 0.0;
        for i in 0..n {
            if left == 0 {
                f += 1;
                left = flights[f];
                t = 0.0;
            }
            let mut x = [0.0; 13];
            x[0] = i as f64;
            rows.push(LogRow { flight: f as u32, t, x, u: [i as f64 * 1e-3; 4] });
            t += LOG_PERIOD;
            left -= 1;
        }
        FlightLog { rows }
    }

    #[test]
    fn window_counts() {
        assert_eq!(build_dataset(&log_of(60, &[]), 50, 10).unwrap().windows(), 1);
        assert_eq!(build_dataset(&log_of(100, &[]), 1, 1).unwrap().windows(), 99);
        let big = build_dataset(&log_of(376_780, &[]), 50, 10).unwrap();
        assert_eq!(big.windows(), 37_673);
    }

    #[test]
    fn too_short() {
        assert!(matches!(build_dataset(&log_of(50, &[]), 50, 10), Err(Error::LogTooShort { .. })));
    }

    #[test]
    fn window_contents() {
        let d = build_dataset(&log_of(60, &[]), 50, 10).unwrap();
        let w = d.window(0);
        assert_eq!(w.x0[0], 0.0);
        assert_eq!(w.u_seq.len(), 50);
        assert_eq!(w.x_seq[0][0], 1.0);
        assert_eq!(w.x_seq[49][0], 50.0);
        assert_eq!(w.u_seq[49][0], 49.0 * 1e-3);
    }

    #[test]
    fn windows_respect_flights() {
        let log = log_of(120, &[55, 65]);
        let d = build_dataset(&log, 50, 10).unwrap();
        // first flight: start 0 only; second flight (rows 55..120): 55, 65
        assert_eq!(d.starts(), &[0, 55, 65]);
        for k in 0..d.windows() {
            let s = d.starts()[k];
            assert_eq!(log.rows[s].flight, log.rows[s + d.len].flight);
        }
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let log = log_of(30, &[10, 20]);
        let back = FlightLog::from_csv(&log.to_csv(), Path::new("mem")).unwrap();
        assert_eq!(back, log);
        assert!(log.validate(LOG_PERIOD).is_ok());
        let mut broken = log.clone();
        broken.rows[3].t += 0.005;
        assert!(broken.validate(LOG_PERIOD).is_err());
    }

    #[test]
    fn binary_cache_round_trip() {
        let log = log_of(200, &[120, 80]);
        let d = build_dataset(&log, 20, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path(), &log.content_hash()).unwrap();
        let (back, manifest) = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, d);
        assert_eq!(manifest.source_hash, log.content_hash());
    }

    proptest! {
        #[test]
        fn windows_never_cross_flights(
            sizes in proptest::collection::vec(1usize..80, 1..5),
            len in 1usize..30,
            stride in 1usize..12,
        ) {
            let n: usize = sizes.iter().sum();
            let log = log_of(n, &sizes);
            match build_dataset(&log, len, stride) {
                Ok(d) => {
                    for (k, w) in d.iter().enumerate() {
                        let s = d.starts()[k];
                        prop_assert_eq!(w.x_seq.len(), len);
                        prop_assert_eq!(log.rows[s].flight, log.rows[s + len].flight);
                    }
                    let expected: usize = sizes.iter().map(|&m| if m > len { (m - len - 1) / stride + 1 } else { 0 }).sum();
                    prop_assert_eq!(d.windows(), expected);
                }
                Err(_) => prop_assert!(sizes.iter().all(|&m| m <= len)),
            }
        }
    }
}
