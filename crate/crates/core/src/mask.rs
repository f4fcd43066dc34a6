//! Run-length criticality masks and the `.scrm` auxiliary file.
//!
//! A mask stores the maximal runs of critical elements of one variable as
//! half-open `(start, end)` pairs. The file layout, all integers
//! little-endian:
//!
//! ```text
//! b"SCRM"  version: u32 = 1  var_count: u32
//! per variable (sorted by name):
//!     name_len: u16  name: [u8; name_len]
//!     total: u64  run_count: u64  runs: [(start: u64, end: u64); run_count]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SCRM";
pub const VERSION: u32 = 1;
/// Size of an empty mask file: magic, version and variable count.
pub const HEADER_LEN: usize = 12;

/// Masks of one kernel, keyed by variable name.
pub type MaskSet = BTreeMap<String, CriticalityMask>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("bad magic, not a mask file")]
    BadMagic,
    #[error("unsupported mask file version {0}")]
    BadVersion(u32),
    #[error("mask file is truncated")]
    TruncatedFile,
    #[error("{0} trailing bytes after the last variable")]
    TrailingBytes(usize),
    #[error("runs of '{0}' are not strictly increasing, disjoint and maximal")]
    NonMonotonicRuns(String),
    #[error("a run of '{0}' extends past its total")]
    RunOutOfRange(String),
    #[error("variable name is not valid UTF-8")]
    BadName,
    #[error("variable name of {0} bytes does not fit the format")]
    NameTooLong(usize),
    #[error("variable '{0}' appears twice")]
    DuplicateVariable(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Critical/uncritical partition of one variable's elements.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct CriticalityMask {
    total: u64,
    runs: Vec<(u64, u64)>,
}

impl CriticalityMask {
    /// Validates a run list.
    pub fn new(total: u64, runs: Vec<(u64, u64)>) -> Result<Self, MaskError> {
        Self::check(total, &runs, "")?;
        Ok(CriticalityMask { total, runs })
    }

    fn check(total: u64, runs: &[(u64, u64)], name: &str) -> Result<(), MaskError> {
        let mut prev_end = None;
        for &(s, e) in runs {
            if s >= e || prev_end.is_some_and(|p| p >= s) {
                return Err(MaskError::NonMonotonicRuns(name.to_string()));
            }
            if e > total {
                return Err(MaskError::RunOutOfRange(name.to_string()));
            }
            prev_end = Some(e);
        }
        Ok(())
    }

    pub fn from_flags(flags: &[bool]) -> Self {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &f) in flags.iter().enumerate() {
            match (f, start) {
                (true, None) => start = Some(i as u64),
                (false, Some(s)) => {
                    runs.push((s, i as u64));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, flags.len() as u64));
        }
        CriticalityMask {
            total: flags.len() as u64,
            runs,
        }
    }

    pub fn all_critical(total: u64) -> Self {
        CriticalityMask {
            total,
            runs: if total > 0 { vec![(0, total)] } else { vec![] },
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn runs(&self) -> &[(u64, u64)] {
        &self.runs
    }

    pub fn n_critical(&self) -> u64 {
        self.runs.iter().map(|(s, e)| e - s).sum()
    }

    pub fn n_uncritical(&self) -> u64 {
        self.total - self.n_critical()
    }

    pub fn uncritical_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.n_uncritical() as f64 / self.total as f64
        }
    }

    pub fn is_critical(&self, i: u64) -> bool {
        let k = self.runs.partition_point(|&(s, _)| s <= i);
        k > 0 && i < self.runs[k - 1].1
    }

    pub fn to_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.total as usize];
        for &(s, e) in &self.runs {
            flags[s as usize..e as usize].fill(true);
        }
        flags
    }

    pub fn critical_indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.runs.iter().flat_map(|&(s, e)| s..e)
    }

    pub fn uncritical_indices(&self) -> impl Iterator<Item = u64> + '_ {
        let gaps = self
            .runs
            .iter()
            .scan(0u64, |prev, &(s, e)| {
                let gap = *prev..s;
                *prev = e;
                Some(gap)
            })
            .collect::<Vec<_>>();
        let tail = self.runs.last().map_or(0, |r| r.1)..self.total;
        gaps.into_iter().chain(std::iter::once(tail)).flatten()
    }
}

/// What restart writes into uncritical positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FillPolicy {
    Zero,
    /// Leave whatever the destination buffer holds.
    Keep,
    /// NaN, so that any read of an uncritical element shows in the output.
    Poison,
}

impl FillPolicy {
    pub const ALL: [FillPolicy; 3] = [FillPolicy::Zero, FillPolicy::Keep, FillPolicy::Poison];
}

impl fmt::Display for FillPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FillPolicy::Zero => "zero",
            FillPolicy::Keep => "keep",
            FillPolicy::Poison => "poison",
        })
    }
}

impl FromStr for FillPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(FillPolicy::Zero),
            "keep" => Ok(FillPolicy::Keep),
            "poison" => Ok(FillPolicy::Poison),
            _ => Err(format!("unknown fill policy '{s}' (expected zero, keep or poison)")),
        }
    }
}

pub fn gather(data: &[f64], mask: &CriticalityMask) -> Result<Vec<f64>, MaskError> {
    gather_width(data, mask, 1)
}

/// Packs the critical elements of `data`, each `width` consecutive reals.
pub fn gather_width(data: &[f64], mask: &CriticalityMask, width: usize) -> Result<Vec<f64>, MaskError> {
    let expected = mask.total as usize * width;
    if data.len() != expected {
        return Err(MaskError::LengthMismatch {
            expected,
            got: data.len(),
        });
    }
    let mut packed = Vec::with_capacity(mask.n_critical() as usize * width);
    for &(s, e) in &mask.runs {
        packed.extend_from_slice(&data[s as usize * width..e as usize * width]);
    }
    Ok(packed)
}

pub fn scatter(
    packed: &[f64],
    mask: &CriticalityMask,
    policy: FillPolicy,
    out: &mut [f64],
) -> Result<(), MaskError> {
    scatter_width(packed, mask, policy, out, 1)
}

pub fn scatter_width(
    packed: &[f64],
    mask: &CriticalityMask,
    policy: FillPolicy,
    out: &mut [f64],
    width: usize,
) -> Result<(), MaskError> {
    let expected = mask.n_critical() as usize * width;
    if packed.len() != expected {
        return Err(MaskError::LengthMismatch {
            expected,
            got: packed.len(),
        });
    }
    let total = mask.total as usize * width;
    if out.len() != total {
        return Err(MaskError::LengthMismatch {
            expected: total,
            got: out.len(),
        });
    }
    let fill = match policy {
        FillPolicy::Zero => Some(0.0),
        FillPolicy::Keep => None,
        FillPolicy::Poison => Some(f64::NAN),
    };
    let mut prev = 0;
    let mut src = 0;
    for &(s, e) in &mask.runs {
        let (s, e) = (s as usize * width, e as usize * width);
        if let Some(v) = fill {
            out[prev..s].fill(v);
        }
        out[s..e].copy_from_slice(&packed[src..src + e - s]);
        src += e - s;
        prev = e;
    }
    if let Some(v) = fill {
        out[prev..].fill(v);
    }
    Ok(())
}

/// Exact byte length of the encoded form.
pub fn encoded_len(masks: &MaskSet) -> usize {
    HEADER_LEN
        + masks
            .iter()
            .map(|(name, m)| 2 + name.len() + 16 + 16 * m.runs.len())
            .sum::<usize>()
}

pub fn encode(masks: &MaskSet) -> Result<Vec<u8>, MaskError> {
    let mut out = Vec::with_capacity(encoded_len(masks));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(masks.len() as u32).to_le_bytes());
    for (name, m) in masks {
        let len = u16::try_from(name.len()).map_err(|_| MaskError::NameTooLong(name.len()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&m.total.to_le_bytes());
        out.extend_from_slice(&(m.runs.len() as u64).to_le_bytes());
        for &(s, e) in &m.runs {
            out.extend_from_slice(&s.to_le_bytes());
            out.extend_from_slice(&e.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MaskError> {
        let end = self.pos.checked_add(n).ok_or(MaskError::TruncatedFile)?;
        let s = self.bytes.get(self.pos..end).ok_or(MaskError::TruncatedFile)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, MaskError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, MaskError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, MaskError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<MaskSet, MaskError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 {
        return Err(MaskError::TruncatedFile);
    }
    if r.take(4)? != MAGIC {
        return Err(MaskError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(MaskError::BadVersion(version));
    }
    let count = r.u32()?;
    let mut masks = MaskSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| MaskError::BadName)?.to_string();
        let total = r.u64()?;
        let n_runs = r.u64()?;
        // every run needs 16 bytes; reject absurd counts before allocating
        if n_runs > (bytes.len() - r.pos) as u64 / 16 {
            return Err(MaskError::TruncatedFile);
        }
        let mut runs = Vec::with_capacity(n_runs as usize);
        for _ in 0..n_runs {
            runs.push((r.u64()?, r.u64()?));
        }
        CriticalityMask::check(total, &runs, &name)?;
        if masks.contains_key(&name) {
            return Err(MaskError::DuplicateVariable(name));
        }
        masks.insert(name, CriticalityMask { total, runs });
    }
    if r.pos != bytes.len() {
        return Err(MaskError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(masks)
}
