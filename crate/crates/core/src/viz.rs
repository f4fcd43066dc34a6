//! Criticality maps.
//!
//! Critical elements render dark (`#`, grey level 64), uncritical ones light
//! (`.`, grey level 255). Volumes are shown as a stack of 2D slices along one
//! axis; four-index variables are first split on their last index. Flat
//! variables are drawn as a strip wrapped at [`STRIP_WIDTH`] columns.

use std::fmt::Write;

use thiserror::Error;

use crate::kernels::KernelId;
use crate::scrutiny::{CriticalityReport, VariableReport};

pub const STRIP_WIDTH: usize = 100;
pub const PGM_CRITICAL: u8 = 64;
pub const PGM_UNCRITICAL: u8 = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VizError {
    #[error("no analysis of variable '{0}'")]
    MissingAnalysis(String),
    #[error("axis {axis} out of range for a {dims}-dimensional view")]
    AxisOutOfRange { axis: usize, dims: usize },
    #[error("slice {index} out of range, axis {axis} has extent {extent}")]
    SliceOutOfRange { axis: usize, index: usize, extent: usize },
    #[error("component {component} out of range ({count} available)")]
    ComponentOutOfRange { component: usize, count: usize },
    #[error("'{0}' is not a 3D or 4D variable, use a flat strip")]
    NotAVolume(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// 2D slices along `axis`; all of them, or only `index`.
    SliceStack { axis: usize, index: Option<usize> },
    FlatStrip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Ascii,
    Pgm,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ascii" => Ok(Format::Ascii),
            "pgm" => Ok(Format::Pgm),
            "csv" => Ok(Format::Csv),
            _ => Err(format!("unknown format '{s}' (expected ascii, pgm or csv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VizRequest {
    pub kernel: KernelId,
    pub variable: String,
    /// Last index of a four-index variable; `None` renders every one.
    pub component: Option<usize>,
    pub projection: Projection,
    pub format: Format,
}

/// A rendered file: suggested name and contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// One 2D map, row-major, `true` = critical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub title: String,
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
}

impl Slice {
    pub fn ascii(&self) -> String {
        let mut s = String::with_capacity((self.cols + 1) * self.rows);
        for row in self.cells.chunks(self.cols.max(1)) {
            s.extend(row.iter().map(|&c| if c { '#' } else { '.' }));
            s.push('\n');
        }
        s
    }

    pub fn pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(self.cells.iter().map(|&c| if c { PGM_CRITICAL } else { PGM_UNCRITICAL }));
        out
    }
}

/// Slices of one 3D volume of flags along `axis`.
fn volume_slices(
    flags: &[bool],
    dims: [usize; 3],
    axis: usize,
    pick: impl Fn(usize) -> usize,
    indices: &[usize],
    label: &str,
) -> Vec<Slice> {
    let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let (ra, ca) = (others[0], others[1]);
    indices
        .iter()
        .map(|&s| {
            let mut cells = Vec::with_capacity(dims[ra] * dims[ca]);
            for r in 0..dims[ra] {
                for c in 0..dims[ca] {
                    let mut at = [0; 3];
                    at[axis] = s;
                    at[ra] = r;
                    at[ca] = c;
                    let flat = (at[0] * dims[1] + at[1]) * dims[2] + at[2];
                    cells.push(flags[pick(flat)]);
                }
            }
            Slice {
                title: format!("{label} axis{axis}={s}"),
                rows: dims[ra],
                cols: dims[ca],
                cells,
            }
        })
        .collect()
}

/// The 2D maps a slice-stack request selects.
pub fn slices(var: &VariableReport, component: Option<usize>, axis: usize, index: Option<usize>) -> Result<Vec<Slice>, VizError> {
    let shape = &var.shape;
    let (dims, comps) = match shape.len() {
        3 => ([shape[0], shape[1], shape[2]], 1),
        4 => ([shape[0], shape[1], shape[2]], shape[3]),
        _ => return Err(VizError::NotAVolume(var.name.clone())),
    };
    if axis >= 3 {
        return Err(VizError::AxisOutOfRange { axis, dims: 3 });
    }
    let indices: Vec<usize> = match index {
        Some(i) if i >= dims[axis] => {
            return Err(VizError::SliceOutOfRange {
                axis,
                index: i,
                extent: dims[axis],
            })
        }
        Some(i) => vec![i],
        None => (0..dims[axis]).collect(),
    };
    let components: Vec<usize> = match component {
        Some(m) if m >= comps || shape.len() == 3 && m > 0 => {
            return Err(VizError::ComponentOutOfRange { component: m, count: comps })
        }
        Some(m) => vec![m],
        None => (0..comps).collect(),
    };
    let flags = var.mask.to_flags();
    let mut out = Vec::new();
    for m in components {
        let label = if shape.len() == 4 {
            format!("{} m={m}", var.name)
        } else {
            var.name.clone()
        };
        out.extend(volume_slices(&flags, dims, axis, |f| f * comps + m, &indices, &label));
    }
    Ok(out)
}

/// Flat strip, wrapped at `STRIP_WIDTH`.
pub fn strip_ascii(var: &VariableReport) -> String {
    let flags = var.mask.to_flags();
    let mut s = format!("{} strip\n", var.name);
    for row in flags.chunks(STRIP_WIDTH) {
        s.extend(row.iter().map(|&c| if c { '#' } else { '.' }));
        s.push('\n');
    }
    s
}

fn strip_slice(var: &VariableReport) -> Slice {
    let mut cells = var.mask.to_flags();
    let rows = cells.len().div_ceil(STRIP_WIDTH);
    // pad the last row as uncritical-coloured background
    cells.resize(rows * STRIP_WIDTH, false);
    Slice {
        title: format!("{} strip", var.name),
        rows,
        cols: STRIP_WIDTH,
        cells,
    }
}

pub fn csv(var: &VariableReport) -> String {
    let mut s = String::from("index,flag\n");
    for (i, f) in var.mask.to_flags().into_iter().enumerate() {
        let _ = writeln!(s, "{i},{}", f as u8);
    }
    s
}

pub fn render(report: &CriticalityReport, req: &VizRequest) -> Result<Vec<Artifact>, VizError> {
    let var = report
        .variable(&req.variable)
        .ok_or_else(|| VizError::MissingAnalysis(req.variable.clone()))?;
    let stem = format!("{}_{}", report.kernel.name(), var.name);
    if req.format == Format::Csv {
        return Ok(vec![Artifact {
            name: format!("{stem}.csv"),
            bytes: csv(var).into_bytes(),
        }]);
    }
    match req.projection {
        Projection::FlatStrip => Ok(vec![match req.format {
            Format::Pgm => Artifact {
                name: format!("{stem}_strip.pgm"),
                bytes: strip_slice(var).pgm(),
            },
            _ => Artifact {
                name: format!("{stem}_strip.txt"),
                bytes: strip_ascii(var).into_bytes(),
            },
        }]),
        Projection::SliceStack { axis, index } => {
            let maps = slices(var, req.component, axis, index)?;
            let suffix = match req.component {
                Some(m) => format!("_m{m}"),
                None => String::new(),
            };
            if req.format == Format::Pgm {
                return Ok(maps
                    .iter()
                    .enumerate()
                    .map(|(n, s)| Artifact {
                        name: format!("{stem}{suffix}_axis{axis}_{n:03}.pgm"),
                        bytes: s.pgm(),
                    })
                    .collect());
            }
            let mut text = String::new();
            for s in &maps {
                text.push_str(&s.title);
                text.push('\n');
                text.push_str(&s.ascii());
            }
            let at = index.map_or(String::new(), |i| format!("_{i}"));
            Ok(vec![Artifact {
                name: format!("{stem}{suffix}_axis{axis}{at}.txt"),
                bytes: text.into_bytes(),
            }])
        }
    }
}
