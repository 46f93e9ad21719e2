//! Two-dimensional Bernoulli occupancy grid over weed presence.
//!
//! Every cell stores the natural-log odds of being occupied by a weed. Independent
//! observations fuse additively, so a measurement is a single addition per covered
//! cell. Probabilities are only materialized when asked for.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-odds are clamped to this magnitude after every fusion.
pub const LOGODDS_LIMIT: f64 = 50.0;

const DIVISIBILITY_TOL: f64 = 1e-9;

/// `ln(p / (1 - p))`.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse of [`logit`].
#[inline]
pub fn sigmoid(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

/// Binary entropy (nats) of a Bernoulli variable given its log-odds.
///
/// Evaluated as `ln(1 + e^-|l|) + |l| e^-|l| / (1 + e^-|l|)`, which stays accurate
/// for large `|l|` where the probability form cancels badly.
#[inline]
pub fn binary_entropy_logodds(l: f64) -> f64 {
    let a = l.abs();
    let e = (-a).exp();
    e.ln_1p() + a * e / (1.0 + e)
}

/// Binary entropy (nats) of a probability.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

/// Column/row address of a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub col: usize,
    pub row: usize,
}

impl CellIndex {
    pub fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

/// Probability thresholds splitting the map into non-weed, unclassified and weed cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassThresholds {
    pub delta_nw: f64,
    pub delta_w: f64,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        Self {
            delta_nw: 0.25,
            delta_w: 0.75,
        }
    }
}

impl ClassThresholds {
    pub fn new(delta_nw: f64, delta_w: f64) -> Result<Self> {
        let th = Self { delta_nw, delta_w };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_nw > 0.0 && self.delta_nw < 0.5 && self.delta_w > 0.5 && self.delta_w < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "thresholds need 0 < delta_nw < 0.5 < delta_w < 1, got ({}, {})",
                self.delta_nw, self.delta_w
            )));
        }
        Ok(())
    }

    /// Thresholds expressed as log-odds `(lower, upper)`.
    #[inline]
    pub fn logodds_band(&self) -> (f64, f64) {
        (logit(self.delta_nw), logit(self.delta_w))
    }
}

/// Exclusive band test in log-odds space; values on a threshold count as classified.
#[inline]
pub(crate) fn in_band(l: f64, band: (f64, f64)) -> bool {
    band.0 < l && l < band.1
}

/// Half-open rectangle of cells `[col0, col1) x [row0, row1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub col0: usize,
    pub col1: usize,
    pub row0: usize,
    pub row1: usize,
}

impl CellRect {
    pub const EMPTY: CellRect = CellRect {
        col0: 0,
        col1: 0,
        row0: 0,
        row1: 0,
    };

    pub fn is_empty(&self) -> bool {
        self.col0 >= self.col1 || self.row0 >= self.row1
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.col1 - self.col0) * (self.row1 - self.row0)
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (self.row0..self.row1).flat_map(move |row| (self.col0..self.col1).map(move |col| CellIndex { col, row }))
    }
}

/// Log-odds increments of a maximum-likelihood measurement: `weed` is added to cells
/// currently leaning weed (p >= 0.5), `clear` to the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlDelta {
    pub weed: f64,
    pub clear: f64,
}

impl MlDelta {
    pub fn symmetric(delta: f64) -> Self {
        Self {
            weed: delta,
            clear: -delta,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.weed == 0.0 && self.clear == 0.0
    }

    #[inline]
    pub fn for_logodds(&self, l: f64) -> f64 {
        if l >= 0.0 {
            self.weed
        } else {
            self.clear
        }
    }
}

/// Entropy and unclassified-count change caused by one simulated measurement.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GainSummary {
    /// Entropy reduction in nats.
    pub info: f64,
    /// Reduction of the unclassified-cell count (may be negative).
    pub class: i64,
}

/// Occupancy grid in log-odds form.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    origin: (f64, f64),
    resolution: f64,
    cols: usize,
    rows: usize,
    logodds: Vec<f64>,
}

impl GridMap {
    /// Grid anchored at the world origin covering `extent` (m) with uniform `prior`.
    pub fn new(extent: (f64, f64), resolution: f64, prior: f64) -> Result<Self> {
        Self::with_origin((0.0, 0.0), extent, resolution, prior)
    }

    pub fn with_origin(origin: (f64, f64), extent: (f64, f64), resolution: f64, prior: f64) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::Geometry(format!("resolution must be positive, got {resolution}")));
        }
        if !(prior > 0.0 && prior < 1.0) {
            return Err(Error::InvalidParameter(format!("prior must lie in (0, 1), got {prior}")));
        }
        let cols = cell_count(extent.0, resolution)?;
        let rows = cell_count(extent.1, resolution)?;
        Ok(Self {
            origin,
            resolution,
            cols,
            rows,
            logodds: vec![logit(prior); cols * rows],
        })
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// `(cols, rows)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.cols as f64 * self.resolution, self.rows as f64 * self.resolution)
    }

    pub fn len(&self) -> usize {
        self.logodds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logodds.is_empty()
    }

    pub fn same_geometry(&self, other: &GridMap) -> bool {
        self.dims() == other.dims() && self.origin == other.origin && self.resolution == other.resolution
    }

    pub fn check_same_dims(&self, other: &GridMap) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(self.dims(), other.dims()));
        }
        Ok(())
    }

    #[inline]
    fn index(&self, cell: CellIndex) -> Result<usize> {
        if cell.col >= self.cols || cell.row >= self.rows {
            return Err(Error::OutOfBounds {
                col: cell.col,
                row: cell.row,
                cols: self.cols,
                rows: self.rows,
            });
        }
        Ok(cell.row * self.cols + cell.col)
    }

    pub fn cell_center(&self, cell: CellIndex) -> (f64, f64) {
        (
            self.origin.0 + (cell.col as f64 + 0.5) * self.resolution,
            self.origin.1 + (cell.row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn logodds(&self, cell: CellIndex) -> Result<f64> {
        Ok(self.logodds[self.index(cell)?])
    }

    pub fn probability(&self, cell: CellIndex) -> Result<f64> {
        self.logodds(cell).map(sigmoid)
    }

    pub fn set_logodds(&mut self, cell: CellIndex, l: f64) -> Result<()> {
        if !l.is_finite() {
            return Err(Error::InvalidParameter(format!("log-odds must be finite, got {l}")));
        }
        let i = self.index(cell)?;
        self.logodds[i] = l.clamp(-LOGODDS_LIMIT, LOGODDS_LIMIT);
        Ok(())
    }

    pub fn set_probability(&mut self, cell: CellIndex, p: f64) -> Result<()> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("probability must lie in (0, 1), got {p}")));
        }
        self.set_logodds(cell, logit(p))
    }

    /// Raw row-major log-odds.
    pub fn logodds_slice(&self) -> &[f64] {
        &self.logodds
    }

    pub fn probabilities(&self) -> impl Iterator<Item = f64> + '_ {
        self.logodds.iter().map(|&l| sigmoid(l))
    }

    /// Bayesian log-odds update of one cell with an observation of confidence `p_obs`.
    pub fn fuse(&mut self, cell: CellIndex, p_obs: f64) -> Result<()> {
        if !(p_obs > 0.0 && p_obs < 1.0) {
            return Err(Error::InvalidParameter(format!("observation probability must lie in (0, 1), got {p_obs}")));
        }
        let i = self.index(cell)?;
        self.add_logodds(i, logit(p_obs));
        Ok(())
    }

    #[inline]
    pub(crate) fn add_logodds(&mut self, i: usize, delta: f64) {
        let l = &mut self.logodds[i];
        *l = (*l + delta).clamp(-LOGODDS_LIMIT, LOGODDS_LIMIT);
    }

    /// Total map entropy in nats.
    pub fn entropy(&self) -> f64 {
        let mut memo = EntropyMemo::default();
        self.logodds.iter().map(|&l| memo.eval(l)).sum()
    }

    pub fn entropy_bits(&self) -> f64 {
        self.entropy() / std::f64::consts::LN_2
    }

    /// Cells strictly inside the threshold band.
    pub fn unclassified_cells(&self, th: &ClassThresholds) -> Vec<CellIndex> {
        let band = th.logodds_band();
        self.logodds
            .iter()
            .enumerate()
            .filter(|(_, &l)| in_band(l, band))
            .map(|(i, _)| CellIndex {
                col: i % self.cols,
                row: i / self.cols,
            })
            .collect()
    }

    pub fn unclassified_count(&self, th: &ClassThresholds) -> usize {
        let band = th.logodds_band();
        self.logodds.iter().filter(|&&l| in_band(l, band)).count()
    }

    pub fn classification_rate(&self, th: &ClassThresholds) -> f64 {
        if self.logodds.is_empty() {
            return 0.0;
        }
        1.0 - self.unclassified_count(th) as f64 / self.len() as f64
    }

    /// Cells whose centers lie inside the closed axis-aligned square centered at
    /// `(cx, cy)` with the given half-width. A zero half-width covers nothing.
    pub fn cells_in_square(&self, cx: f64, cy: f64, half_width: f64) -> CellRect {
        if !(half_width > 0.0) {
            return CellRect::EMPTY;
        }
        let r = self.resolution;
        // center of cell k is origin + (k + 0.5) r; solve for the covered k range
        let lo = |c: f64, o: f64| ((c - half_width - o) / r - 0.5).ceil();
        let hi = |c: f64, o: f64| ((c + half_width - o) / r - 0.5).floor();
        let clamp_range = |a: f64, b: f64, n: usize| -> (usize, usize) {
            let a = a.max(0.0);
            let b = b.min(n as f64 - 1.0);
            if a > b {
                (0, 0)
            } else {
                (a as usize, b as usize + 1)
            }
        };
        let (col0, col1) = clamp_range(lo(cx, self.origin.0), hi(cx, self.origin.0), self.cols);
        let (row0, row1) = clamp_range(lo(cy, self.origin.1), hi(cy, self.origin.1), self.rows);
        let rect = CellRect { col0, col1, row0, row1 };
        if rect.is_empty() {
            CellRect::EMPTY
        } else {
            rect
        }
    }

    /// Applies a maximum-likelihood measurement over `rect`: every cell receives the
    /// update of its currently most likely label (ties go to weed).
    pub(crate) fn apply_ml(&mut self, rect: CellRect, delta: MlDelta) {
        if delta.is_identity() {
            return;
        }
        for row in rect.row0..rect.row1 {
            let base = row * self.cols;
            for i in base + rect.col0..base + rect.col1 {
                let d = delta.for_logodds(self.logodds[i]);
                self.add_logodds(i, d);
            }
        }
    }

    /// Gains the ML measurement [`apply_ml`](Self::apply_ml) would produce, without mutating.
    pub(crate) fn ml_gain(&self, rect: CellRect, delta: MlDelta, band: (f64, f64)) -> GainSummary {
        if delta.is_identity() || rect.is_empty() {
            return GainSummary::default();
        }
        let mut info = 0.0;
        let mut class = 0i64;
        // covered regions come in rectangular runs of equal log-odds, so memoizing the
        // previous cell's result skips most transcendental evaluations
        let mut last_l = f64::NAN;
        let mut last_gain = (0.0, 0i64);
        for row in rect.row0..rect.row1 {
            let base = row * self.cols;
            for &l in &self.logodds[base + rect.col0..base + rect.col1] {
                if l != last_l {
                    let d = delta.for_logodds(l);
                    let after = (l + d).clamp(-LOGODDS_LIMIT, LOGODDS_LIMIT);
                    let dh = binary_entropy_logodds(l) - binary_entropy_logodds(after);
                    let dc = in_band(l, band) as i64 - in_band(after, band) as i64;
                    last_l = l;
                    last_gain = (dh, dc);
                }
                info += last_gain.0;
                class += last_gain.1;
            }
        }
        GainSummary { info, class }
    }

    /// Writes probabilities as plain text, one grid row per line, 6 decimals.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in 0..self.rows {
            let line: Vec<String> = self.logodds[row * self.cols..(row + 1) * self.cols]
                .iter()
                .map(|&l| format!("{:.6}", sigmoid(l)))
                .collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Order-sensitive fingerprint of the log-odds bit patterns.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.logodds {
            for b in l.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

fn cell_count(extent: f64, resolution: f64) -> Result<usize> {
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::Geometry(format!("extent must be positive, got {extent}")));
    }
    let n = (extent / resolution).round();
    if (n * resolution - extent).abs() > DIVISIBILITY_TOL || n < 1.0 {
        return Err(Error::Geometry(format!(
            "extent {extent} m is not a multiple of resolution {resolution} m"
        )));
    }
    Ok(n as usize)
}

#[derive(Default)]
struct EntropyMemo {
    last: Option<(f64, f64)>,
}

impl EntropyMemo {
    #[inline]
    fn eval(&mut self, l: f64) -> f64 {
        match self.last {
            Some((k, v)) if k == l => v,
            _ => {
                let v = binary_entropy_logodds(l);
                self.last = Some((l, v));
                v
            }
        }
    }
}
