//! Mission metrics: entropy, classification rate and F2-score over time.

use std::io::Write;

use crate::environment::GroundTruthGrid;
use crate::error::{Error, Result};
use crate::gridmap::{ClassThresholds, GridMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    /// Mission time (s).
    pub t: f64,
    /// Map entropy (nats).
    pub entropy: f64,
    pub class_rate: f64,
    pub f2: f64,
}

impl MetricsRecord {
    pub fn observe(t: f64, map: &GridMap, truth: &GroundTruthGrid, th: &ClassThresholds) -> Result<Self> {
        Ok(Self {
            t,
            entropy: map.entropy(),
            class_rate: map.classification_rate(th),
            f2: f2_score(map, truth, th)?,
        })
    }

    pub fn entropy_bits(&self) -> f64 {
        self.entropy / std::f64::consts::LN_2
    }
}

/// Time series of [`MetricsRecord`]s with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    records: Vec<MetricsRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `r`; a record stamped with the same time as the last one replaces it.
    pub fn push(&mut self, r: MetricsRecord) -> Result<()> {
        if ![r.t, r.entropy, r.class_rate, r.f2].iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite metrics record {r:?}")));
        }
        match self.records.last_mut() {
            Some(last) if r.t == last.t => *last = r,
            Some(last) if r.t < last.t => {
                return Err(Error::InvalidParameter(format!(
                    "metrics time went backwards: {} after {}",
                    r.t, last.t
                )))
            }
            _ => self.records.push(r),
        }
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    /// Last record at or before `t` (last observation carried forward).
    pub fn at(&self, t: f64) -> Option<&MetricsRecord> {
        let n = self.records.partition_point(|r| r.t <= t);
        n.checked_sub(1).map(|i| &self.records[i])
    }

    /// Resamples onto `0, step, 2 step, ...` up to `horizon` by carrying the last
    /// observation forward.
    pub fn resample(&self, step: f64, horizon: f64) -> Result<Vec<MetricsRecord>> {
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!("resampling step must be positive, got {step}")));
        }
        let n = (horizon / step + 1e-9).floor() as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 * step;
                self.at(t)
                    .map(|r| MetricsRecord { t, ..*r })
                    .ok_or_else(|| Error::InvalidParameter(format!("no record at or before t={t}")))
            })
            .collect()
    }

    /// CSV with header `t_s,entropy_nats,entropy_bits,class_rate,f2`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "entropy_nats", "entropy_bits", "class_rate", "f2"])?;
        for r in &self.records {
            w.write_record(
                [r.t, r.entropy, r.entropy_bits(), r.class_rate, r.f2]
                    .iter()
                    .map(|v| format!("{v:.6}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// F-beta score with beta = 2, weed being the positive class.
///
/// Cells inside the threshold band abstain. Returns 0 when there are no true positives.
pub fn f2_score(map: &GridMap, truth: &GroundTruthGrid, th: &ClassThresholds) -> Result<f64> {
    let truth_map = truth.reference_map();
    if !map.same_geometry(truth_map) {
        return Err(Error::DimensionMismatch(map.dims(), truth_map.dims()));
    }
    let (lo, hi) = th.logodds_band();
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&l, &weed) in map.logodds_slice().iter().zip(truth.labels()) {
        if l >= hi {
            if weed {
                tp += 1;
            } else {
                fp += 1;
            }
        } else if l <= lo && weed {
            fn_ += 1;
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    Ok(5.0 * p * r / (4.0 * p + r))
}

/// Cumulative normalized entropy reduction over time bins of width `bin_width`.
///
/// Per-trial reductions are binned by the time they occur, averaged over trials and
/// accumulated. Bins where the mean entropy rose are flattened so the curve is
/// monotone; it is scaled to end at 1. Rows are `(bin start time, cdf)`.
pub fn entropy_cdf(logs: &[MetricsLog], bin_width: f64) -> Result<Vec<(f64, f64)>> {
    if logs.is_empty() || logs.iter().any(|l| l.is_empty()) {
        return Err(Error::InvalidParameter("entropy CDF needs at least one non-empty log".into()));
    }
    if !(bin_width > 0.0) {
        return Err(Error::InvalidParameter(format!("bin width must be positive, got {bin_width}")));
    }
    let t_end = logs
        .iter()
        .filter_map(|l| l.last())
        .map(|r| r.t)
        .fold(0.0, f64::max);
    let n_bins = (t_end / bin_width).floor() as usize + 1;
    let mut bins = vec![0.0; n_bins];
    for log in logs {
        for w in log.records().windows(2) {
            let k = ((w[1].t / bin_width).floor() as usize).min(n_bins - 1);
            bins[k] += w[0].entropy - w[1].entropy;
        }
    }
    let mut acc = 0.0;
    let mut curve: Vec<f64> = bins
        .iter()
        .map(|&b| {
            acc = f64::max(acc, acc + b / logs.len() as f64);
            acc
        })
        .collect();
    let total = *curve.last().unwrap_or(&0.0);
    if !(total > 0.0) {
        return Err(Error::Numeric("entropy never decreased; CDF undefined".into()));
    }
    for c in curve.iter_mut() {
        *c /= total;
    }
    Ok(curve
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as f64 * bin_width, c))
        .collect())
}
