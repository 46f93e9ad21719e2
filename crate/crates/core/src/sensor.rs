//! Down-looking camera with an altitude-dependent weed classifier.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::GroundTruthGrid;
use crate::error::{Error, Result};
use crate::gridmap::{logit, CellIndex, CellRect, GainSummary, GridMap, MlDelta};
use crate::Vec3;

/// How the classifier confidence decays from its ground-level value to 0.5 at `h_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveShape {
    #[default]
    Linear,
    /// Logistic decay centered at `h_max / 2`, rescaled to hit the endpoints exactly.
    Sigmoid { steepness: f64 },
}

impl CurveShape {
    /// Fraction of the ground-level confidence margin left at altitude `h` (1 at 0, 0 at `h_max`).
    fn retained(&self, h: f64, h_max: f64) -> f64 {
        if h >= h_max {
            return 0.0;
        }
        let h = h.max(0.0);
        match *self {
            CurveShape::Linear => 1.0 - h / h_max,
            CurveShape::Sigmoid { steepness } => {
                let s = |x: f64| 1.0 / (1.0 + (steepness * (x / h_max - 0.5)).exp());
                (s(h) - s(h_max)) / (s(0.0) - s(h_max))
            }
        }
    }
}

/// Camera field of view plus classifier confusion curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    /// Full opening angle in degrees.
    pub fov_deg: f64,
    /// Altitude at and above which the classifier is uninformative (m).
    pub h_max: f64,
    /// P(label weed | weed) at ground level.
    pub p_tp0: f64,
    /// P(label weed | non-weed) at ground level.
    pub p_fp0: f64,
    /// Minimum time between two measurements (s).
    pub min_meas_interval: f64,
    pub curve: CurveShape,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            fov_deg: 60.0,
            h_max: 45.0,
            p_tp0: 0.95,
            p_fp0: 0.05,
            min_meas_interval: 5.0,
            curve: CurveShape::Linear,
        }
    }
}

/// Axis-aligned square seen by the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub center: (f64, f64),
    pub half_width: f64,
}

impl Footprint {
    pub fn side(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn area(&self) -> f64 {
        self.side() * self.side()
    }

    pub fn cells(&self, map: &GridMap) -> CellRect {
        map.cells_in_square(self.center.0, self.center.1, self.half_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Maximum number of non-weed cells that may ever be reported as weed in a mission.
    pub fp_cell_cap: usize,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            fp_cell_cap: 800,
            rng_seed: 0,
        }
    }
}

/// Mission-wide record of non-weed cells that already produced a false positive.
///
/// Each cell can be misreported at most once and at most `cap` cells in total, so the
/// number of false-positive labels never exceeds the cap.
#[derive(Debug, Clone, Default)]
pub struct FalsePositiveLedger {
    cells: HashSet<CellIndex>,
}

impl FalsePositiveLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.cells.len()
    }

    fn try_claim(&mut self, cell: CellIndex, cap: usize) -> bool {
        if self.cells.len() >= cap || self.cells.contains(&cell) {
            return false;
        }
        self.cells.insert(cell);
        true
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.p_tp0 > 0.5 && self.p_tp0 < 1.0) {
            return bad(format!("p_tp0 must lie in (0.5, 1), got {}", self.p_tp0));
        }
        if !(self.p_fp0 > 0.0 && self.p_fp0 < 0.5) {
            return bad(format!("p_fp0 must lie in (0, 0.5), got {}", self.p_fp0));
        }
        if !(self.h_max > 0.0) {
            return bad(format!("h_max must be positive, got {}", self.h_max));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad(format!("fov must lie in (0, 180) degrees, got {}", self.fov_deg));
        }
        if !(self.min_meas_interval >= 0.0) {
            return bad(format!("min_meas_interval must be non-negative, got {}", self.min_meas_interval));
        }
        if let CurveShape::Sigmoid { steepness } = self.curve {
            if !(steepness > 0.0) {
                return bad(format!("sigmoid steepness must be positive, got {steepness}"));
            }
        }
        Ok(())
    }

    /// `tan(fov / 2)`: footprint half-width per metre of altitude.
    pub fn half_width_per_altitude(&self) -> f64 {
        (self.fov_deg.to_radians() / 2.0).tan()
    }

    /// Altitude at which the footprint side equals `side`.
    pub fn altitude_for_side(&self, side: f64) -> f64 {
        side / (2.0 * self.half_width_per_altitude())
    }

    pub fn footprint_at(&self, x: &Vec3) -> Result<Footprint> {
        if x.z < 0.0 || !x.z.is_finite() {
            return Err(Error::InvalidParameter(format!("altitude must be non-negative, got {}", x.z)));
        }
        Ok(Footprint {
            center: (x.x, x.y),
            half_width: x.z * self.half_width_per_altitude(),
        })
    }

    fn blend(&self, p0: f64, h: f64) -> f64 {
        let r = self.curve.retained(h, self.h_max);
        if r >= 1.0 {
            p0
        } else if r <= 0.0 {
            0.5
        } else {
            0.5 + (p0 - 0.5) * r
        }
    }

    /// P(label weed | weed) at altitude `h`.
    pub fn curve_w_given_w(&self, h: f64) -> f64 {
        self.blend(self.p_tp0, h)
    }

    /// P(label weed | non-weed) at altitude `h`.
    pub fn curve_w_given_nw(&self, h: f64) -> f64 {
        self.blend(self.p_fp0, h)
    }

    /// Log-odds increments for a "weed" and a "non-weed" label at altitude `h`.
    pub fn label_logodds(&self, h: f64) -> MlDelta {
        if h >= self.h_max {
            return MlDelta { weed: 0.0, clear: 0.0 };
        }
        MlDelta {
            weed: logit(self.curve_w_given_w(h)),
            clear: logit(self.curve_w_given_nw(h)),
        }
    }

    /// Samples one classifier output over the footprint at `x` against the ground truth.
    ///
    /// Returns `(cell, p_obs)` pairs ready for fusion. An empty vector means the
    /// footprint missed the map.
    pub fn simulate_measurement<R: Rng + ?Sized>(
        &self,
        truth: &GroundTruthGrid,
        x: &Vec3,
        noise: &NoiseConfig,
        fp: &mut FalsePositiveLedger,
        rng: &mut R,
    ) -> Result<Vec<(CellIndex, f64)>> {
        let rect = self.footprint_at(x)?.cells(truth.reference_map());
        let h = x.z;
        let p_w = self.curve_w_given_w(h);
        let p_nw = self.curve_w_given_nw(h);
        let mut out = Vec::with_capacity(rect.len());
        if h >= self.h_max {
            out.extend(rect.cells().map(|c| (c, 0.5)));
            return Ok(out);
        }
        for cell in rect.cells() {
            let is_weed = truth.is_weed(cell)?;
            let label_w = if noise.enabled {
                let u: f64 = rng.random();
                if is_weed {
                    u < p_w
                } else {
                    u < p_nw && fp.try_claim(cell, noise.fp_cell_cap)
                }
            } else {
                is_weed
            };
            out.push((cell, if label_w { p_w } else { p_nw }));
        }
        Ok(out)
    }

    /// Belief after a maximum-likelihood measurement at `x`; the input is left untouched.
    pub fn simulate_ml_measurement(&self, map: &GridMap, x: &Vec3) -> Result<GridMap> {
        let mut out = map.clone();
        self.apply_ml_measurement(&mut out, x)?;
        Ok(out)
    }

    /// In-place form of [`simulate_ml_measurement`](Self::simulate_ml_measurement).
    pub fn apply_ml_measurement(&self, map: &mut GridMap, x: &Vec3) -> Result<()> {
        let rect = self.footprint_at(x)?.cells(map);
        map.apply_ml(rect, self.label_logodds(x.z));
        Ok(())
    }

    /// Entropy and classification gains an ML measurement at `x` would yield.
    pub fn ml_gain(&self, map: &GridMap, x: &Vec3, band: (f64, f64)) -> Result<GainSummary> {
        let rect = self.footprint_at(x)?.cells(map);
        Ok(map.ml_gain(rect, self.label_logodds(x.z), band))
    }
}

/// Fuses a sampled measurement into the belief.
pub fn fuse_measurement(map: &mut GridMap, measurement: &[(CellIndex, f64)]) -> Result<()> {
    for &(cell, p) in measurement {
        map.fuse(cell, p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn truth_with_weeds(weeds: &[CellIndex]) -> GroundTruthGrid {
        GroundTruthGrid::from_weeds((10.0, 10.0), 0.5, weeds).unwrap()
    }

    #[test]
    fn footprint_examples() {
        let s = SensorModel::default();
        let f = s.footprint_at(&Vec3::new(5.0, 6.0, 40.0)).unwrap();
        assert!((f.half_width - 23.094).abs() < 1e-3);
        assert!((f.side() - 46.19).abs() < 1e-2);
        assert_eq!(f.center, (5.0, 6.0));

        let f = s.footprint_at(&Vec3::new(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(f.area(), 0.0);

        let wide = SensorModel { fov_deg: 90.0, ..s };
        let f = wide.footprint_at(&Vec3::new(0.0, 0.0, 10.0)).unwrap();
        assert!((f.half_width - 10.0).abs() < 1e-12);

        assert!(s.footprint_at(&Vec3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn footprint_area_quadratic() {
        let s = SensorModel::default();
        for h in [1.0, 7.5, 20.0] {
            let a1 = s.footprint_at(&Vec3::new(0.0, 0.0, h)).unwrap().area();
            let a2 = s.footprint_at(&Vec3::new(0.0, 0.0, 2.0 * h)).unwrap().area();
            assert!((a2 - 4.0 * a1).abs() < 1e-9 * a2);
        }
    }

    #[test]
    fn curve_examples() {
        let s = SensorModel::default();
        assert_eq!(s.curve_w_given_w(0.0), 0.95);
        assert_eq!(s.curve_w_given_nw(0.0), 0.05);
        assert!((s.curve_w_given_w(22.5) - 0.725).abs() < 1e-12);
        assert!((s.curve_w_given_nw(22.5) - 0.275).abs() < 1e-12);
        for h in [45.0, 50.0, 1e6] {
            assert_eq!(s.curve_w_given_w(h), 0.5);
            assert_eq!(s.curve_w_given_nw(h), 0.5);
        }
    }

    #[test]
    fn curves_monotone_and_bounded() {
        for curve in [CurveShape::Linear, CurveShape::Sigmoid { steepness: 8.0 }] {
            let s = SensorModel { curve, ..Default::default() };
            let mut prev = (s.curve_w_given_w(0.0), s.curve_w_given_nw(0.0));
            assert!((prev.0 - 0.95).abs() < 1e-12 && (prev.1 - 0.05).abs() < 1e-12);
            for k in 1..=500 {
                let h = k as f64 * 0.1;
                let cur = (s.curve_w_given_w(h), s.curve_w_given_nw(h));
                assert!(cur.0 <= prev.0 && cur.1 >= prev.1);
                assert!((0.05..=0.95).contains(&cur.0) && (0.05..=0.95).contains(&cur.1));
                // continuity on a 0.1 m grid
                assert!((cur.0 - prev.0).abs() < 0.05);
                prev = cur;
            }
            assert_eq!(s.curve_w_given_w(45.0), 0.5);
        }
    }

    #[test]
    fn validation() {
        assert!(SensorModel::default().validate().is_ok());
        assert!(SensorModel { p_tp0: 0.4, ..Default::default() }.validate().is_err());
        assert!(SensorModel { p_fp0: 0.6, ..Default::default() }.validate().is_err());
        assert!(SensorModel { fov_deg: 180.0, ..Default::default() }.validate().is_err());
        assert!(SensorModel { h_max: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn noiseless_measurement_reports_modal_label() {
        let s = SensorModel::default();
        let weed = CellIndex::new(10, 10);
        let truth = truth_with_weeds(&[weed]);
        let noise = NoiseConfig { enabled: false, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Vec3::new(5.0, 5.0, 3.0);
        let z = s
            .simulate_measurement(&truth, &x, &noise, &mut FalsePositiveLedger::new(), &mut rng)
            .unwrap();
        assert!(!z.is_empty());
        for (cell, p) in z {
            if cell == weed {
                assert_eq!(p, s.curve_w_given_w(3.0));
            } else {
                assert_eq!(p, s.curve_w_given_nw(3.0));
            }
        }
    }

    #[test]
    fn uninformative_above_h_max() {
        let s = SensorModel::default();
        let truth = truth_with_weeds(&[CellIndex::new(1, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = s
            .simulate_measurement(
                &truth,
                &Vec3::new(5.0, 5.0, 45.0),
                &NoiseConfig::default(),
                &mut FalsePositiveLedger::new(),
                &mut rng,
            )
            .unwrap();
        assert_eq!(z.len(), 400);
        assert!(z.iter().all(|&(_, p)| p == 0.5));
    }

    #[test]
    fn footprint_outside_map_is_empty() {
        let s = SensorModel::default();
        let truth = truth_with_weeds(&[]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = s
            .simulate_measurement(
                &truth,
                &Vec3::new(100.0, 100.0, 5.0),
                &NoiseConfig::default(),
                &mut FalsePositiveLedger::new(),
                &mut rng,
            )
            .unwrap();
        assert!(z.is_empty());
    }

    #[test]
    fn false_positive_cap_is_respected() {
        let s = SensorModel::default();
        let truth = truth_with_weeds(&[]);
        let noise = NoiseConfig { enabled: true, fp_cell_cap: 25, rng_seed: 0 };
        let mut fp = FalsePositiveLedger::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Vec3::new(5.0, 5.0, 30.0);
        let mut labels = 0;
        for _ in 0..10 {
            let z = s.simulate_measurement(&truth, &x, &noise, &mut fp, &mut rng).unwrap();
            labels += z.iter().filter(|&&(_, p)| p > 0.5).count();
        }
        assert_eq!(fp.count(), 25);
        assert_eq!(labels, 25);

        // cap consumed: every non-weed cell now reads non-weed
        let z = s.simulate_measurement(&truth, &x, &noise, &mut fp, &mut rng).unwrap();
        assert!(z.iter().all(|&(_, p)| p < 0.5));
    }

    #[test]
    fn noisy_measurement_is_seeded() {
        let s = SensorModel::default();
        let truth = truth_with_weeds(&[CellIndex::new(3, 4), CellIndex::new(7, 7)]);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            s.simulate_measurement(
                &truth,
                &Vec3::new(5.0, 5.0, 20.0),
                &NoiseConfig::default(),
                &mut FalsePositiveLedger::new(),
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ml_measurement_examples() {
        // curve (0.8, 0.2) at h = 15 m
        let s = SensorModel::default();
        assert!((s.curve_w_given_w(15.0) - 0.8).abs() < 1e-12);
        let mut map = GridMap::new((2.0, 2.0), 0.5, 0.5).unwrap();
        let c = CellIndex::new(1, 1);
        map.set_probability(c, 0.9).unwrap();
        let x = Vec3::new(1.0, 1.0, 15.0);
        let after = s.simulate_ml_measurement(&map, &x).unwrap();
        let expected = sigmoid(logit(0.9) + logit(0.8));
        assert!((after.probability(c).unwrap() - expected).abs() < 1e-12);
        assert!((after.probability(c).unwrap() - 0.973).abs() < 1e-3);
        // prior cells tie-break to weed
        let prior_cell = CellIndex::new(0, 0);
        assert!(after.probability(prior_cell).unwrap() > 0.5);
        // input untouched
        assert_eq!(map.probability(prior_cell).unwrap(), 0.5);

        let high = s.simulate_ml_measurement(&map, &Vec3::new(1.0, 1.0, 45.0)).unwrap();
        assert_eq!(high, map);
    }

    #[test]
    fn ml_pushes_cells_away_from_half() {
        let s = SensorModel::default();
        let mut map = GridMap::new((4.0, 4.0), 0.5, 0.5).unwrap();
        map.set_probability(CellIndex::new(2, 2), 0.3).unwrap();
        let after = s.simulate_ml_measurement(&map, &Vec3::new(2.0, 2.0, 10.0)).unwrap();
        assert!(after.probability(CellIndex::new(2, 2)).unwrap() < 0.3);
        assert!(after.entropy() < map.entropy());
    }

    #[test]
    fn repeated_low_measurements_converge_to_truth() {
        let s = SensorModel::default();
        let weed = CellIndex::new(4, 4);
        let truth = truth_with_weeds(&[weed]);
        let noise = NoiseConfig { enabled: false, ..Default::default() };
        let mut map = GridMap::new((10.0, 10.0), 0.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Vec3::new(2.25, 2.25, 1.0);
        let mut prev = (0.5, 0.5);
        for _ in 0..5 {
            let z = s
                .simulate_measurement(&truth, &x, &noise, &mut FalsePositiveLedger::new(), &mut rng)
                .unwrap();
            fuse_measurement(&mut map, &z).unwrap();
            let cur = (map.probability(weed).unwrap(), map.probability(CellIndex::new(5, 5)).unwrap());
            assert!(cur.0 > prev.0 && cur.1 < prev.1);
            prev = cur;
        }
    }
}
