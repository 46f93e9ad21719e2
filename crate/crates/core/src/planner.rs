//! Adaptive informative path planning: greedy viewpoint selection on a
//! multiresolution lattice, intermediate-point insertion and CMA-ES refinement of the
//! viewpoint chain, executed in a fixed-horizon replanning loop.
//!
//! Candidates are ranked by utility rate, the gain of a simulated maximum-likelihood
//! measurement divided by the travel time needed to reach it. The gain is either the
//! entropy reduction of the map or the reduction in the number of unclassified cells.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmaes::{minimize, CmaConfig};
use crate::environment::GroundTruthGrid;
use crate::error::{Error, Result};
use crate::gridmap::{ClassThresholds, GridMap};
use crate::mission::{MissionResult, Recorder, ReplanRecord};
use crate::sensor::{NoiseConfig, SensorModel};
use crate::trajectory::{measurement_schedule, plan_through, travel_time, DynamicLimits, Trajectory, MIN_SEGMENT_LENGTH};
use crate::Vec3;

/// Default altitude of the first pose (m).
pub const DEFAULT_START_ALTITUDE: f64 = 40.0;
/// Lattice levels stop at this fraction of the sensor's maximum altitude.
const LATTICE_CEILING: f64 = 0.95;
/// Relative tolerance under which two rates or travel times count as tied.
const TIE_TOL: f64 = 1e-9;

/// Which gain the greedy selection maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    InfoOnly,
    ClassOnly,
    /// Entropy early in the mission, classification later, switching at random with
    /// probability `t / B`.
    #[default]
    TimeVarying,
}

impl ObjectiveMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::InfoOnly => "info_only",
            Self::ClassOnly => "class_only",
            Self::TimeVarying => "time_varying",
        }
    }
}

/// Gain measure attached to a single viewpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    /// Entropy reduction (nats).
    Info,
    /// Reduction of the unclassified-cell count.
    Class,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CmaesMode {
    None,
    /// Optimize the intermediate points only.
    Local,
    /// Optimize every point after the current pose.
    #[default]
    Global,
}

impl CmaesMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Local => "local",
            Self::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Number of new viewpoints per plan.
    pub horizon: usize,
    /// Mission time budget (s).
    pub budget: f64,
    pub objective_mode: ObjectiveMode,
    pub cmaes_mode: CmaesMode,
    pub thresholds: ClassThresholds,
    pub limits: DynamicLimits,
    /// Search settings; `bounds` and `seed` are filled in per replan.
    pub cma: CmaConfig,
    pub lattice_levels: usize,
    /// Lowest allowed altitude (m).
    pub h_min: f64,
    /// Mission time charged for every replan (s).
    pub planning_cost: f64,
    /// Start position; defaults to the map center at [`DEFAULT_START_ALTITUDE`].
    pub initial_pose: Option<[f64; 3]>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            budget: 300.0,
            objective_mode: ObjectiveMode::default(),
            cmaes_mode: CmaesMode::default(),
            thresholds: ClassThresholds::default(),
            limits: DynamicLimits::default(),
            cma: CmaConfig::default(),
            lattice_levels: 3,
            h_min: 5.0,
            planning_cost: 0.0,
            initial_pose: None,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return bad(format!("budget must be positive, got {}", self.budget));
        }
        if self.lattice_levels < 1 {
            return bad("lattice needs at least one level".into());
        }
        if !(self.h_min >= 0.0) {
            return bad(format!("h_min must be non-negative, got {}", self.h_min));
        }
        if !(self.planning_cost >= 0.0) {
            return bad(format!("planning cost must be non-negative, got {}", self.planning_cost));
        }
        if self.cma.max_evals == 0 {
            return bad("CMA-ES evaluation budget must be positive".into());
        }
        self.thresholds.validate()?;
        self.limits.validate()
    }

    /// Configured start pose, or the center of `map` at the default altitude.
    pub fn start_pose(&self, map: &GridMap) -> Vec3 {
        match self.initial_pose {
            Some([x, y, z]) => Vec3::new(x, y, z),
            None => {
                let (ox, oy) = map.origin();
                let (ex, ey) = map.extent();
                Vec3::new(ox + ex / 2.0, oy + ey / 2.0, DEFAULT_START_ALTITUDE)
            }
        }
    }
}

/// Axis-aligned flight volume above the map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workspace {
    pub origin: (f64, f64),
    pub extent: (f64, f64),
    pub h_min: f64,
    pub h_max: f64,
}

impl Workspace {
    pub fn new(map: &GridMap, h_min: f64, h_max: f64) -> Result<Self> {
        let ws = Self {
            origin: map.origin(),
            extent: map.extent(),
            h_min,
            h_max,
        };
        if !(ws.extent.0 > 0.0 && ws.extent.1 > 0.0 && h_max > h_min) {
            return Err(Error::Geometry(format!("empty workspace {ws:?}")));
        }
        Ok(ws)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.origin.0 + self.extent.0 / 2.0, self.origin.1 + self.extent.1 / 2.0)
    }

    /// Per-coordinate `[lo, hi]` for x, y and z.
    pub fn coordinate_bounds(&self) -> [(f64, f64); 3] {
        [
            (self.origin.0, self.origin.0 + self.extent.0),
            (self.origin.1, self.origin.1 + self.extent.1),
            (self.h_min, self.h_max),
        ]
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let b = self.coordinate_bounds();
        (0..3).all(|i| p[i] >= b[i].0 && p[i] <= b[i].1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeLevel {
    pub altitude: f64,
    /// xy pitch, equal to the footprint side at this altitude.
    pub spacing: f64,
    /// Range of this level in [`Lattice::points`].
    pub start: usize,
    pub len: usize,
}

/// Candidate viewpoints on square grids at several altitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    points: Vec<Vec3>,
    levels: Vec<LatticeLevel>,
}

impl Lattice {
    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn levels(&self) -> &[LatticeLevel] {
        &self.levels
    }

    pub fn level_points(&self, k: usize) -> &[Vec3] {
        let l = &self.levels[k];
        &self.points[l.start..l.start + l.len]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Builds `levels` altitude layers evenly spaced in `(h_min, 0.95 h_max]`, each a grid
/// of abutting footprints centered on the workspace.
pub fn build_lattice(ws: &Workspace, sensor: &SensorModel, levels: usize) -> Result<Lattice> {
    if levels == 0 {
        return Err(Error::InvalidParameter("lattice needs at least one level".into()));
    }
    let top = LATTICE_CEILING * ws.h_max;
    if !(ws.extent.0 > 0.0 && ws.extent.1 > 0.0) || top <= ws.h_min {
        return Err(Error::Geometry(format!("empty workspace {ws:?}")));
    }
    let (cx, cy) = ws.center();
    let step = (top - ws.h_min) / levels as f64;
    let mut points = Vec::new();
    let mut out = Vec::with_capacity(levels);
    for k in 1..=levels {
        let h = if k == levels { top } else { ws.h_min + k as f64 * step };
        let side = 2.0 * h * sensor.half_width_per_altitude();
        let axis = |c: f64, extent: f64| -> Vec<f64> {
            let n = ((extent / side) - 1e-9).ceil().max(1.0) as usize;
            (0..n).map(|i| c + (i as f64 - (n as f64 - 1.0) / 2.0) * side).collect()
        };
        let start = points.len();
        for y in axis(cy, ws.extent.1) {
            for x in axis(cx, ws.extent.0) {
                points.push(Vec3::new(x, y, h));
            }
        }
        out.push(LatticeLevel {
            altitude: h,
            spacing: side,
            start,
            len: points.len() - start,
        });
    }
    Ok(Lattice { points, levels: out })
}

/// Entropy reduction from `before` to `after` (nats).
pub fn info_gain(before: &GridMap, after: &GridMap) -> Result<f64> {
    before.check_same_dims(after)?;
    Ok(before.entropy() - after.entropy())
}

/// Reduction of the unclassified-cell count from `before` to `after`.
pub fn class_gain(before: &GridMap, after: &GridMap, th: &ClassThresholds) -> Result<i64> {
    before.check_same_dims(after)?;
    Ok(before.unclassified_count(th) as i64 - after.unclassified_count(th) as i64)
}

/// Objective for one selection given the draw `u ~ U(0, 1)`.
pub fn choose_objective(mode: ObjectiveMode, t: f64, budget: f64, u: f64) -> Objective {
    match mode {
        ObjectiveMode::InfoOnly => Objective::Info,
        ObjectiveMode::ClassOnly => Objective::Class,
        ObjectiveMode::TimeVarying if t / budget < u => Objective::Info,
        ObjectiveMode::TimeVarying => Objective::Class,
    }
}

fn within_tol(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs())
}

/// Picks the highest-rate candidate among those with positive gain. Rates within a
/// relative `1e-9` of the best tie and go to the lower travel time, then the lower
/// index. Without any positive gain the cheapest candidate is taken and marked as a
/// fallback. Returns `None` for an empty slice.
pub fn best_selection(scored: &[Selection]) -> Option<Selection> {
    if scored.is_empty() {
        return None;
    }
    let informative: Vec<&Selection> = scored.iter().filter(|s| s.gain > 0.0).collect();
    let fallback = informative.is_empty();
    let pool: Vec<&Selection> = if fallback {
        scored.iter().collect()
    } else {
        let best = informative.iter().map(|s| s.rate).fold(f64::NEG_INFINITY, f64::max);
        informative
            .into_iter()
            .filter(|s| s.rate >= best || within_tol(s.rate, best))
            .collect()
    };
    let cheapest = pool.iter().map(|s| s.travel_time).fold(f64::INFINITY, f64::min);
    let mut pick = **pool
        .iter()
        .filter(|s| s.travel_time <= cheapest || within_tol(s.travel_time, cheapest))
        .min_by_key(|s| s.index)?;
    pick.fallback = fallback;
    Some(pick)
}

/// Outcome of one greedy selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    /// Index into [`Lattice::points`].
    pub index: usize,
    pub point: Vec3,
    pub objective: Objective,
    pub gain: f64,
    pub travel_time: f64,
    pub rate: f64,
    /// No candidate had positive gain; the cheapest one was taken.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    /// Vehicle position when planning started.
    Current,
    Global,
    Intermediate,
}

/// Planning-time view of the mission.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanState {
    /// Elapsed (simulated) mission time (s).
    pub t: f64,
    pub pose: Vec3,
    pub global: Vec<Vec3>,
    pub intermediate: Vec<Vec3>,
}

impl PlanState {
    pub fn new(t: f64, pose: Vec3) -> Self {
        Self {
            t,
            pose,
            global: Vec::new(),
            intermediate: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plan {
    /// Viewpoint chain starting at the current pose.
    pub viewpoints: Vec<Vec3>,
    pub kinds: Vec<PointKind>,
    /// Gain measure per viewpoint; the current pose copies its successor's.
    pub objectives: Vec<Objective>,
    pub trajectory: Trajectory,
    /// Chain objective (negative utility rate) of the greedy chain.
    pub greedy_value: f64,
    /// Chain objective of the returned chain.
    pub value: f64,
    pub evaluations: usize,
    /// State at the end of greedy selection, with simulated time advanced.
    pub state: PlanState,
}

/// Replanning machinery for one map geometry and sensor.
#[derive(Debug, Clone)]
pub struct Planner {
    cfg: PlannerConfig,
    sensor: SensorModel,
    workspace: Workspace,
    lattice: Lattice,
    band: (f64, f64),
}

impl Planner {
    pub fn new(cfg: PlannerConfig, sensor: SensorModel, map: &GridMap) -> Result<Self> {
        cfg.validate()?;
        sensor.validate()?;
        let workspace = Workspace::new(map, cfg.h_min, sensor.h_max)?;
        let lattice = build_lattice(&workspace, &sensor, cfg.lattice_levels)?;
        Ok(Self::with_lattice(cfg, sensor, workspace, lattice))
    }

    /// Planner over a caller-supplied candidate set.
    pub fn with_lattice(cfg: PlannerConfig, sensor: SensorModel, workspace: Workspace, lattice: Lattice) -> Self {
        let band = cfg.thresholds.logodds_band();
        Self {
            cfg,
            sensor,
            workspace,
            lattice,
            band,
        }
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    /// Gain of an ML measurement at `x` on `map` under `objective`.
    pub fn gain(&self, map: &GridMap, x: &Vec3, objective: Objective) -> Result<f64> {
        let g = self.sensor.ml_gain(map, x, self.band)?;
        Ok(match objective {
            Objective::Info => g.info,
            Objective::Class => g.class as f64,
        })
    }

    /// Draws the objective for simulated time `t` and selects the best-rate candidate.
    pub fn select_next_viewpoint<R: Rng + ?Sized>(
        &self,
        map: &GridMap,
        last: &Vec3,
        t: f64,
        rng: &mut R,
    ) -> Result<Selection> {
        let u: f64 = rng.random();
        let objective = choose_objective(self.cfg.objective_mode, t, self.cfg.budget, u);
        self.select_with_objective(map, last, objective)
    }

    /// Highest gain-per-travel-time candidate reachable from `last`.
    ///
    /// Ties go to the lower travel time, then the lower lattice index. When no
    /// candidate has positive gain the cheapest one is returned.
    pub fn select_with_objective(&self, map: &GridMap, last: &Vec3, objective: Objective) -> Result<Selection> {
        let mut scored = Vec::with_capacity(self.lattice.len());
        for (index, p) in self.lattice.points.iter().enumerate() {
            if (p - last).norm() < MIN_SEGMENT_LENGTH {
                continue;
            }
            let tt = travel_time(&[*last, *p], &self.cfg.limits)?;
            let gain = self.gain(map, p, objective)?;
            scored.push(Selection {
                index,
                point: *p,
                objective,
                gain,
                travel_time: tt,
                rate: gain / tt,
                fallback: false,
            });
        }
        best_selection(&scored)
            .ok_or_else(|| Error::Infeasible("no lattice candidate differs from the current point".into()))
    }

    /// Negative utility rate of flying `chain` from rest: the summed ML gains of the
    /// measurements that the schedule keeps, divided by the trajectory duration.
    /// The first point is the current pose and is never measured. Infeasible chains
    /// score `+inf`.
    pub fn chain_objective(
        &self,
        map: &GridMap,
        chain: &[Vec3],
        objectives: &[Objective],
        previous_measurement: Option<f64>,
    ) -> f64 {
        let Ok(traj) = plan_through(chain, &self.cfg.limits, None) else {
            return f64::INFINITY;
        };
        let schedule = measurement_schedule(
            &traj,
            &chain[1..],
            self.sensor.min_meas_interval,
            previous_measurement,
        );
        let mut scratch = map.clone();
        let mut gain = 0.0;
        for (i, _) in schedule {
            let (x, objective) = (&chain[i + 1], objectives[i + 1]);
            match (self.gain(&scratch, x, objective), self.sensor.apply_ml_measurement(&mut scratch, x)) {
                (Ok(g), Ok(())) => gain += g,
                _ => return f64::INFINITY,
            }
        }
        -gain / traj.duration()
    }

    /// Greedy chain construction followed by the configured CMA-ES refinement.
    ///
    /// `previous_measurement` is the time of the last real measurement relative to
    /// `state.t` (usually <= 0).
    pub fn replan<R: Rng + ?Sized>(
        &self,
        map: &GridMap,
        state: &PlanState,
        previous_measurement: Option<f64>,
        rng: &mut R,
    ) -> Result<Plan> {
        if state.t >= self.cfg.budget {
            return Err(Error::InvalidParameter(format!(
                "no budget left to plan: t={} B={}",
                state.t, self.cfg.budget
            )));
        }
        let mut scratch = map.clone();
        let mut st = state.clone();
        let mut chain = vec![st.pose];
        let mut kinds = vec![PointKind::Current];
        let mut objectives = vec![Objective::Info];
        while st.global.len() + st.intermediate.len() < self.cfg.horizon {
            let last = *chain.last().expect("chain starts at the pose");
            let sel = match self.select_next_viewpoint(&scratch, &last, st.t, rng) {
                Ok(s) => s,
                Err(Error::Infeasible(_)) if !st.global.is_empty() => break,
                Err(e) => return Err(e),
            };
            self.sensor.apply_ml_measurement(&mut scratch, &sel.point)?;
            st.t += sel.travel_time;
            if !st.global.is_empty() {
                let mid = (last + sel.point) / 2.0;
                st.intermediate.push(mid);
                chain.push(mid);
                kinds.push(PointKind::Intermediate);
                objectives.push(sel.objective);
            }
            st.global.push(sel.point);
            chain.push(sel.point);
            kinds.push(PointKind::Global);
            objectives.push(sel.objective);
        }
        objectives[0] = objectives[1];

        let greedy_value = self.chain_objective(map, &chain, &objectives, previous_measurement);
        let free: Vec<usize> = match self.cfg.cmaes_mode {
            CmaesMode::None => Vec::new(),
            CmaesMode::Local => (0..chain.len()).filter(|&i| kinds[i] == PointKind::Intermediate).collect(),
            CmaesMode::Global => (1..chain.len()).collect(),
        };
        let (mut value, mut evaluations) = (greedy_value, 0);
        if !free.is_empty() {
            let coords = self.workspace.coordinate_bounds();
            let x0: Vec<f64> = free.iter().flat_map(|&i| chain[i].iter().copied().collect::<Vec<_>>()).collect();
            let cma = CmaConfig {
                bounds: free.iter().flat_map(|_| coords).collect(),
                seed: rng.random(),
                ..self.cfg.cma.clone()
            };
            let assemble = |x: &[f64]| -> Vec<Vec3> {
                let mut c = chain.clone();
                for (k, &i) in free.iter().enumerate() {
                    c[i] = Vec3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]);
                }
                c
            };
            let res = minimize(
                |x| self.chain_objective(map, &assemble(x), &objectives, previous_measurement),
                &x0,
                &cma,
            )?;
            evaluations = res.evaluations;
            if res.best_value < greedy_value {
                chain = assemble(&res.best_x);
                value = res.best_value;
            }
        }
        let trajectory = plan_through(&chain, &self.cfg.limits, None)?;
        Ok(Plan {
            viewpoints: chain,
            kinds,
            objectives,
            trajectory,
            greedy_value,
            value,
            evaluations,
            state: st,
        })
    }
}

/// Flies the adaptive planner until the budget is spent.
///
/// Each cycle replans from the current belief, charges the planning cost, flies the
/// whole plan while measuring at its viewpoints, and starts over from the last one.
pub fn run_mission<R: Rng + ?Sized>(
    truth: &GroundTruthGrid,
    sensor: &SensorModel,
    noise: &NoiseConfig,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<MissionResult> {
    let mut rec = Recorder::new(truth, sensor, *noise, cfg.thresholds, cfg.budget)?;
    let planner = Planner::new(cfg.clone(), *sensor, &rec.map)?;
    let mut pose = cfg.start_pose(&rec.map);
    let mut t = 0.0;
    while t < cfg.budget {
        let previous = rec.last_measurement.map(|l| l - t);
        let plan = planner.replan(&rec.map, &PlanState::new(t, pose), previous, rng)?;
        rec.replans.push(ReplanRecord {
            t,
            viewpoints: plan.viewpoints.clone(),
            initial_objective: plan.greedy_value,
            final_objective: plan.value,
            evaluations: plan.evaluations,
            duration: plan.trajectory.duration(),
        });
        t += cfg.planning_cost;
        if t >= cfg.budget {
            t = cfg.budget;
            break;
        }
        t = rec.fly(&plan.trajectory, &plan.viewpoints[1..], t, rng)?;
        pose = *plan.viewpoints.last().expect("plans are non-empty");
    }
    Ok(rec.finish(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::CellIndex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (GridMap, SensorModel, PlannerConfig) {
        let map = GridMap::new((50.0, 50.0), 0.5, 0.5).unwrap();
        (map, SensorModel::default(), PlannerConfig::default())
    }

    #[test]
    fn lattice_levels_and_bounds() {
        let (map, sensor, cfg) = setup();
        let ws = Workspace::new(&map, cfg.h_min, sensor.h_max).unwrap();
        let lat = build_lattice(&ws, &sensor, 3).unwrap();
        let lv = lat.levels();
        assert_eq!(lv.len(), 3);
        assert!(lv[0].len > lv[2].len);
        for w in lv.windows(2) {
            assert!(w[1].altitude > w[0].altitude);
            assert!(w[1].spacing > w[0].spacing);
            assert!(w[1].len <= w[0].len);
        }
        assert!((lv[2].altitude - 0.95 * 45.0).abs() < 1e-12);
        assert!(lat.points().iter().all(|p| ws.contains(p) && p.z < sensor.h_max && p.z > cfg.h_min));
        for (k, l) in lv.iter().enumerate() {
            assert!(l.len >= 1);
            assert!((l.spacing - 2.0 * l.altitude * sensor.half_width_per_altitude()).abs() < 1e-12);
            // every candidate at a level is informative
            let m = sensor.simulate_ml_measurement(&map, &lat.level_points(k)[0]).unwrap();
            assert!(info_gain(&map, &m).unwrap() > 0.0);
        }
    }

    #[test]
    fn lattice_single_centered_candidate() {
        let map = GridMap::new((10.0, 10.0), 0.5, 0.5).unwrap();
        let sensor = SensorModel::default();
        let ws = Workspace::new(&map, 5.0, sensor.h_max).unwrap();
        let lat = build_lattice(&ws, &sensor, 1).unwrap();
        assert_eq!(lat.len(), 1);
        let p = lat.points()[0];
        assert_eq!((p.x, p.y), (5.0, 5.0));
    }

    #[test]
    fn lattice_errors() {
        let (map, sensor, _) = setup();
        let ws = Workspace::new(&map, 5.0, sensor.h_max).unwrap();
        assert!(build_lattice(&ws, &sensor, 0).is_err());
        assert!(Workspace::new(&map, 50.0, 45.0).is_err());
        let flat = Workspace { h_min: 44.0, ..ws };
        assert!(build_lattice(&flat, &sensor, 2).is_err());
    }

    #[test]
    fn info_gain_examples() {
        let (map, sensor, _) = setup();
        assert_eq!(info_gain(&map, &map).unwrap(), 0.0);
        let mut after = map.clone();
        after.set_probability(CellIndex::new(3, 3), 0.8).unwrap();
        let g = info_gain(&map, &after).unwrap();
        assert!((g - (std::f64::consts::LN_2 - 0.500402)).abs() < 1e-5, "{g}");
        let high = sensor.simulate_ml_measurement(&map, &Vec3::new(25.0, 25.0, 45.0)).unwrap();
        assert_eq!(info_gain(&map, &high).unwrap(), 0.0);
        let other = GridMap::new((10.0, 10.0), 0.5, 0.5).unwrap();
        assert!(info_gain(&map, &other).is_err());
    }

    #[test]
    fn class_gain_examples() {
        let th = ClassThresholds::default();
        let map = GridMap::new((5.0, 5.0), 0.5, 0.5).unwrap();
        assert_eq!(class_gain(&map, &map, &th).unwrap(), 0);
        // a sensor reporting 0.8 over the whole 10x10 map
        let sensor = SensorModel {
            p_tp0: 0.8,
            p_fp0: 0.2,
            h_max: 1e6,
            ..SensorModel::default()
        };
        let after = sensor.simulate_ml_measurement(&map, &Vec3::new(2.5, 2.5, 5.0)).unwrap();
        assert!((after.probability(CellIndex::new(0, 0)).unwrap() - 0.8).abs() < 1e-4);
        assert_eq!(class_gain(&map, &after, &th).unwrap(), 100);
        let mut classified = map.clone();
        classified.set_probability(CellIndex::new(0, 0), 0.8).unwrap();
        assert_eq!(class_gain(&classified, &map, &th).unwrap(), -1);
    }

    #[test]
    fn objective_switching() {
        assert_eq!(choose_objective(ObjectiveMode::InfoOnly, 299.0, 300.0, 0.0), Objective::Info);
        assert_eq!(choose_objective(ObjectiveMode::ClassOnly, 0.0, 300.0, 1.0), Objective::Class);
        assert_eq!(choose_objective(ObjectiveMode::TimeVarying, 0.0, 300.0, 1e-12), Objective::Info);
        assert_eq!(choose_objective(ObjectiveMode::TimeVarying, 300.0, 300.0, 0.999_999), Objective::Class);
        assert_eq!(choose_objective(ObjectiveMode::TimeVarying, 149.9, 300.0, 0.5), Objective::Info);
        assert_eq!(choose_objective(ObjectiveMode::TimeVarying, 150.0, 300.0, 0.5), Objective::Class);
    }

    #[test]
    fn selection_skips_current_point_and_prefers_positive_rate() {
        let (map, sensor, cfg) = setup();
        let planner = Planner::new(cfg, sensor, &map).unwrap();
        let start = planner.lattice().points()[0];
        let s = planner.select_with_objective(&map, &start, Objective::Info).unwrap();
        assert_ne!(s.index, 0);
        assert!(s.rate > 0.0 && !s.fallback);
    }

    #[test]
    fn saturated_map_falls_back_to_cheapest() {
        let (mut map, sensor, cfg) = setup();
        for c in 0..100 {
            for r in 0..100 {
                map.set_logodds(CellIndex::new(c, r), -50.0).unwrap();
            }
        }
        let planner = Planner::new(cfg, sensor, &map).unwrap();
        let pose = Vec3::new(25.0, 25.0, 40.0);
        let s = planner.select_with_objective(&map, &pose, Objective::Info).unwrap();
        assert!(s.fallback);
        let cheapest = planner
            .lattice()
            .points()
            .iter()
            .map(|p| travel_time(&[pose, *p], &planner.config().limits).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!((s.travel_time - cheapest).abs() < 1e-9);
    }

    #[test]
    fn replan_horizon_five_gives_three_global_two_intermediate() {
        let (map, sensor, cfg) = setup();
        let cfg = PlannerConfig {
            cmaes_mode: CmaesMode::None,
            ..cfg
        };
        let planner = Planner::new(cfg, sensor, &map).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = map.fingerprint();
        let plan = planner
            .replan(&map, &PlanState::new(0.0, Vec3::new(25.0, 25.0, 40.0)), None, &mut rng)
            .unwrap();
        assert_eq!(map.fingerprint(), before);
        assert_eq!(plan.state.global.len(), 3);
        assert_eq!(plan.state.intermediate.len(), 2);
        assert_eq!(plan.viewpoints.len(), 6);
        assert_eq!(plan.value, plan.greedy_value);
        assert_eq!(plan.evaluations, 0);
        // midpoints sit halfway between consecutive global points
        assert_eq!(plan.kinds[2], PointKind::Intermediate);
        assert!((plan.viewpoints[2] - (plan.viewpoints[1] + plan.viewpoints[3]) / 2.0).norm() < 1e-12);
        assert!(plan.state.t > 0.0);
    }

    #[test]
    fn global_refinement_never_worse_than_greedy() {
        let (map, sensor, cfg) = setup();
        let cfg = PlannerConfig {
            cma: CmaConfig {
                max_evals: 120,
                ..CmaConfig::default()
            },
            ..cfg
        };
        for mode in [CmaesMode::Local, CmaesMode::Global] {
            let planner = Planner::new(PlannerConfig { cmaes_mode: mode, ..cfg.clone() }, sensor, &map).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let plan = planner
                .replan(&map, &PlanState::new(0.0, Vec3::new(25.0, 25.0, 40.0)), None, &mut rng)
                .unwrap();
            assert!(plan.value <= plan.greedy_value);
            assert!(plan.evaluations > 0 && plan.evaluations <= 120);
            assert_eq!(plan.viewpoints[0], Vec3::new(25.0, 25.0, 40.0));
            assert!(plan.viewpoints.iter().skip(1).all(|p| planner.workspace().contains(p)));
            let recomputed = planner.chain_objective(&map, &plan.viewpoints, &plan.objectives, None);
            assert_eq!(recomputed, plan.value);
        }
    }

    #[test]
    fn replan_refuses_exhausted_budget() {
        let (map, sensor, cfg) = setup();
        let planner = Planner::new(cfg, sensor, &map).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(planner
            .replan(&map, &PlanState::new(300.0, Vec3::new(25.0, 25.0, 40.0)), None, &mut rng)
            .is_err());
    }

    fn quick_cfg(budget: f64) -> PlannerConfig {
        PlannerConfig {
            budget,
            cma: CmaConfig {
                max_evals: 40,
                ..CmaConfig::default()
            },
            ..PlannerConfig::default()
        }
    }

    #[test]
    fn short_budget_truncates_first_trajectory() {
        let truth = GroundTruthGrid::empty((50.0, 50.0), 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let res = run_mission(&truth, &SensorModel::default(), &NoiseConfig::default(), &quick_cfg(5.0), &mut rng)
            .unwrap();
        assert_eq!(res.elapsed, 5.0);
        assert_eq!(res.replans.len(), 1);
        assert!(res.replans[0].duration > 5.0);
        assert!(res.log.records().iter().all(|r| r.t <= 5.0));
    }

    #[test]
    fn noiseless_mission_reduces_entropy() {
        let truth = crate::environment::generate_environment((50.0, 50.0), 0.5, 100.0, 4).unwrap();
        let sensor = SensorModel {
            h_max: 1000.0,
            ..SensorModel::default()
        };
        let noise = NoiseConfig {
            enabled: false,
            ..NoiseConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let res = run_mission(&truth, &sensor, &noise, &quick_cfg(1000.0), &mut rng).unwrap();
        let recs = res.log.records();
        assert!(recs.len() > 1, "{:?}", res.replans);
        assert!(recs.last().unwrap().entropy < recs[0].entropy);
        assert!(recs.windows(2).all(|w| w[1].t > w[0].t));
        assert!(res.elapsed >= 1000.0 && recs.last().unwrap().t <= 1000.0);
    }

    #[test]
    fn mission_is_deterministic() {
        let truth = crate::environment::generate_environment((50.0, 50.0), 0.5, 150.0, 9).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            run_mission(&truth, &SensorModel::default(), &NoiseConfig::default(), &quick_cfg(60.0), &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log, b.log);
        assert_eq!(a.map.fingerprint(), b.map.fingerprint());
    }
}
