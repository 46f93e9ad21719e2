//! Comparison planners: lawnmower coverage and a budgeted RIG-tree.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::GroundTruthGrid;
use crate::error::{Error, Result};
use crate::gridmap::GridMap;
use crate::mission::{MissionResult, Recorder, ReplanRecord};
use crate::planner::{PlannerConfig, Workspace};
use crate::sensor::{NoiseConfig, SensorModel};
use crate::trajectory::{plan_through, travel_time, DynamicLimits, Trajectory, MIN_SEGMENT_LENGTH};
use crate::Vec3;

/// Fraction of map cells a coverage plan must observe.
pub const COVERAGE_FRACTION: f64 = 0.995;
const SPEED_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageConfig {
    /// Images of every cell required along a lane when the camera triggers at its
    /// maximum rate.
    pub min_looks: usize,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self { min_looks: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct CoveragePlan {
    pub altitude: f64,
    /// Reference (maximum) speed the trajectory was planned for (m/s).
    pub speed: f64,
    pub lanes: usize,
    /// Lane end points in flight order.
    pub corners: Vec<Vec3>,
    /// Every waypoint of the trajectory, corners included.
    pub waypoints: Vec<Vec3>,
    /// `None` when the plan is a single hover point.
    pub trajectory: Option<Trajectory>,
    /// Measurement times and positions along the trajectory.
    pub measurements: Vec<(f64, Vec3)>,
}

impl CoveragePlan {
    pub fn duration(&self) -> f64 {
        self.trajectory.as_ref().map_or(0.0, Trajectory::duration)
    }

    /// Fraction of cells of `map` inside at least one measurement footprint.
    pub fn covered_fraction(&self, map: &GridMap, sensor: &SensorModel) -> Result<f64> {
        let (cols, _) = map.dims();
        let mut seen = vec![false; map.len()];
        for (_, x) in &self.measurements {
            for c in sensor.footprint_at(x)?.cells(map).cells() {
                seen[c.row * cols + c.col] = true;
            }
        }
        Ok(seen.iter().filter(|&&s| s).count() as f64 / map.len() as f64)
    }
}

/// Boustrophedon geometry for `n` lanes of pitch `side` across the shorter axis.
fn lane_corners(ws: &Workspace, n: usize, side: f64, h: f64) -> Vec<Vec3> {
    let (ex, ey) = ws.extent;
    let along_x = ex >= ey;
    let (long, short) = if along_x { (ex, ey) } else { (ey, ex) };
    let (o_long, o_short) = if along_x { (ws.origin.0, ws.origin.1) } else { (ws.origin.1, ws.origin.0) };
    let pitch = short / n as f64;
    let (a, b) = if side >= long {
        (o_long + long / 2.0, o_long + long / 2.0)
    } else {
        (o_long + side / 2.0, o_long + long - side / 2.0)
    };
    let mut out = Vec::with_capacity(2 * n);
    for k in 0..n {
        let c = o_short + pitch * (k as f64 + 0.5);
        let ends = if k % 2 == 0 { [a, b] } else { [b, a] };
        for e in ends {
            let p = if along_x { Vec3::new(e, c, h) } else { Vec3::new(c, e, h) };
            if out.last().is_none_or(|q: &Vec3| (p - q).norm() >= MIN_SEGMENT_LENGTH) {
                out.push(p);
            }
        }
    }
    out
}

/// Subdivides every leg so consecutive waypoints are at most `spacing` apart.
/// Returns the waypoints and the index of each corner among them.
fn densify(corners: &[Vec3], spacing: f64) -> (Vec<Vec3>, Vec<usize>) {
    let mut pts = vec![corners[0]];
    let mut idx = vec![0];
    for w in corners.windows(2) {
        let m = ((w[1] - w[0]).norm() / spacing - 1e-9).ceil().max(1.0) as usize;
        for j in 1..=m {
            pts.push(w[0] + (w[1] - w[0]) * (j as f64 / m as f64));
        }
        idx.push(pts.len() - 1);
    }
    (pts, idx)
}

/// Measurement times: every corner plus evenly spaced shots along each leg, no two
/// closer than `interval`.
fn leg_schedule(traj: &Trajectory, corner_idx: &[usize], interval: f64) -> Result<Vec<(f64, Vec3)>> {
    let knots = traj.joint_times();
    let mut times = vec![0.0];
    for w in corner_idx.windows(2) {
        let (ta, tb) = (knots[w[0]], knots[w[1]]);
        let m = if interval > 0.0 {
            ((tb - ta) / interval).floor().max(1.0) as usize
        } else {
            w[1] - w[0]
        };
        times.extend((1..=m).map(|j| ta + (tb - ta) * j as f64 / m as f64));
    }
    times
        .into_iter()
        .map(|t| Ok((t, traj.sample(t)?.position)))
        .collect()
}

/// Fixed-altitude lawnmower plan finishing within `budget`.
///
/// Lanes run along the longer workspace axis with a pitch of one footprint side, so
/// each lane count fixes the altitude. Starting from the most lanes the minimum
/// altitude allows, the first lane count is taken for which some speed up to
/// `limits.v_ref` finishes in time, gives `min_looks` images per cell along track and
/// observes [`COVERAGE_FRACTION`] of the map. The speed is the slowest that finishes.
pub fn coverage_plan(
    ws: &Workspace,
    budget: f64,
    sensor: &SensorModel,
    limits: &DynamicLimits,
    cfg: &CoverageConfig,
) -> Result<CoveragePlan> {
    limits.validate()?;
    sensor.validate()?;
    if !(budget > 0.0) || cfg.min_looks == 0 {
        return Err(Error::InvalidParameter(format!(
            "coverage needs a positive budget and min_looks, got {budget} and {}",
            cfg.min_looks
        )));
    }
    let map = GridMap::with_origin(ws.origin, ws.extent, ws.extent.0.min(ws.extent.1) / 100.0, 0.5)?;
    let short = ws.extent.0.min(ws.extent.1);
    let side_min = 2.0 * ws.h_min * sensor.half_width_per_altitude();
    let n_max = ((short / side_min + 1e-9).floor() as usize).max(1);
    let dt = sensor.min_meas_interval;
    for n in (1..=n_max).rev() {
        let side = (short / n as f64).max(side_min);
        let h = sensor.altitude_for_side(side).max(ws.h_min);
        if h >= sensor.h_max {
            continue;
        }
        let corners = lane_corners(ws, n, side, h);
        if corners.len() == 1 {
            let plan = CoveragePlan {
                altitude: h,
                speed: 0.0,
                lanes: n,
                waypoints: corners.clone(),
                measurements: hover_schedule(corners[0], budget, dt),
                corners,
                trajectory: None,
            };
            return Ok(plan);
        }
        let v_cap = if dt > 0.0 {
            limits.v_ref.min(side / (cfg.min_looks as f64 * dt))
        } else {
            limits.v_ref
        };
        let (waypoints, corner_idx) = densify(&corners, side / cfg.min_looks as f64);
        let plan_at = |v: f64| plan_through(&waypoints, &DynamicLimits { v_ref: v, ..*limits }, None);
        if plan_at(v_cap)?.duration() > budget {
            continue;
        }
        let (mut lo, mut hi) = (0.0, v_cap);
        while hi - lo > SPEED_REL_TOL * hi {
            let mid = 0.5 * (lo + hi);
            if plan_at(mid)?.duration() <= budget {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let traj = plan_at(hi)?;
        let plan = CoveragePlan {
            altitude: h,
            speed: hi,
            lanes: n,
            measurements: leg_schedule(&traj, &corner_idx, dt)?,
            corners,
            waypoints,
            trajectory: Some(traj),
        };
        if plan.covered_fraction(&map, sensor)? >= COVERAGE_FRACTION {
            return Ok(plan);
        }
    }
    Err(Error::Infeasible(format!("no lawnmower pattern covers the workspace within {budget} s")))
}

fn hover_schedule(x: Vec3, budget: f64, interval: f64) -> Vec<(f64, Vec3)> {
    if interval <= 0.0 {
        return vec![(0.0, x)];
    }
    let n = (budget / interval).floor() as usize;
    (0..=n).map(|k| (k as f64 * interval, x)).collect()
}

/// Flies the coverage plan from its first waypoint, measuring on its schedule.
pub fn run_coverage_mission<R: Rng + ?Sized>(
    truth: &GroundTruthGrid,
    sensor: &SensorModel,
    noise: &NoiseConfig,
    cfg: &PlannerConfig,
    coverage: &CoverageConfig,
    rng: &mut R,
) -> Result<MissionResult> {
    cfg.validate()?;
    let mut rec = Recorder::new(truth, sensor, *noise, cfg.thresholds, cfg.budget)?;
    let ws = Workspace::new(&rec.map, cfg.h_min, sensor.h_max)?;
    let plan = coverage_plan(&ws, cfg.budget, sensor, &cfg.limits, coverage)?;
    rec.replans.push(ReplanRecord {
        t: 0.0,
        viewpoints: plan.corners.clone(),
        initial_objective: 0.0,
        final_objective: 0.0,
        evaluations: 0,
        duration: plan.duration(),
    });
    for (t, x) in &plan.measurements {
        if *t > cfg.budget {
            break;
        }
        rec.measure(x, *t, rng)?;
    }
    let elapsed = plan.duration().min(cfg.budget);
    Ok(rec.finish(elapsed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    /// Maximum extension length (m).
    pub step: f64,
    /// Vertices closer than this are compared for pruning (m).
    pub prune_radius: f64,
    /// Radius of the neighbourhood extended towards a new sample; defaults to `step`.
    pub near_radius: Option<f64>,
    /// Edge evaluations per tree; defaults to the planner's CMA-ES budget.
    pub max_evals: Option<usize>,
    /// Position of the initial high-altitude scan; defaults to the start pose.
    pub prior_scan: Option<[f64; 3]>,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            step: 10.0,
            prune_radius: 2.0,
            near_radius: None,
            max_evals: None,
            prior_scan: None,
        }
    }
}

impl RigConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.prune_radius >= 0.0 && self.near_radius.is_none_or(|r| r > 0.0)) {
            return Err(Error::InvalidParameter(format!("invalid RIG-tree radii {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigVertex {
    pub position: Vec3,
    /// Accumulated travel time from the root (s).
    pub cost: f64,
    /// Accumulated entropy reduction along the branch (nats).
    pub info: f64,
    pub parent: Option<usize>,
    /// Dominated by a co-located vertex; no longer extended.
    pub pruned: bool,
}

#[derive(Debug, Clone)]
pub struct RigTree {
    pub vertices: Vec<RigVertex>,
    /// Edge evaluations spent.
    pub evaluations: usize,
}

impl RigTree {
    /// Positions from the root to vertex `v`.
    pub fn branch(&self, v: usize) -> Vec<Vec3> {
        let mut out = Vec::new();
        let mut cur = Some(v);
        while let Some(i) = cur {
            out.push(self.vertices[i].position);
            cur = self.vertices[i].parent;
        }
        out.reverse();
        out
    }

    /// Vertex ending the branch to execute: best info per cost, ties to lower cost
    /// then lower index; the cheapest vertex when nothing is informative. `None` when
    /// the tree holds only its root.
    pub fn best_vertex(&self) -> Option<usize> {
        let rest = || self.vertices.iter().enumerate().skip(1);
        let informative = rest().filter(|(_, v)| v.info > 0.0);
        let by_rate = informative.max_by(|(i, a), (j, b)| {
            (a.info / a.cost)
                .total_cmp(&(b.info / b.cost))
                .then(b.cost.total_cmp(&a.cost))
                .then(j.cmp(i))
        });
        by_rate
            .or_else(|| rest().min_by(|(i, a), (j, b)| a.cost.total_cmp(&b.cost).then(i.cmp(j))))
            .map(|(i, _)| i)
    }
}

/// Grows a RIG-tree from `pose` over `map` and returns it with its best branch.
#[allow(clippy::too_many_arguments)]
pub fn rig_tree_plan<R: Rng + ?Sized>(
    map: &GridMap,
    pose: &Vec3,
    time_left: f64,
    sensor: &SensorModel,
    limits: &DynamicLimits,
    ws: &Workspace,
    cfg: &RigConfig,
    max_evals: usize,
    rng: &mut R,
) -> Result<(RigTree, Vec<Vec3>)> {
    cfg.validate()?;
    if !(time_left > 0.0) {
        return Err(Error::InvalidParameter(format!("time_left must be positive, got {time_left}")));
    }
    let near_radius = cfg.near_radius.unwrap_or(cfg.step);
    let bounds = ws.coordinate_bounds();
    let mut tree = RigTree {
        vertices: vec![RigVertex {
            position: *pose,
            cost: 0.0,
            info: 0.0,
            parent: None,
            pruned: false,
        }],
        evaluations: 0,
    };
    let mut maps: Vec<Option<GridMap>> = vec![Some(map.clone())];
    // every sample costs at least one evaluation, so this also bounds the loop
    while tree.evaluations < max_evals {
        let sample = Vec3::new(
            rng.random_range(bounds[0].0..=bounds[0].1),
            rng.random_range(bounds[1].0..=bounds[1].1),
            rng.random_range(bounds[2].0..=bounds[2].1),
        );
        let nearest = live(&tree)
            .min_by(|&a, &b| dist(&tree, a, &sample).total_cmp(&dist(&tree, b, &sample)))
            .expect("the root is never pruned");
        let from = tree.vertices[nearest].position;
        let d = (sample - from).norm();
        let x_new = if d <= cfg.step { sample } else { from + (sample - from) * (cfg.step / d) };
        let mut near: Vec<usize> = live(&tree).filter(|&i| dist(&tree, i, &x_new) <= near_radius).collect();
        if near.is_empty() {
            near.push(nearest);
        }
        if near.iter().all(|&i| dist(&tree, i, &x_new) < MIN_SEGMENT_LENGTH) {
            tree.evaluations += 1;
            continue;
        }
        for parent in near {
            if tree.evaluations >= max_evals {
                break;
            }
            if tree.vertices[parent].pruned {
                continue;
            }
            let p = &tree.vertices[parent];
            if (x_new - p.position).norm() < MIN_SEGMENT_LENGTH {
                continue;
            }
            tree.evaluations += 1;
            let cost = p.cost + travel_time(&[p.position, x_new], limits)?;
            if cost > time_left {
                continue;
            }
            let parent_map = maps[parent].as_ref().expect("live vertices keep their map");
            let gain = sensor.ml_gain(parent_map, &x_new, (f64::NEG_INFINITY, f64::INFINITY))?;
            let info = p.info + gain.info;
            let co_located: Vec<usize> = live(&tree)
                .filter(|&i| i != 0 && dist(&tree, i, &x_new) <= cfg.prune_radius)
                .collect();
            if co_located
                .iter()
                .any(|&i| tree.vertices[i].info >= info && tree.vertices[i].cost <= cost)
            {
                continue;
            }
            let mut child_map = parent_map.clone();
            sensor.apply_ml_measurement(&mut child_map, &x_new)?;
            for &i in &co_located {
                let v = &mut tree.vertices[i];
                if info >= v.info && cost <= v.cost {
                    v.pruned = true;
                    maps[i] = None;
                }
            }
            tree.vertices.push(RigVertex {
                position: x_new,
                cost,
                info,
                parent: Some(parent),
                pruned: false,
            });
            maps.push(Some(child_map));
        }
    }
    let branch = match tree.best_vertex() {
        Some(v) => tree.branch(v),
        None => vec![*pose],
    };
    Ok((tree, branch))
}

fn live(tree: &RigTree) -> impl Iterator<Item = usize> + '_ {
    tree.vertices.iter().enumerate().filter(|(_, v)| !v.pruned).map(|(i, _)| i)
}

fn dist(tree: &RigTree, i: usize, x: &Vec3) -> f64 {
    (tree.vertices[i].position - x).norm()
}

/// Alternates RIG-tree construction and execution of the best branch, starting with
/// a high-altitude prior scan.
pub fn run_rig_mission<R: Rng + ?Sized>(
    truth: &GroundTruthGrid,
    sensor: &SensorModel,
    noise: &NoiseConfig,
    cfg: &PlannerConfig,
    rig: &RigConfig,
    rng: &mut R,
) -> Result<MissionResult> {
    cfg.validate()?;
    let mut rec = Recorder::new(truth, sensor, *noise, cfg.thresholds, cfg.budget)?;
    let ws = Workspace::new(&rec.map, cfg.h_min, sensor.h_max)?;
    let mut pose = cfg.start_pose(&rec.map);
    let scan = rig.prior_scan.map_or(pose, |[x, y, z]| Vec3::new(x, y, z));
    rec.measure(&scan, 0.0, rng)?;
    let max_evals = rig.max_evals.unwrap_or(cfg.cma.max_evals);
    let mut t = 0.0;
    while t < cfg.budget {
        let (tree, branch) = rig_tree_plan(
            &rec.map,
            &pose,
            cfg.budget - t,
            sensor,
            &cfg.limits,
            &ws,
            rig,
            max_evals,
            rng,
        )?;
        let end = tree.best_vertex().map(|v| &tree.vertices[v]);
        let objective = end.map_or(0.0, |v| -v.info / v.cost);
        rec.replans.push(ReplanRecord {
            t,
            viewpoints: branch.clone(),
            initial_objective: objective,
            final_objective: objective,
            evaluations: tree.evaluations,
            duration: end.map_or(0.0, |v| v.cost),
        });
        t += cfg.planning_cost;
        if branch.len() < 2 || t >= cfg.budget {
            t = cfg.budget;
            break;
        }
        for w in branch.windows(2) {
            let traj = plan_through(w, &cfg.limits, None)?;
            t = rec.fly(&traj, &w[1..], t, rng)?;
            pose = w[1];
            if t >= cfg.budget {
                break;
            }
        }
    }
    Ok(rec.finish(t))
}
