//! Plan execution shared by all planners: flying trajectories, taking noisy
//! measurements and logging metrics.

use std::io::Write;

use rand::Rng;

use crate::environment::GroundTruthGrid;
use crate::error::Result;
use crate::gridmap::{ClassThresholds, GridMap};
use crate::metrics::{MetricsLog, MetricsRecord};
use crate::sensor::{fuse_measurement, FalsePositiveLedger, NoiseConfig, SensorModel};
use crate::trajectory::{measurement_schedule, Trajectory};
use crate::Vec3;

/// One planning cycle as seen from the outside.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplanRecord {
    /// Mission time at which planning started (s).
    pub t: f64,
    pub viewpoints: Vec<Vec3>,
    /// Planner objective of the initial (greedy) plan; lower is better.
    pub initial_objective: f64,
    /// Objective of the executed plan.
    pub final_objective: f64,
    pub evaluations: usize,
    pub duration: f64,
}

#[derive(Debug, Clone)]
pub struct MissionResult {
    pub log: MetricsLog,
    pub replans: Vec<ReplanRecord>,
    /// Belief at the end of the mission.
    pub map: GridMap,
    /// Positions where measurements were fused, with their mission times.
    pub measurements: Vec<(f64, Vec3)>,
    /// Mission time at termination (s).
    pub elapsed: f64,
}

impl MissionResult {
    /// CSV with one row per replan; viewpoints are `x y z` triples joined by `;`.
    pub fn write_replans_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "replan",
            "t_s",
            "initial_objective",
            "final_objective",
            "evaluations",
            "duration_s",
            "viewpoints",
        ])?;
        for (i, r) in self.replans.iter().enumerate() {
            let vps: Vec<String> = r
                .viewpoints
                .iter()
                .map(|p| format!("{:.3} {:.3} {:.3}", p.x, p.y, p.z))
                .collect();
            w.write_record([
                i.to_string(),
                format!("{:.6}", r.t),
                format!("{:.6}", r.initial_objective),
                format!("{:.6}", r.final_objective),
                r.evaluations.to_string(),
                format!("{:.6}", r.duration),
                vps.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Real-world side of a mission: ground truth, the belief built from noisy
/// measurements, and the metrics log.
pub(crate) struct Recorder<'a> {
    truth: &'a GroundTruthGrid,
    sensor: &'a SensorModel,
    noise: NoiseConfig,
    thresholds: ClassThresholds,
    budget: f64,
    fp: FalsePositiveLedger,
    pub map: GridMap,
    pub log: MetricsLog,
    pub measurements: Vec<(f64, Vec3)>,
    pub replans: Vec<ReplanRecord>,
    /// Mission time of the most recent measurement.
    pub last_measurement: Option<f64>,
}

impl<'a> Recorder<'a> {
    pub fn new(
        truth: &'a GroundTruthGrid,
        sensor: &'a SensorModel,
        noise: NoiseConfig,
        thresholds: ClassThresholds,
        budget: f64,
    ) -> Result<Self> {
        let map = truth.blank_map(0.5)?;
        let mut log = MetricsLog::new();
        log.push(MetricsRecord::observe(0.0, &map, truth, &thresholds)?)?;
        Ok(Self {
            truth,
            sensor,
            noise,
            thresholds,
            budget,
            fp: FalsePositiveLedger::new(),
            map,
            log,
            measurements: Vec::new(),
            replans: Vec::new(),
            last_measurement: None,
        })
    }

    /// Takes and fuses one noisy measurement at `x`, logging metrics at time `t`.
    pub fn measure<R: Rng + ?Sized>(&mut self, x: &Vec3, t: f64, rng: &mut R) -> Result<()> {
        let z = self
            .sensor
            .simulate_measurement(self.truth, x, &self.noise, &mut self.fp, rng)?;
        fuse_measurement(&mut self.map, &z)?;
        self.last_measurement = Some(t);
        self.measurements.push((t, *x));
        self.log
            .push(MetricsRecord::observe(t, &self.map, self.truth, &self.thresholds)?)
    }

    /// Flies `traj` starting at mission time `t0`, measuring at the scheduled passages
    /// of `viewpoints` that fall within the budget. Returns the mission time afterwards,
    /// truncated to the budget.
    pub fn fly<R: Rng + ?Sized>(
        &mut self,
        traj: &Trajectory,
        viewpoints: &[Vec3],
        t0: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let previous = self.last_measurement.map(|l| l - t0);
        for (i, tm) in measurement_schedule(traj, viewpoints, self.sensor.min_meas_interval, previous) {
            let t = t0 + tm;
            if t > self.budget {
                break;
            }
            self.measure(&viewpoints[i], t, rng)?;
        }
        Ok((t0 + traj.duration()).min(self.budget))
    }

    pub fn finish(self, elapsed: f64) -> MissionResult {
        MissionResult {
            log: self.log,
            replans: self.replans,
            map: self.map,
            measurements: self.measurements,
            elapsed,
        }
    }
}
