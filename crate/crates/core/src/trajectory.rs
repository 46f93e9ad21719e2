//! Piecewise-polynomial trajectories through ordered viewpoints.
//!
//! Each segment is a 12-coefficient polynomial per axis parameterized by the position
//! and first five derivatives at both of its endpoints. Joints share those derivative
//! values, so continuity up to order five holds by construction. Positions are fixed
//! at the viewpoints, the start and end are held at rest up to order four, and every
//! remaining derivative is chosen to minimize the integrated squared snap. That
//! minimization is an unconstrained quadratic program, solved in closed form.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Coefficients per axis per segment.
pub const N_COEFFS: usize = 12;
/// Derivative orders 0..=5 stored at each segment endpoint.
const N_DERIVS: usize = N_COEFFS / 2;
/// Highest derivative order fixed at the trajectory boundary.
const BOUNDARY_ORDER: usize = 4;
/// Feasibility slack applied to the reference velocity and acceleration.
pub const FEASIBILITY_SLACK: f64 = 1.05;
/// Samples per segment when checking dynamic limits.
const CHECK_SAMPLES: usize = 64;
const MAX_SCALING_ROUNDS: usize = 8;
/// Consecutive viewpoints closer than this are treated as duplicates.
pub const MIN_SEGMENT_LENGTH: f64 = 1e-9;

type Mat12 = SMatrix<f64, N_COEFFS, N_COEFFS>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicLimits {
    /// Reference speed (m/s).
    pub v_ref: f64,
    /// Reference acceleration (m/s^2).
    pub a_ref: f64,
}

impl Default for DynamicLimits {
    fn default() -> Self {
        Self { v_ref: 3.0, a_ref: 1.5 }
    }
}

impl DynamicLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_ref > 0.0 && self.a_ref > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dynamic limits must be positive, got v_ref={} a_ref={}",
                self.v_ref, self.a_ref
            )));
        }
        Ok(())
    }

    /// Trapezoidal (or triangular, for short hops) rest-to-rest travel time over `distance`.
    pub fn ramp_time(&self, distance: f64) -> f64 {
        let (v, a) = (self.v_ref, self.a_ref);
        if distance >= v * v / a {
            distance / v + v / a
        } else {
            2.0 * (distance / a).sqrt()
        }
    }
}

/// Derivatives of orders 1..=4 imposed at the first and last viewpoint.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryDerivatives {
    pub start: [Vec3; BOUNDARY_ORDER],
    pub end: [Vec3; BOUNDARY_ORDER],
}

impl BoundaryDerivatives {
    fn is_rest(&self) -> bool {
        self.start.iter().chain(self.end.iter()).all(|d| d.norm() == 0.0)
    }
}

/// Position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

/// One polynomial piece. Coefficients are stored over normalized time `s = t / duration`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySegment {
    coeffs: [[f64; N_COEFFS]; 3],
    duration: f64,
}

impl PolySegment {
    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Coefficients of `sum c_k s^k` with `s = t / duration`, per axis.
    pub fn normalized_coefficients(&self) -> &[[f64; N_COEFFS]; 3] {
        &self.coeffs
    }

    /// Coefficients of `sum c_k t^k` in physical time, per axis.
    pub fn physical_coefficients(&self) -> [[f64; N_COEFFS]; 3] {
        let mut out = self.coeffs;
        for axis in out.iter_mut() {
            let mut scale = 1.0;
            for c in axis.iter_mut() {
                *c /= scale;
                scale *= self.duration;
            }
        }
        out
    }

    /// `order`-th time derivative at local time `t` in `[0, duration]`.
    pub fn derivative(&self, t: f64, order: usize) -> Vec3 {
        let s = t / self.duration;
        let scale = self.duration.powi(-(order as i32));
        let mut out = [0.0; 3];
        for (axis, c) in self.coeffs.iter().enumerate() {
            out[axis] = poly_derivative(c, s, order) * scale;
        }
        Vec3::new(out[0], out[1], out[2])
    }

    fn state(&self, t: f64) -> State {
        let s = t / self.duration;
        let inv = 1.0 / self.duration;
        let mut p = [0.0; 3];
        let mut v = [0.0; 3];
        let mut a = [0.0; 3];
        for (axis, c) in self.coeffs.iter().enumerate() {
            let (p0, p1, p2) = poly_012(c, s);
            p[axis] = p0;
            v[axis] = p1 * inv;
            a[axis] = p2 * inv * inv;
        }
        State {
            position: Vec3::from(p),
            velocity: Vec3::from(v),
            acceleration: Vec3::from(a),
        }
    }

    /// Integral of the squared fourth derivative over the segment, summed over axes.
    pub fn snap_cost(&self) -> f64 {
        let q = snap_gram();
        let scale = self.duration.powi(-7);
        self.coeffs
            .iter()
            .map(|c| {
                let v = nalgebra::SVector::<f64, N_COEFFS>::from_column_slice(c);
                (v.transpose() * q * v)[(0, 0)]
            })
            .sum::<f64>()
            * scale
    }
}

/// Piecewise polynomial through a chain of viewpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    segments: Vec<PolySegment>,
    /// Start time of each segment plus the total duration at the end.
    knots: Vec<f64>,
}

impl Trajectory {
    fn from_segments(segments: Vec<PolySegment>) -> Self {
        let mut knots = Vec::with_capacity(segments.len() + 1);
        let mut t = 0.0;
        knots.push(t);
        for s in &segments {
            t += s.duration;
            knots.push(t);
        }
        Self { segments, knots }
    }

    /// Builds segments from explicit joint derivatives (orders 0..=5 in physical units).
    pub fn from_joint_derivatives(joints: &[[Vec3; N_DERIVS]], durations: &[f64]) -> Result<Self> {
        if joints.len() != durations.len() + 1 || durations.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "{} joints need {} durations, got {}",
                joints.len(),
                joints.len().saturating_sub(1),
                durations.len()
            )));
        }
        let ainv = endpoint_map_inverse();
        let mut segments = Vec::with_capacity(durations.len());
        for (k, &t) in durations.iter().enumerate() {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::InvalidParameter(format!("segment duration must be positive, got {t}")));
            }
            let mut coeffs = [[0.0; N_COEFFS]; 3];
            for (axis, out) in coeffs.iter_mut().enumerate() {
                let mut e = nalgebra::SVector::<f64, N_COEFFS>::zeros();
                let mut scale = 1.0;
                for j in 0..N_DERIVS {
                    e[j] = joints[k][j][axis] * scale;
                    e[N_DERIVS + j] = joints[k + 1][j][axis] * scale;
                    scale *= t;
                }
                let c = ainv * e;
                out.copy_from_slice(c.as_slice());
            }
            segments.push(PolySegment { coeffs, duration: t });
        }
        Ok(Self::from_segments(segments))
    }

    pub fn segments(&self) -> &[PolySegment] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        *self.knots.last().unwrap_or(&0.0)
    }

    /// Times at which the trajectory passes its joints (first is 0, last is the duration).
    pub fn joint_times(&self) -> &[f64] {
        &self.knots
    }

    /// Joint positions in order.
    pub fn waypoints(&self) -> Vec<Vec3> {
        let mut pts: Vec<Vec3> = self.segments.iter().map(|s| s.derivative(0.0, 0)).collect();
        if let Some(last) = self.segments.last() {
            pts.push(last.derivative(last.duration, 0));
        }
        pts
    }

    /// Derivatives of orders 0..=5 at every joint, evaluated from the outgoing segment
    /// (the incoming one for the final joint).
    pub fn joint_derivatives(&self) -> Vec<[Vec3; N_DERIVS]> {
        let mut out: Vec<[Vec3; N_DERIVS]> = self
            .segments
            .iter()
            .map(|s| std::array::from_fn(|j| s.derivative(0.0, j)))
            .collect();
        if let Some(last) = self.segments.last() {
            out.push(std::array::from_fn(|j| last.derivative(last.duration, j)));
        }
        out
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let duration = self.duration();
        let slack = 1e-12 * duration.max(1.0);
        if !(-slack..=duration + slack).contains(&t) || self.segments.is_empty() {
            return Err(Error::TimeOutOfRange { t, duration });
        }
        let t = t.clamp(0.0, duration);
        let idx = match self.knots.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => i.min(self.segments.len() - 1),
            Err(i) => i - 1,
        };
        Ok((idx, (t - self.knots[idx]).clamp(0.0, self.segments[idx].duration)))
    }

    pub fn sample(&self, t: f64) -> Result<State> {
        let (i, local) = self.locate(t)?;
        Ok(self.segments[i].state(local))
    }

    /// `order`-th derivative at time `t`.
    pub fn derivative(&self, t: f64, order: usize) -> Result<Vec3> {
        let (i, local) = self.locate(t)?;
        Ok(self.segments[i].derivative(local, order))
    }

    pub fn snap_cost(&self) -> f64 {
        self.segments.iter().map(PolySegment::snap_cost).sum()
    }

    /// Largest sampled speed and acceleration norms, `samples` points per segment.
    pub fn peak_dynamics(&self, samples: usize) -> (f64, f64) {
        let samples = samples.max(2);
        let mut vmax: f64 = 0.0;
        let mut amax: f64 = 0.0;
        for seg in &self.segments {
            for k in 0..samples {
                let t = seg.duration * k as f64 / (samples - 1) as f64;
                let st = seg.state(t);
                vmax = vmax.max(st.velocity.norm());
                amax = amax.max(st.acceleration.norm());
            }
        }
        (vmax, amax)
    }

    /// Appends another trajectory whose start coincides with this one's end.
    pub fn append(&mut self, other: Trajectory) {
        let offset = self.duration();
        self.segments.extend(other.segments);
        self.knots.extend(other.knots.iter().skip(1).map(|k| k + offset));
    }

    /// Writes `t,x,y,z,vx,vy,vz` rows sampled every `dt` seconds (and at the final time).
    pub fn write_csv<W: Write>(&self, out: W, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("sampling step must be positive, got {dt}")));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "z", "vx", "vy", "vz"])?;
        let duration = self.duration();
        let n = (duration / dt).floor() as usize;
        let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        if times.last().is_some_and(|&t| t < duration) {
            times.push(duration);
        }
        for t in times {
            let s = self.sample(t.min(duration))?;
            let p = s.position;
            let v = s.velocity;
            w.write_record(
                [t, p.x, p.y, p.z, v.x, v.y, v.z].iter().map(|x| format!("{x:.6}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Snap-minimal trajectory through `viewpoints`, time-scaled to respect `limits`.
pub fn plan_through(
    viewpoints: &[Vec3],
    limits: &DynamicLimits,
    boundary: Option<&BoundaryDerivatives>,
) -> Result<Trajectory> {
    limits.validate()?;
    if viewpoints.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two viewpoints, got {}",
            viewpoints.len()
        )));
    }
    for (i, w) in viewpoints.windows(2).enumerate() {
        if !(w[0].iter().chain(w[1].iter()).all(|c| c.is_finite())) {
            return Err(Error::InvalidParameter("viewpoint coordinates must be finite".into()));
        }
        if (w[1] - w[0]).norm() < MIN_SEGMENT_LENGTH {
            return Err(Error::DegenerateSegment(i, i + 1));
        }
    }
    let rest = BoundaryDerivatives::default();
    let boundary = boundary.unwrap_or(&rest);
    let mut durations: Vec<f64> = viewpoints
        .windows(2)
        .map(|w| limits.ramp_time((w[1] - w[0]).norm()))
        .collect();

    let mut traj = solve_min_snap(viewpoints, &durations, boundary)?;
    for _ in 0..MAX_SCALING_ROUNDS {
        let (vmax, amax) = traj.peak_dynamics(CHECK_SAMPLES);
        if vmax <= FEASIBILITY_SLACK * limits.v_ref && amax <= FEASIBILITY_SLACK * limits.a_ref {
            return Ok(traj);
        }
        let factor = (vmax / limits.v_ref).max((amax / limits.a_ref).sqrt()).max(1.0 + 1e-9);
        for d in durations.iter_mut() {
            *d *= factor;
        }
        traj = if boundary.is_rest() {
            // uniform time scaling keeps the snap-optimal shape; only the clock stretches
            Trajectory::from_segments(
                traj.segments
                    .into_iter()
                    .zip(&durations)
                    .map(|(s, &d)| PolySegment { coeffs: s.coeffs, duration: d })
                    .collect(),
            )
        } else {
            solve_min_snap(viewpoints, &durations, boundary)?
        };
    }
    Ok(traj)
}

/// Total duration of [`plan_through`] with rest boundaries.
pub fn travel_time(viewpoints: &[Vec3], limits: &DynamicLimits) -> Result<f64> {
    Ok(plan_through(viewpoints, limits, None)?.duration())
}

/// Passage times of `viewpoints`, thinned so kept measurements are at least
/// `min_interval` apart.
pub fn measurement_times(traj: &Trajectory, viewpoints: &[Vec3], min_interval: f64) -> Vec<f64> {
    measurement_schedule(traj, viewpoints, min_interval, None)
        .into_iter()
        .map(|(_, t)| t)
        .collect()
}

/// Like [`measurement_times`] but returns `(viewpoint index, time)` pairs and honours a
/// previous measurement at `previous` (trajectory time, usually <= 0).
pub fn measurement_schedule(
    traj: &Trajectory,
    viewpoints: &[Vec3],
    min_interval: f64,
    previous: Option<f64>,
) -> Vec<(usize, f64)> {
    let joints = traj.waypoints();
    let mut out = Vec::new();
    let mut last = previous;
    let mut cursor = 0;
    for (i, vp) in viewpoints.iter().enumerate() {
        let t = match (cursor..joints.len()).find(|&j| (joints[j] - vp).norm() <= 1e-6) {
            Some(j) => {
                cursor = j + 1;
                traj.knots[j]
            }
            None => nearest_time(traj, vp),
        };
        if last.is_none_or(|l| t - l >= min_interval) {
            out.push((i, t));
            last = Some(t);
        }
    }
    out
}

fn nearest_time(traj: &Trajectory, p: &Vec3) -> f64 {
    let n = 2000;
    let d = traj.duration();
    (0..=n)
        .map(|k| d * k as f64 / n as f64)
        .min_by(|&a, &b| {
            let da = (traj.sample(a).map(|s| s.position).unwrap_or(*p) - p).norm();
            let db = (traj.sample(b).map(|s| s.position).unwrap_or(*p) - p).norm();
            da.total_cmp(&db)
        })
        .unwrap_or(0.0)
}

/// Global indices: variable `(joint, order)` lives at `joint * N_DERIVS + order`.
fn is_fixed(joint: usize, order: usize, n_joints: usize) -> bool {
    order == 0 || ((joint == 0 || joint + 1 == n_joints) && order <= BOUNDARY_ORDER)
}

fn solve_min_snap(viewpoints: &[Vec3], durations: &[f64], boundary: &BoundaryDerivatives) -> Result<Trajectory> {
    let n_joints = viewpoints.len();
    let n_vars = n_joints * N_DERIVS;
    let m = snap_cost_matrix();

    let mut h = DMatrix::<f64>::zeros(n_vars, n_vars);
    for (seg, &t) in durations.iter().enumerate() {
        let mut tp = [1.0; N_DERIVS];
        for j in 1..N_DERIVS {
            tp[j] = tp[j - 1] * t;
        }
        let base = t.powi(-7);
        for l in 0..N_COEFFS {
            let gl = seg * N_DERIVS + l;
            let sl = tp[l % N_DERIVS];
            for k in 0..N_COEFFS {
                let gk = seg * N_DERIVS + k;
                h[(gl, gk)] += base * sl * tp[k % N_DERIVS] * m[(l, k)];
            }
        }
    }

    let fixed: Vec<usize> = (0..n_vars)
        .filter(|&v| is_fixed(v / N_DERIVS, v % N_DERIVS, n_joints))
        .collect();
    let free: Vec<usize> = (0..n_vars)
        .filter(|&v| !is_fixed(v / N_DERIVS, v % N_DERIVS, n_joints))
        .collect();

    // fixed values per axis
    let mut values = DMatrix::<f64>::zeros(n_vars, 3);
    for (j, vp) in viewpoints.iter().enumerate() {
        for axis in 0..3 {
            values[(j * N_DERIVS, axis)] = vp[axis];
        }
    }
    let last = n_joints - 1;
    for order in 1..=BOUNDARY_ORDER {
        for axis in 0..3 {
            values[(order, axis)] = boundary.start[order - 1][axis];
            values[(last * N_DERIVS + order, axis)] = boundary.end[order - 1][axis];
        }
    }

    if !free.is_empty() {
        let nf = free.len();
        let mut hpp = DMatrix::<f64>::zeros(nf, nf);
        for (a, &ga) in free.iter().enumerate() {
            for (b, &gb) in free.iter().enumerate() {
                hpp[(a, b)] = h[(ga, gb)];
            }
        }
        let mut rhs = DMatrix::<f64>::zeros(nf, 3);
        for (a, &ga) in free.iter().enumerate() {
            for &gf in &fixed {
                let hv = h[(ga, gf)];
                if hv != 0.0 {
                    for axis in 0..3 {
                        rhs[(a, axis)] -= hv * values[(gf, axis)];
                    }
                }
            }
        }
        // symmetric Jacobi scaling tames the spread of time powers across orders
        let scale: Vec<f64> = (0..nf).map(|a| 1.0 / hpp[(a, a)].abs().sqrt().max(1e-300)).collect();
        for a in 0..nf {
            for b in 0..nf {
                hpp[(a, b)] *= scale[a] * scale[b];
            }
            for axis in 0..3 {
                rhs[(a, axis)] *= scale[a];
            }
        }
        let sol = match hpp.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => hpp
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numeric("singular snap quadratic program".into()))?,
        };
        for (a, &ga) in free.iter().enumerate() {
            for axis in 0..3 {
                let v = sol[(a, axis)] * scale[a];
                if !v.is_finite() {
                    return Err(Error::Numeric("non-finite derivative in snap solution".into()));
                }
                values[(ga, axis)] = v;
            }
        }
    }

    let joints: Vec<[Vec3; N_DERIVS]> = (0..n_joints)
        .map(|j| {
            std::array::from_fn(|order| {
                let r = j * N_DERIVS + order;
                Vec3::new(values[(r, 0)], values[(r, 1)], values[(r, 2)])
            })
        })
        .collect();
    Trajectory::from_joint_derivatives(&joints, durations)
}

fn falling_factorial(k: usize, j: usize) -> f64 {
    ((k + 1 - j)..=k).map(|x| x as f64).product()
}

/// Maps normalized coefficients to endpoint derivatives `[d0..d5 at s=0, d0..d5 at s=1]`.
fn endpoint_map() -> Mat12 {
    let mut a = Mat12::zeros();
    for j in 0..N_DERIVS {
        a[(j, j)] = falling_factorial(j, j);
        for k in j..N_COEFFS {
            a[(N_DERIVS + j, k)] = falling_factorial(k, j);
        }
    }
    a
}

fn endpoint_map_inverse() -> &'static Mat12 {
    static INV: OnceLock<Mat12> = OnceLock::new();
    INV.get_or_init(|| endpoint_map().try_inverse().expect("endpoint map is invertible"))
}

/// Gram matrix of `int_0^1 p''''(s)^2 ds` over normalized coefficients.
fn snap_gram() -> &'static Mat12 {
    static Q: OnceLock<Mat12> = OnceLock::new();
    Q.get_or_init(|| {
        let mut q = Mat12::zeros();
        for k in 4..N_COEFFS {
            for l in 4..N_COEFFS {
                q[(k, l)] = falling_factorial(k, 4) * falling_factorial(l, 4) / (k + l - 7) as f64;
            }
        }
        q
    })
}

/// Snap cost as a quadratic form over normalized endpoint derivatives.
fn snap_cost_matrix() -> &'static Mat12 {
    static M: OnceLock<Mat12> = OnceLock::new();
    M.get_or_init(|| {
        let ainv = endpoint_map_inverse();
        let m = ainv.transpose() * snap_gram() * ainv;
        (m + m.transpose()) * 0.5
    })
}

fn poly_derivative(c: &[f64; N_COEFFS], s: f64, order: usize) -> f64 {
    let mut acc = 0.0;
    for k in (order..N_COEFFS).rev() {
        acc = acc * s + c[k] * falling_factorial(k, order);
    }
    acc
}

/// Value, first and second derivative by Horner's scheme.
#[inline]
fn poly_012(c: &[f64; N_COEFFS], s: f64) -> (f64, f64, f64) {
    let mut p = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for k in (0..N_COEFFS).rev() {
        d2 = d2 * s + 2.0 * d1;
        d1 = d1 * s + p;
        p = p * s + c[k];
    }
    (p, d1, d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> DynamicLimits {
        DynamicLimits::default()
    }

    #[test]
    fn straight_line_lower_bound() {
        let pts = [Vec3::new(0.0, 0.0, 10.0), Vec3::new(30.0, 0.0, 10.0)];
        let traj = plan_through(&pts, &limits(), None).unwrap();
        assert!(traj.duration() >= 10.0);
        for k in 0..=200 {
            let s = traj.sample(traj.duration() * k as f64 / 200.0).unwrap();
            assert!(s.position.y.abs() < 1e-6);
            assert!((s.position.z - 10.0).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert!(matches!(plan_through(&[p, p], &limits(), None), Err(Error::DegenerateSegment(0, 1))));
        assert!(plan_through(&[p], &limits(), None).is_err());
        let bad = DynamicLimits { v_ref: 0.0, a_ref: 1.0 };
        assert!(plan_through(&[p, p + Vec3::x()], &bad, None).is_err());
    }

    #[test]
    fn sample_boundaries() {
        let pts = [
            Vec3::new(0.0, 0.0, 10.0),
            Vec3::new(10.0, 5.0, 15.0),
            Vec3::new(20.0, -3.0, 8.0),
        ];
        let traj = plan_through(&pts, &limits(), None).unwrap();
        let s0 = traj.sample(0.0).unwrap();
        assert!((s0.position - pts[0]).norm() < 1e-9);
        assert!(s0.velocity.norm() < 1e-9 && s0.acceleration.norm() < 1e-9);
        let s1 = traj.sample(traj.duration()).unwrap();
        assert!((s1.position - pts[2]).norm() < 1e-6);
        assert!(s1.velocity.norm() < 1e-6);
        assert!(traj.sample(-1e-3).is_err());
        assert!(traj.sample(traj.duration() + 1e-3).is_err());
    }

    #[test]
    fn joint_state_matches_from_both_sides() {
        let pts = [
            Vec3::new(0.0, 0.0, 10.0),
            Vec3::new(12.0, 4.0, 20.0),
            Vec3::new(25.0, 30.0, 12.0),
            Vec3::new(5.0, 40.0, 30.0),
        ];
        let traj = plan_through(&pts, &limits(), None).unwrap();
        for w in traj.segments().windows(2) {
            for order in 0..=4 {
                let left = w[0].derivative(w[0].duration(), order);
                let right = w[1].derivative(0.0, order);
                assert!((left - right).norm() <= 1e-6 * (1.0 + left.norm()), "order {order}");
            }
        }
    }

    #[test]
    fn ramp_time_profiles() {
        let l = limits();
        // long hop: cruise phase
        assert!((l.ramp_time(30.0) - 12.0).abs() < 1e-12);
        // short hop: triangular
        assert!((l.ramp_time(1.5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn measurement_time_thinning() {
        // straight line, waypoints at each joint; joint times are what matter
        let pts: Vec<Vec3> = (0..5).map(|k| Vec3::new(10.0 * k as f64, 0.0, 10.0)).collect();
        let traj = plan_through(&pts, &limits(), None).unwrap();
        let joints = traj.joint_times().to_vec();
        let gaps: Vec<f64> = joints.windows(2).map(|w| w[1] - w[0]).collect();
        let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);

        let all = measurement_times(&traj, &pts, min_gap * 0.5);
        assert_eq!(all, joints);

        let single = measurement_times(&traj, &pts[3..4], 5.0);
        assert_eq!(single, vec![joints[3]]);
    }

    #[test]
    fn measurement_schedule_honours_previous() {
        let pts = [Vec3::new(0.0, 0.0, 10.0), Vec3::new(1.0, 0.0, 10.0), Vec3::new(30.0, 0.0, 10.0)];
        let traj = plan_through(&pts, &limits(), None).unwrap();
        let sched = measurement_schedule(&traj, &pts[1..], 5.0, Some(0.0));
        // first hop is short and gets skipped
        assert!(traj.joint_times()[1] < 5.0);
        assert_eq!(sched.len(), 1);
        assert_eq!(sched[0].0, 1);
    }

    #[test]
    fn csv_export_has_header_and_endpoints() {
        let pts = [Vec3::new(0.0, 0.0, 5.0), Vec3::new(3.0, 4.0, 5.0)];
        let traj = plan_through(&pts, &limits(), None).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, 0.5).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,y,z,vx,vy,vz");
        assert!(lines[1].starts_with("0.000000,0.000000,0.000000,5.000000"));
        assert!(lines.last().unwrap().contains(",3.000000,4.000000,5.000000,"));
    }

    #[test]
    fn nonzero_boundary_is_imposed() {
        let pts = [Vec3::new(0.0, 0.0, 10.0), Vec3::new(20.0, 0.0, 10.0)];
        let mut b = BoundaryDerivatives::default();
        b.start[0] = Vec3::new(1.0, 0.0, 0.0);
        let traj = plan_through(&pts, &limits(), Some(&b)).unwrap();
        let v0 = traj.sample(0.0).unwrap().velocity;
        assert!((v0 - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn append_concatenates_clocks() {
        let a = plan_through(&[Vec3::zeros(), Vec3::new(5.0, 0.0, 0.0)], &limits(), None).unwrap();
        let b = plan_through(&[Vec3::new(5.0, 0.0, 0.0), Vec3::new(5.0, 5.0, 0.0)], &limits(), None).unwrap();
        let total = a.duration() + b.duration();
        let mut c = a.clone();
        c.append(b);
        assert!((c.duration() - total).abs() < 1e-12);
        assert_eq!(c.waypoints().len(), 3);
        assert!((c.sample(a.duration()).unwrap().position - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-9);
    }
}
