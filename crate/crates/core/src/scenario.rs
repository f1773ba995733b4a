//! Network geometry, target kinematics and per-scan reflection points.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::{RadioParams, SPEED_OF_LIGHT};
use crate::rng::{self, SimRng};

pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetClass {
    Pedestrian,
    Vehicle,
}

impl TargetClass {
    pub const ALL: [TargetClass; 2] = [TargetClass::Pedestrian, TargetClass::Vehicle];

    pub fn index(self) -> usize {
        match self {
            TargetClass::Pedestrian => 0,
            TargetClass::Vehicle => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            TargetClass::Pedestrian
        } else {
            TargetClass::Vehicle
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TargetClass::Pedestrian => "pedestrian",
            TargetClass::Vehicle => "vehicle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BsRole {
    #[default]
    SensingComm,
    CommOnly,
}

/// Position and scanning geometry of one base station. Angles are in the
/// global frame except `comm_dir_rad` and scan directions, which are measured
/// from the array boresight (counter-clockwise positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsPose {
    pub id: usize,
    pub position_m: Vec2,
    pub boresight_rad: f64,
    pub scan_halfwidth_rad: f64,
    pub scan_step_rad: f64,
    #[serde(default = "default_comm_dir")]
    pub comm_dir_rad: f64,
    #[serde(default)]
    pub role: BsRole,
}

fn default_comm_dir() -> f64 {
    55f64.to_radians()
}

impl BsPose {
    pub fn validate(&self) -> Result<()> {
        if !(self.scan_step_rad > 0.0 && self.scan_halfwidth_rad > 0.0) {
            return Err(Error::config(format!(
                "base station {}: scan step and half-width must be > 0",
                self.id
            )));
        }
        Ok(())
    }

    /// 2·Θ_0/ΔΘ + 1
    pub fn num_scan_dirs(&self) -> usize {
        (2.0 * self.scan_halfwidth_rad / self.scan_step_rad).round() as usize + 1
    }

    pub fn scan_dirs(&self) -> Vec<f64> {
        (0..self.num_scan_dirs())
            .map(|j| -self.scan_halfwidth_rad + j as f64 * self.scan_step_rad)
            .collect()
    }

    /// Range and boresight-relative bearing of a global point.
    pub fn to_local(&self, p: Vec2) -> (f64, f64) {
        let dx = p[0] - self.position_m[0];
        let dy = p[1] - self.position_m[1];
        let range = dx.hypot(dy);
        let bearing = wrap_angle(dy.atan2(dx) - self.boresight_rad);
        (range, bearing)
    }

    pub fn to_global(&self, range: f64, local_angle: f64) -> Vec2 {
        let a = self.boresight_rad + local_angle;
        [
            self.position_m[0] + range * a.cos(),
            self.position_m[1] + range * a.sin(),
        ]
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Base stations evenly spaced on a circle, arrays facing the center.
pub fn ring_network(
    n: usize,
    radius_m: f64,
    center: Vec2,
    scan_halfwidth_rad: f64,
    scan_step_rad: f64,
) -> Vec<BsPose> {
    (0..n)
        .map(|q| {
            let a = 2.0 * PI * q as f64 / n as f64;
            BsPose {
                id: q,
                position_m: [
                    center[0] + radius_m * a.cos(),
                    center[1] + radius_m * a.sin(),
                ],
                boresight_rad: wrap_angle(a + PI),
                scan_halfwidth_rad,
                scan_step_rad,
                comm_dir_rad: default_comm_dir(),
                role: BsRole::SensingComm,
            }
        })
        .collect()
}

/// One motion primitive. Speed and heading carry over between primitives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    /// Holds position; speed drops to zero, heading is kept.
    Static { duration_s: f64 },
    /// Constant velocity.
    Linear { duration_s: f64 },
    /// Tangential acceleration along the heading; speed is clamped at zero.
    Accelerate { duration_s: f64, accel_mps2: f64 },
    /// Constant speed, constant turn rate (counter-clockwise positive).
    Turn { duration_s: f64, rate_rps: f64 },
}

impl Motion {
    pub fn duration_s(&self) -> f64 {
        match *self {
            Motion::Static { duration_s }
            | Motion::Linear { duration_s }
            | Motion::Accelerate { duration_s, .. }
            | Motion::Turn { duration_s, .. } => duration_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub heading_rad: f64,
    pub speed_mps: f64,
}

impl KinematicState {
    fn new(position: Vec2, heading_rad: f64, speed_mps: f64) -> Self {
        Self {
            position,
            velocity: [speed_mps * heading_rad.cos(), speed_mps * heading_rad.sin()],
            heading_rad,
            speed_mps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub start_position_m: Vec2,
    pub start_velocity_mps: Vec2,
    /// Heading used when the start velocity is zero.
    #[serde(default)]
    pub start_heading_rad: f64,
    pub segments: Vec<Motion>,
}

const HORIZON_SLACK_S: f64 = 1e-9;

impl Trajectory {
    pub fn horizon_s(&self) -> f64 {
        self.segments.iter().map(Motion::duration_s).sum()
    }

    fn start_state(&self) -> KinematicState {
        let [vx, vy] = self.start_velocity_mps;
        let speed = vx.hypot(vy);
        let heading = if speed > 0.0 {
            vy.atan2(vx)
        } else {
            self.start_heading_rad
        };
        KinematicState::new(self.start_position_m, heading, speed)
    }

    /// Kinematic state `t_s` seconds after the start of the trajectory.
    pub fn advance(&self, t_s: f64) -> Result<KinematicState> {
        let horizon = self.horizon_s();
        if !(t_s >= 0.0 && t_s <= horizon + HORIZON_SLACK_S) {
            return Err(Error::OutOfRange {
                t_s,
                horizon_s: horizon,
            });
        }
        let mut state = self.start_state();
        let mut remaining = t_s;
        for seg in &self.segments {
            let d = seg.duration_s();
            let dt = remaining.min(d);
            state = propagate(state, seg, dt);
            remaining -= dt;
            if remaining <= 0.0 {
                break;
            }
        }
        Ok(state)
    }
}

fn propagate(s: KinematicState, seg: &Motion, dt: f64) -> KinematicState {
    let h = s.heading_rad;
    match *seg {
        Motion::Static { .. } => KinematicState::new(s.position, h, 0.0),
        Motion::Linear { .. } => KinematicState::new(
            [
                s.position[0] + s.speed_mps * h.cos() * dt,
                s.position[1] + s.speed_mps * h.sin() * dt,
            ],
            h,
            s.speed_mps,
        ),
        Motion::Accelerate { accel_mps2, .. } => {
            let v0 = s.speed_mps;
            // time until the speed would reach zero when decelerating
            let t_move = if accel_mps2 < 0.0 {
                dt.min(-v0 / accel_mps2)
            } else {
                dt
            };
            let dist = v0 * t_move + 0.5 * accel_mps2 * t_move * t_move;
            let speed = (v0 + accel_mps2 * t_move).max(0.0);
            KinematicState::new(
                [
                    s.position[0] + dist * h.cos(),
                    s.position[1] + dist * h.sin(),
                ],
                h,
                speed,
            )
        }
        Motion::Turn { rate_rps, .. } => {
            let v = s.speed_mps;
            let h1 = h + rate_rps * dt;
            let (dx, dy) = if rate_rps.abs() < 1e-12 {
                (v * h.cos() * dt, v * h.sin() * dt)
            } else {
                (
                    v / rate_rps * (h1.sin() - h.sin()),
                    -v / rate_rps * (h1.cos() - h.cos()),
                )
            };
            KinematicState::new([s.position[0] + dx, s.position[1] + dy], wrap_angle(h1), v)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleShape {
    pub length_m: f64,
    pub width_m: f64,
    /// Longitudinal offset of the wheelhouses from the vehicle center.
    pub wheel_offset_m: f64,
}

impl Default for VehicleShape {
    fn default() -> Self {
        Self {
            length_m: 4.5,
            width_m: 1.8,
            wheel_offset_m: 1.35,
        }
    }
}

/// Aspect-angle apertures of the vehicle reflectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Visibility {
    pub surface_halfwidth_rad: f64,
    pub corner_halfwidth_rad: f64,
}

impl Default for Visibility {
    fn default() -> Self {
        Self {
            surface_halfwidth_rad: 30f64.to_radians(),
            corner_halfwidth_rad: 80f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetTruth {
    pub id: usize,
    pub class: TargetClass,
    pub trajectory: Trajectory,
    /// Rectangle footprint, used only for vehicles.
    #[serde(default)]
    pub footprint: VehicleShape,
    /// Scenario time at which the target enters; its trajectory clock starts here.
    #[serde(default)]
    pub active_from_s: f64,
}

impl TargetTruth {
    pub fn is_active(&self, t_s: f64) -> bool {
        t_s + HORIZON_SLACK_S >= self.active_from_s
            && t_s - self.active_from_s <= self.trajectory.horizon_s() + HORIZON_SLACK_S
    }

    pub fn state_at(&self, t_s: f64) -> Result<KinematicState> {
        self.trajectory.advance((t_s - self.active_from_s).max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectorKind {
    Pedestrian,
    Surface,
    Wheelhouse,
    Corner,
}

impl ReflectorKind {
    /// Average RCS in m² per reflector type.
    pub fn mean_rcs_m2(self) -> f64 {
        match self {
            ReflectorKind::Pedestrian => 1.0,
            ReflectorKind::Surface => 20.0,
            ReflectorKind::Wheelhouse => 0.0,
            ReflectorKind::Corner => 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionPoint {
    pub position_m: Vec2,
    pub mean_rcs_m2: f64,
    pub drawn_rcs_m2: f64,
    pub kind: ReflectorKind,
    pub distance_m: f64,
    /// Direction of arrival relative to the BS boresight.
    pub doa_rad: f64,
    pub doppler_hz: f64,
    pub delay_s: f64,
    pub path_gain: Complex64,
    pub target_id: usize,
}

/// Two-way free-space factor c²σ/((4π)³ f_c² d⁴).
pub fn path_loss_factor(rcs_m2: f64, distance_m: f64, carrier_hz: f64) -> f64 {
    SPEED_OF_LIGHT * SPEED_OF_LIGHT * rcs_m2
        / ((4.0 * PI).powi(3) * carrier_hz * carrier_hz * distance_m.powi(4))
}

/// Swerling I draw: exponential power with the given mean.
pub fn draw_swerling1(mean_rcs_m2: f64, rng: &mut SimRng) -> f64 {
    let u: f64 = rng.random();
    if mean_rcs_m2 <= 0.0 {
        return 0.0;
    }
    -mean_rcs_m2 * (1.0 - u).ln()
}

struct BodyPoint {
    offset: Vec2,
    normal: Vec2,
    kind: ReflectorKind,
}

fn vehicle_body_points(shape: &VehicleShape) -> Vec<BodyPoint> {
    let (hl, hw, wo) = (
        shape.length_m / 2.0,
        shape.width_m / 2.0,
        shape.wheel_offset_m,
    );
    let diag = |sx: f64, sy: f64| {
        let n = hl.hypot(hw);
        [sx * hl / n, sy * hw / n]
    };
    let mut pts = vec![
        BodyPoint {
            offset: [hl, 0.0],
            normal: [1.0, 0.0],
            kind: ReflectorKind::Surface,
        },
        BodyPoint {
            offset: [-hl, 0.0],
            normal: [-1.0, 0.0],
            kind: ReflectorKind::Surface,
        },
        BodyPoint {
            offset: [0.0, hw],
            normal: [0.0, 1.0],
            kind: ReflectorKind::Surface,
        },
        BodyPoint {
            offset: [0.0, -hw],
            normal: [0.0, -1.0],
            kind: ReflectorKind::Surface,
        },
    ];
    for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        pts.push(BodyPoint {
            offset: [sx * wo, sy * hw],
            normal: [0.0, sy],
            kind: ReflectorKind::Wheelhouse,
        });
    }
    for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        pts.push(BodyPoint {
            offset: [sx * hl, sy * hw],
            normal: diag(sx, sy),
            kind: ReflectorKind::Corner,
        });
    }
    pts
}

fn rotate(v: Vec2, a: f64) -> Vec2 {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Visible reflection points of `target` as seen from `bs` at scenario time `t_s`.
///
/// The RNG is consumed identically whatever the visibility outcome (one RCS
/// draw and one phase draw per body point), so reflector randomness does not
/// shift when targets turn.
pub fn target_reflectors(
    target: &TargetTruth,
    bs: &BsPose,
    t_s: f64,
    radio: &RadioParams,
    visibility: &Visibility,
    rng: &mut SimRng,
) -> Result<Vec<ReflectionPoint>> {
    let state = target.state_at(t_s)?;
    let body: Vec<BodyPoint> = match target.class {
        TargetClass::Pedestrian => vec![BodyPoint {
            offset: [0.0, 0.0],
            normal: [0.0, 0.0],
            kind: ReflectorKind::Pedestrian,
        }],
        TargetClass::Vehicle => vehicle_body_points(&target.footprint),
    };
    let mut out = Vec::with_capacity(body.len());
    for bp in body {
        let rcs = draw_swerling1(bp.kind.mean_rcs_m2(), rng);
        let phase: f64 = rng.random::<f64>() * 2.0 * PI;
        let off = rotate(bp.offset, state.heading_rad);
        let pos = [state.position[0] + off[0], state.position[1] + off[1]];
        let to_bs = [bs.position_m[0] - pos[0], bs.position_m[1] - pos[1]];
        let visible = match bp.kind {
            ReflectorKind::Pedestrian | ReflectorKind::Wheelhouse => true,
            ReflectorKind::Surface => {
                aspect_angle(rotate(bp.normal, state.heading_rad), to_bs)
                    <= visibility.surface_halfwidth_rad
            }
            ReflectorKind::Corner => {
                aspect_angle(rotate(bp.normal, state.heading_rad), to_bs)
                    <= visibility.corner_halfwidth_rad
            }
        };
        if !visible {
            continue;
        }
        let (distance, doa) = bs.to_local(pos);
        if distance <= 0.0 {
            return Err(Error::Domain(
                "reflector coincides with a base station".into(),
            ));
        }
        // closing speed: positive when the reflector approaches the BS
        let closing = (state.velocity[0] * to_bs[0] + state.velocity[1] * to_bs[1]) / distance;
        let amplitude = path_loss_factor(rcs, distance, radio.carrier_freq_hz).sqrt();
        out.push(ReflectionPoint {
            position_m: pos,
            mean_rcs_m2: bp.kind.mean_rcs_m2(),
            drawn_rcs_m2: rcs,
            kind: bp.kind,
            distance_m: distance,
            doa_rad: doa,
            doppler_hz: 2.0 * radio.carrier_freq_hz * closing / SPEED_OF_LIGHT,
            delay_s: 2.0 * distance / SPEED_OF_LIGHT,
            path_gain: Complex64::from_polar(amplitude, phase),
            target_id: target.id,
        });
    }
    Ok(out)
}

fn aspect_angle(normal: Vec2, to_bs: Vec2) -> f64 {
    let n = to_bs[0].hypot(to_bs[1]);
    if n == 0.0 {
        return 0.0;
    }
    let cos = (normal[0] * to_bs[0] + normal[1] * to_bs[1]) / n;
    cos.clamp(-1.0, 1.0).acos()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Area {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Area {
    pub fn square(half: f64) -> Self {
        Self {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
        }
    }

    pub fn size(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn center(&self) -> Vec2 {
        [
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

/// Likely spawn location (lane entry, crosswalk) used to place birth components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirthSite {
    pub position_m: Vec2,
    #[serde(default)]
    pub velocity_mps: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthState {
    pub id: usize,
    pub class: TargetClass,
    pub position: Vec2,
    pub velocity: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub radio: RadioParams,
    pub base_stations: Vec<BsPose>,
    pub targets: Vec<TargetTruth>,
    pub area: Area,
    pub scan_period_s: f64,
    pub num_scans: usize,
    #[serde(default)]
    pub birth_sites: Vec<BirthSite>,
    #[serde(default)]
    pub visibility: Visibility,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        if self.base_stations.is_empty() {
            return Err(Error::config("scenario has no base stations"));
        }
        for (i, bs) in self.base_stations.iter().enumerate() {
            bs.validate()?;
            if bs.id != i {
                return Err(Error::config("base station ids must be 0..N_tot in order"));
            }
        }
        if !(self.scan_period_s > 0.0) || self.num_scans == 0 {
            return Err(Error::config("scan period must be > 0 and num_scans >= 1"));
        }
        let end = self.scan_time(self.num_scans - 1);
        for t in &self.targets {
            if t.active_from_s + t.trajectory.horizon_s() + HORIZON_SLACK_S < end {
                return Err(Error::config(format!(
                    "target {} trajectory ends before the last scan ({end} s)",
                    t.id
                )));
            }
        }
        if self.area.size() <= 0.0 {
            return Err(Error::config("surveillance area must have positive size"));
        }
        Ok(())
    }

    pub fn scan_time(&self, scan: usize) -> f64 {
        scan as f64 * self.scan_period_s
    }

    pub fn truth_at(&self, scan: usize) -> Result<Vec<TruthState>> {
        let t = self.scan_time(scan);
        self.targets
            .iter()
            .filter(|tg| tg.is_active(t))
            .map(|tg| {
                let s = tg.state_at(t)?;
                Ok(TruthState {
                    id: tg.id,
                    class: tg.class,
                    position: s.position,
                    velocity: s.velocity,
                })
            })
            .collect()
    }

    /// All reflection points seen by base station `bs` during `scan`. RCS and
    /// phases come from the `(RCS, bs, scan, target)` substream of `seed`.
    pub fn bs_reflectors(&self, bs: usize, scan: usize, seed: u64) -> Result<Vec<ReflectionPoint>> {
        let t = self.scan_time(scan);
        let pose = &self.base_stations[bs];
        let mut out = Vec::new();
        for tg in self.targets.iter().filter(|tg| tg.is_active(t)) {
            let mut r = rng::stream(seed, &[rng::TAG_RCS, bs as u64, scan as u64, tg.id as u64]);
            out.extend(target_reflectors(
                tg,
                pose,
                t,
                &self.radio,
                &self.visibility,
                &mut r,
            )?);
        }
        Ok(out)
    }

    /// Desk-scale CI profile: one pedestrian and one vehicle, 50 scans,
    /// six base stations scanning ±36° in 2.4° steps (31 directions).
    pub fn desk() -> Self {
        let targets = vec![
            TargetTruth {
                id: 0,
                class: TargetClass::Pedestrian,
                trajectory: Trajectory {
                    start_position_m: [-7.0, 5.0],
                    start_velocity_mps: [1.2, -0.4],
                    start_heading_rad: 0.0,
                    segments: vec![
                        Motion::Linear { duration_s: 1.0 },
                        Motion::Turn {
                            duration_s: 1.0,
                            rate_rps: 0.5,
                        },
                        Motion::Linear { duration_s: 0.6 },
                    ],
                },
                footprint: VehicleShape::default(),
                active_from_s: 0.0,
            },
            TargetTruth {
                id: 1,
                class: TargetClass::Vehicle,
                trajectory: Trajectory {
                    start_position_m: [2.0, -9.0],
                    start_velocity_mps: [5.0, 0.0],
                    start_heading_rad: 0.0,
                    segments: vec![
                        Motion::Linear { duration_s: 0.8 },
                        Motion::Turn {
                            duration_s: 1.0,
                            rate_rps: 0.35,
                        },
                        Motion::Accelerate {
                            duration_s: 0.8,
                            accel_mps2: -1.5,
                        },
                    ],
                },
                footprint: VehicleShape::default(),
                active_from_s: 0.0,
            },
        ];
        let birth_sites = targets
            .iter()
            .map(|t| BirthSite {
                position_m: t.trajectory.start_position_m,
                velocity_mps: [0.0, 0.0],
            })
            .collect();
        Self {
            name: "desk".into(),
            radio: RadioParams::desk(),
            base_stations: ring_network(
                6,
                50.0,
                [0.0, 0.0],
                36f64.to_radians(),
                2.4f64.to_radians(),
            ),
            targets,
            area: Area::square(20.0),
            scan_period_s: 0.05,
            num_scans: 50,
            birth_sites,
            visibility: Visibility::default(),
            seed: 1,
        }
    }

    /// Full-scale layout: six BSs on a 50 m ring scanning ±60° in 2.4° steps,
    /// four pedestrians and four vehicles over 200 scans (10 s).
    pub fn paper() -> Self {
        let ped = |id, p: Vec2, v: Vec2, segments| TargetTruth {
            id,
            class: TargetClass::Pedestrian,
            trajectory: Trajectory {
                start_position_m: p,
                start_velocity_mps: v,
                start_heading_rad: 0.0,
                segments,
            },
            footprint: VehicleShape::default(),
            active_from_s: 0.0,
        };
        let veh = |id, p: Vec2, v: Vec2, heading: f64, segments| TargetTruth {
            id,
            class: TargetClass::Vehicle,
            trajectory: Trajectory {
                start_position_m: p,
                start_velocity_mps: v,
                start_heading_rad: heading,
                segments,
            },
            footprint: VehicleShape::default(),
            active_from_s: 0.0,
        };
        let targets = vec![
            ped(
                0,
                [-15.0, 12.0],
                [1.2, 0.0],
                vec![
                    Motion::Linear { duration_s: 5.0 },
                    Motion::Turn {
                        duration_s: 3.0,
                        rate_rps: -0.5,
                    },
                    Motion::Linear { duration_s: 2.05 },
                ],
            ),
            ped(
                1,
                [12.0, 15.0],
                [0.0, -1.0],
                vec![
                    Motion::Linear { duration_s: 4.0 },
                    Motion::Static { duration_s: 2.0 },
                    Motion::Accelerate {
                        duration_s: 4.05,
                        accel_mps2: 0.3,
                    },
                ],
            ),
            ped(
                2,
                [-4.0, -2.0],
                [0.0, 0.0],
                vec![Motion::Static { duration_s: 10.05 }],
            ),
            ped(
                3,
                [16.0, -16.0],
                [-0.9, 0.9],
                vec![
                    Motion::Linear { duration_s: 6.0 },
                    Motion::Turn {
                        duration_s: 4.05,
                        rate_rps: 0.3,
                    },
                ],
            ),
            veh(
                4,
                [-18.0, -8.0],
                [3.5, 0.0],
                0.0,
                vec![Motion::Linear { duration_s: 10.05 }],
            ),
            veh(
                5,
                [8.0, -17.0],
                [0.0, 3.0],
                0.0,
                vec![
                    Motion::Linear { duration_s: 3.0 },
                    Motion::Turn {
                        duration_s: 4.0,
                        rate_rps: 0.35,
                    },
                    Motion::Linear { duration_s: 3.05 },
                ],
            ),
            veh(
                6,
                [-9.0, 18.0],
                [0.0, -4.0],
                0.0,
                vec![
                    Motion::Linear { duration_s: 2.0 },
                    Motion::Accelerate {
                        duration_s: 8.05,
                        accel_mps2: -0.45,
                    },
                ],
            ),
            veh(
                7,
                [10.0, -4.0],
                [0.0, 0.0],
                PI / 2.0,
                vec![
                    Motion::Static { duration_s: 3.0 },
                    Motion::Accelerate {
                        duration_s: 3.0,
                        accel_mps2: 1.0,
                    },
                    Motion::Linear { duration_s: 4.05 },
                ],
            ),
        ];
        let birth_sites = targets
            .iter()
            .map(|t| BirthSite {
                position_m: t.trajectory.start_position_m,
                velocity_mps: [0.0, 0.0],
            })
            .collect();
        Self {
            name: "paper".into(),
            radio: RadioParams::paper(),
            base_stations: ring_network(
                6,
                50.0,
                [0.0, 0.0],
                60f64.to_radians(),
                2.4f64.to_radians(),
            ),
            targets,
            area: Area::square(20.0),
            scan_period_s: 0.05,
            num_scans: 200,
            birth_sites,
            visibility: Visibility::default(),
            seed: 1,
        }
    }

    /// Random layout with `n_ped` pedestrians and `n_veh` vehicles, used to
    /// build classifier training and test sets. Targets keep a 2 m margin
    /// from the area border for the whole horizon.
    pub fn random_layout(
        base: &Scenario,
        n_ped: usize,
        n_veh: usize,
        num_scans: usize,
        rng: &mut SimRng,
    ) -> Self {
        let horizon = num_scans as f64 * base.scan_period_s + 0.05;
        let mut targets = Vec::new();
        let classes = std::iter::repeat_n(TargetClass::Pedestrian, n_ped)
            .chain(std::iter::repeat_n(TargetClass::Vehicle, n_veh));
        let mut starts: Vec<Vec2> = Vec::new();
        for (id, class) in classes.enumerate() {
            let vmax = match class {
                TargetClass::Pedestrian => 1.5,
                TargetClass::Vehicle => 4.0,
            };
            let speed = rng.random::<f64>() * vmax;
            let heading = rng.random::<f64>() * 2.0 * PI;
            // worst case travel includes a positive tangential acceleration of 1 m/s²
            let travel = speed * horizon + 0.5 * horizon * horizon;
            let margin = 2.0 + travel;
            let a = &base.area;
            let c = a.center();
            let lo_x = (a.x_min + margin).min(c[0]);
            let hi_x = (a.x_max - margin).max(c[0]);
            let lo_y = (a.y_min + margin).min(c[1]);
            let hi_y = (a.y_max - margin).max(c[1]);
            let mut p = c;
            for _ in 0..200 {
                p = [
                    lo_x + rng.random::<f64>() * (hi_x - lo_x),
                    lo_y + rng.random::<f64>() * (hi_y - lo_y),
                ];
                if starts
                    .iter()
                    .all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= 8.0)
                {
                    break;
                }
            }
            starts.push(p);
            let segment = match rng.random_range(0..4) {
                0 => Motion::Static {
                    duration_s: horizon,
                },
                1 => Motion::Linear {
                    duration_s: horizon,
                },
                2 => Motion::Turn {
                    duration_s: horizon,
                    rate_rps: rng.random_range(-0.5..0.5),
                },
                _ => Motion::Accelerate {
                    duration_s: horizon,
                    accel_mps2: rng.random_range(-1.0..1.0),
                },
            };
            targets.push(TargetTruth {
                id,
                class,
                trajectory: Trajectory {
                    start_position_m: p,
                    start_velocity_mps: [speed * heading.cos(), speed * heading.sin()],
                    start_heading_rad: heading,
                    segments: vec![segment],
                },
                footprint: VehicleShape::default(),
                active_from_s: 0.0,
            });
        }
        let birth_sites = targets
            .iter()
            .map(|t| BirthSite {
                position_m: t.trajectory.start_position_m,
                velocity_mps: [0.0, 0.0],
            })
            .collect();
        Self {
            name: format!("{}-random", base.name),
            targets,
            num_scans,
            birth_sites,
            ..base.clone()
        }
    }
}
