//! Deterministic geometric channel model.
//!
//! RSS is a narrowband link budget: transmit power plus planar-array gain,
//! minus free-space path loss, minus 22 dB for every blocker face the
//! BS→UE ray crosses. There is no noise, no fading and no multipath, so two
//! evaluations of the same geometry are bit-identical.

use crate::codebook::{BeamCodebook, BeamId};
use crate::geometry::{segment_box_crossings, Vec3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;
/// Number of positions per generated trajectory.
pub const TRAJECTORY_LEN: usize = 218;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("distance and frequency must be positive (d={0}, f={1})")]
    NonPositiveLinkArgs(f64, f64),
    #[error("UE position coincides with base station {0}")]
    CoincidentUe(usize),
    #[error("base station index {0} out of range")]
    BadBsIndex(usize),
    #[error("scene is invalid: {0}")]
    InvalidScene(String),
    #[error("trajectory anchors kept intersecting a blocker after {0} attempts")]
    TrajectoryRejected(usize),
    #[error("scene file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene file parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Transmit panel: a uniform planar array with ideal phase steering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    pub elements_per_row: usize,
    pub elements_per_col: usize,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self { elements_per_row: 8, elements_per_col: 8, element_spacing: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub position: Vec3,
    pub pointing_target: Vec3,
    #[serde(default)]
    pub panel: PanelConfig,
}

/// An axis-aligned attenuating box; each crossed face costs `per_face_attenuation` dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockerBox {
    pub min_corner: Vec3,
    pub max_corner: Vec3,
    #[serde(default = "default_attenuation")]
    pub per_face_attenuation: f64,
}

fn default_attenuation() -> f64 {
    22.0
}

impl BlockerBox {
    pub fn strictly_contains(&self, p: Vec3) -> bool {
        self.min_corner.x < p.x
            && p.x < self.max_corner.x
            && self.min_corner.y < p.y
            && p.y < self.max_corner.y
            && self.min_corner.z < p.z
            && p.z < self.max_corner.z
    }
}

/// The deterministic channel world: base stations, blockers, carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub base_stations: Vec<BaseStation>,
    #[serde(default)]
    pub blockers: Vec<BlockerBox>,
    #[serde(default = "default_carrier")]
    pub carrier_frequency_hz: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    /// Index of the blocker the U-track wraps around.
    #[serde(default)]
    pub middle_blocker: usize,
    #[serde(default = "default_ue_height")]
    pub ue_height_m: f64,
    /// Uniform per-anchor jitter (± meters, x and y).
    #[serde(default = "default_jitter")]
    pub anchor_jitter_m: f64,
    /// Clearance between the base U-polyline and the middle blocker.
    #[serde(default = "default_margin")]
    pub track_margin_m: f64,
}

fn default_carrier() -> f64 {
    2.8e10
}
fn default_tx_power() -> f64 {
    30.0
}
fn default_ue_height() -> f64 {
    1.5
}
fn default_jitter() -> f64 {
    5.0
}
fn default_margin() -> f64 {
    10.0
}

impl Scene {
    /// The four-BS urban scene with three blockers; placement and pointing
    /// coordinates follow the reference deployment table.
    pub fn paper_default() -> Self {
        let bs = |p: [f64; 3], t: [f64; 3]| BaseStation {
            position: p.into(),
            pointing_target: t.into(),
            panel: PanelConfig::default(),
        };
        let block = |min: [f64; 3], max: [f64; 3]| BlockerBox {
            min_corner: min.into(),
            max_corner: max.into(),
            per_face_attenuation: 22.0,
        };
        Self {
            base_stations: vec![
                bs([0.0, 0.0, 10.0], [0.0, -20.0, 9.0]),
                bs([-50.0, -20.0, 10.0], [0.0, 0.0, 9.0]),
                bs([50.0, -50.0, 10.0], [0.0, 0.0, 9.0]),
                bs([40.0, -10.0, 10.0], [0.0, 0.0, 9.0]),
            ],
            blockers: vec![
                // Middle building the track wraps around; the west and east
                // track arms straddle BS1 and BS4.
                block([10.0, -20.0, 0.0], [30.0, 0.0, 15.0]),
                // Side buildings shadowing BS2 and BS3 for parts of the track.
                block([-35.0, -25.0, 0.0], [-25.0, -15.0, 12.0]),
                block([15.0, -55.0, 0.0], [23.0, -47.0, 12.0]),
            ],
            carrier_frequency_hz: default_carrier(),
            tx_power_dbm: default_tx_power(),
            middle_blocker: 0,
            ue_height_m: default_ue_height(),
            anchor_jitter_m: default_jitter(),
            track_margin_m: default_margin(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self, SimulatorError> {
        let text = std::fs::read_to_string(path)?;
        let scene: Scene = serde_json::from_str(&text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<(), SimulatorError> {
        let text = serde_json::to_string_pretty(self).expect("scene serializes");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        if self.base_stations.is_empty() {
            return Err(SimulatorError::InvalidScene("no base stations".into()));
        }
        if !(self.carrier_frequency_hz > 0.0) {
            return Err(SimulatorError::InvalidScene("carrier frequency must be positive".into()));
        }
        for (i, bs) in self.base_stations.iter().enumerate() {
            if (bs.pointing_target - bs.position).norm() < 1e-9 {
                return Err(SimulatorError::InvalidScene(format!(
                    "BS {i} position equals its pointing target"
                )));
            }
            if bs.panel.elements_per_row == 0 || bs.panel.elements_per_col == 0 {
                return Err(SimulatorError::InvalidScene(format!("BS {i} panel has zero elements")));
            }
            if !(bs.panel.element_spacing > 0.0) {
                return Err(SimulatorError::InvalidScene(format!("BS {i} element spacing not positive")));
            }
            PanelFrame::for_bs(bs).map_err(|e| SimulatorError::InvalidScene(format!("BS {i}: {e}")))?;
        }
        for (i, b) in self.blockers.iter().enumerate() {
            let ok = b.min_corner.x < b.max_corner.x
                && b.min_corner.y < b.max_corner.y
                && b.min_corner.z < b.max_corner.z;
            if !ok {
                return Err(SimulatorError::InvalidScene(format!("blocker {i} corners not ordered")));
            }
            if b.per_face_attenuation < 0.0 {
                return Err(SimulatorError::InvalidScene(format!("blocker {i} attenuation negative")));
            }
        }
        if !self.blockers.is_empty() && self.middle_blocker >= self.blockers.len() {
            return Err(SimulatorError::InvalidScene("middle_blocker index out of range".into()));
        }
        Ok(())
    }
}

/// A UE path: ordered positions at fixed height, reproducible from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Vec3>,
    pub seed: u64,
}

// ── link budget pieces ─────────────────────────────────────────────────────

/// Free-space path loss `20·log10(4π·d·f/c)` in dB.
pub fn fspl(distance_m: f64, frequency_hz: f64) -> Result<f64, SimulatorError> {
    if !(distance_m > 0.0) || !(frequency_hz > 0.0) {
        return Err(SimulatorError::NonPositiveLinkArgs(distance_m, frequency_hz));
    }
    Ok(20.0 * (4.0 * std::f64::consts::PI * distance_m * frequency_hz / SPEED_OF_LIGHT).log10())
}

/// Local panel frame: `h` across the panel, `v` up the panel, `b` boresight.
#[derive(Debug, Clone, Copy)]
pub struct PanelFrame {
    pub h: Vec3,
    pub v: Vec3,
    pub b: Vec3,
}

impl PanelFrame {
    pub fn for_bs(bs: &BaseStation) -> Result<Self, SimulatorError> {
        let b = (bs.pointing_target - bs.position)
            .normalized()
            .ok_or_else(|| SimulatorError::InvalidScene("degenerate boresight".into()))?;
        let up = Vec3::new(0.0, 0.0, 1.0);
        let h = up
            .cross(b)
            .normalized()
            .ok_or_else(|| SimulatorError::InvalidScene("vertical boresight".into()))?;
        let v = b.cross(h);
        Ok(Self { h, v, b })
    }

    /// Direction cosines (u_h, u_v) of a unit direction expressed in this frame.
    pub fn direction_cosines(&self, unit_dir: Vec3) -> (f64, f64) {
        (unit_dir.dot(self.h), unit_dir.dot(self.v))
    }
}

/// Direction cosines of a steering angle pair given in degrees.
fn steer_cosines(azimuth_deg: f64, elevation_deg: f64) -> (f64, f64) {
    let az = azimuth_deg.to_radians();
    let el = elevation_deg.to_radians();
    (el.cos() * az.sin(), el.sin())
}

/// Dirichlet kernel magnitude of an `m`-element uniform line array with
/// spacing `d` wavelengths, evaluated at direction-cosine offset `du`.
fn line_array_amplitude(m: usize, d: f64, du: f64) -> f64 {
    let x = std::f64::consts::PI * d * du;
    let denom = x.sin();
    if denom.abs() < 1e-12 {
        m as f64
    } else {
        ((m as f64 * x).sin() / denom).abs()
    }
}

// Amplitude floor keeps exact pattern nulls finite in dB (~−150 dB rel. peak).
const AMPLITUDE_FLOOR: f64 = 1e-7;

fn gain_from_cosines(panel: &PanelConfig, steer: (f64, f64), ue: (f64, f64)) -> f64 {
    let (m, n) = (panel.elements_per_row, panel.elements_per_col);
    let ah = line_array_amplitude(m, panel.element_spacing, ue.0 - steer.0);
    let av = line_array_amplitude(n, panel.element_spacing, ue.1 - steer.1);
    let amp = (ah * av).max(AMPLITUDE_FLOOR);
    20.0 * (amp / ((m * n) as f64).sqrt()).log10()
}

/// Beamforming gain in dB (relative to one element) of a panel steered to
/// `steer_direction`, evaluated toward `ue_direction`; both are
/// `(azimuth, elevation)` pairs in degrees in the panel frame.
pub fn array_gain(panel: &PanelConfig, steer_direction: (f64, f64), ue_direction: (f64, f64)) -> f64 {
    gain_from_cosines(panel, steer_cosines(steer_direction.0, steer_direction.1), steer_cosines(ue_direction.0, ue_direction.1))
}

fn blocker_attenuation_db(scene: &Scene, from: Vec3, to: Vec3) -> f64 {
    let mut total = 0.0;
    for b in &scene.blockers {
        let crossings = segment_box_crossings(from, to, b.min_corner, b.max_corner);
        total += b.per_face_attenuation * crossings as f64;
    }
    total
}

/// Received signal strength in dBm for one beam of one BS at a UE position.
/// The UE side is an omni-directional antenna, so no receive gain appears.
pub fn rss_for_beam(
    scene: &Scene,
    codebook: &BeamCodebook,
    bs_index: usize,
    beam: BeamId,
    ue_position: Vec3,
) -> Result<f64, SimulatorError> {
    let bs = scene.base_stations.get(bs_index).ok_or(SimulatorError::BadBsIndex(bs_index))?;
    let offset = ue_position - bs.position;
    let distance = offset.norm();
    if distance < 1e-9 {
        return Err(SimulatorError::CoincidentUe(bs_index));
    }
    let frame = PanelFrame::for_bs(bs)?;
    let ue_cos = frame.direction_cosines(offset * (1.0 / distance));
    let (az, el) = codebook.beam_direction(beam);
    let gain = gain_from_cosines(&bs.panel, steer_cosines(az, el), ue_cos);
    let loss = fspl(distance, scene.carrier_frequency_hz)?;
    let attenuation = blocker_attenuation_db(scene, bs.position, ue_position);
    Ok(scene.tx_power_dbm + gain - loss - attenuation)
}

/// Full sweep: RSS of every codebook beam, index-aligned with beam ids.
pub fn sweep_all_beams(
    scene: &Scene,
    codebook: &BeamCodebook,
    bs_index: usize,
    ue_position: Vec3,
) -> Result<Vec<f64>, SimulatorError> {
    let bs = scene.base_stations.get(bs_index).ok_or(SimulatorError::BadBsIndex(bs_index))?;
    let offset = ue_position - bs.position;
    let distance = offset.norm();
    if distance < 1e-9 {
        return Err(SimulatorError::CoincidentUe(bs_index));
    }
    let frame = PanelFrame::for_bs(bs)?;
    let ue_cos = frame.direction_cosines(offset * (1.0 / distance));
    let loss = fspl(distance, scene.carrier_frequency_hz)?;
    let attenuation = blocker_attenuation_db(scene, bs.position, ue_position);

    let n = codebook.rows * codebook.cols;
    let mut out = Vec::with_capacity(n);
    for id in 1..=n {
        let beam = BeamId::new(id).expect("grid-sized id");
        let (az, el) = codebook.beam_direction(beam);
        let gain = gain_from_cosines(&bs.panel, steer_cosines(az, el), ue_cos);
        // Same expression order as rss_for_beam so the two agree bit-exactly.
        out.push(scene.tx_power_dbm + gain - loss - attenuation);
    }
    Ok(out)
}

// ── trajectories ───────────────────────────────────────────────────────────

/// Base anchors of the U-track: west, south-west, south-east and east corners
/// around the middle blocker's footprint, `margin` meters out, opening north.
fn base_anchors(scene: &Scene) -> Result<[Vec3; 4], SimulatorError> {
    let boxed = scene
        .blockers
        .get(scene.middle_blocker)
        .ok_or_else(|| SimulatorError::InvalidScene("scene has no middle blocker".into()))?;
    let m = scene.track_margin_m;
    let z = scene.ue_height_m;
    let (lo, hi) = (boxed.min_corner, boxed.max_corner);
    Ok([
        Vec3::new(lo.x - m, hi.y + m, z),
        Vec3::new(lo.x - m, lo.y - m, z),
        Vec3::new(hi.x + m, lo.y - m, z),
        Vec3::new(hi.x + m, hi.y + m, z),
    ])
}

fn resample_polyline(anchors: &[Vec3], count: usize) -> Vec<Vec3> {
    let mut seg_len = Vec::with_capacity(anchors.len() - 1);
    let mut total = 0.0;
    for w in anchors.windows(2) {
        let l = (w[1] - w[0]).norm();
        seg_len.push(l);
        total += l;
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let target = total * i as f64 / (count - 1) as f64;
        let mut remaining = target;
        let mut placed = None;
        for (s, &l) in seg_len.iter().enumerate() {
            if remaining <= l || s == seg_len.len() - 1 {
                let t = if l > 0.0 { (remaining / l).min(1.0) } else { 0.0 };
                placed = Some(anchors[s] + (anchors[s + 1] - anchors[s]) * t);
                break;
            }
            remaining -= l;
        }
        points.push(placed.expect("segment found"));
    }
    points
}

const TRAJECTORY_MAX_RETRIES: usize = 32;

/// One U-shaped UE track: the base anchors jittered uniformly in x/y, then
/// resampled to [`TRAJECTORY_LEN`] arc-length-uniform points. Deterministic
/// per seed; redrawn (bounded) if any point lands inside a blocker.
pub fn generate_trajectory(seed: u64, scene: &Scene) -> Result<Trajectory, SimulatorError> {
    let base = base_anchors(scene)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = scene.anchor_jitter_m;
    for _ in 0..TRAJECTORY_MAX_RETRIES {
        let anchors: Vec<Vec3> = base
            .iter()
            .map(|a| {
                let dx = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
                let dy = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
                Vec3::new(a.x + dx, a.y + dy, a.z)
            })
            .collect();
        let points = resample_polyline(&anchors, TRAJECTORY_LEN);
        let clear = points
            .iter()
            .all(|p| scene.blockers.iter().all(|b| !b.strictly_contains(*p)));
        if clear {
            return Ok(Trajectory { points, seed });
        }
    }
    Err(SimulatorError::TrajectoryRejected(TRAJECTORY_MAX_RETRIES))
}

/// Write trajectories as CSV rows `traj_id,step,x,y,z`.
pub fn write_trajectories_csv(path: &Path, trajectories: &[Trajectory]) -> Result<(), SimulatorError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "traj_id,step,x,y,z")?;
    for (ti, t) in trajectories.iter().enumerate() {
        for (si, p) in t.points.iter().enumerate() {
            writeln!(f, "{},{},{},{},{}", ti, si, p.x, p.y, p.z)?;
        }
    }
    Ok(())
}
