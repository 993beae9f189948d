//! Network entities, scenario configuration and seeded scenario construction.
//!
//! A [`Scenario`] is an immutable snapshot of the world: one satellite, a set of
//! HAPs, tethered balloons and ground base stations, the ground users they serve
//! and the fiber-attached gateways that connect the aerial layer to the core.
//! Scenarios are built from a [`ScenarioConfig`] by [`build_scenario`], which is
//! deterministic for a fixed seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::AllocationParams;
use crate::channel::ChannelParams;
use crate::energy::{BatteryState, EnergyParams};
use crate::placement::PlacementParams;

pub type StationId = u32;
pub type UserId = u32;
pub type GatewayId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    /// Altitude above ground, meters.
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let (dx, dy, dz) = (other.x - self.x, other.y - self.y, other.z - self.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn horizontal_distance(&self, other: &Position) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Satellite,
    Hap,
    TetheredBalloon,
    GroundBaseStation,
    Gateway,
    User,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeKind::Satellite => "satellite",
            NodeKind::Hap => "hap",
            NodeKind::TetheredBalloon => "tb",
            NodeKind::GroundBaseStation => "gbs",
            NodeKind::Gateway => "gateway",
            NodeKind::User => "user",
        };
        f.write_str(s)
    }
}

/// Which station kinds take part in serving users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// The satellite alone serves every user.
    SatOnly,
    /// Satellite plus HAPs; TBs and GBSs are switched off.
    SatPlusHaps,
    /// Every layer: GBSs, TBs, HAPs and the satellite as back-haul.
    Integrated,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::SatOnly, Mode::SatPlusHaps, Mode::Integrated];

    pub fn name(self) -> &'static str {
        match self {
            Mode::SatOnly => "SatOnly",
            Mode::SatPlusHaps => "SatPlusHaps",
            Mode::Integrated => "Integrated",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown mode `{s}` (expected SatOnly, SatPlusHaps or Integrated)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: StationId,
    pub kind: NodeKind,
    pub position: Position,
    pub peak_tx_power_dbm: f64,
    pub antenna_gain_tx_dbi: f64,
    pub antenna_gain_rx_dbi: f64,
    pub has_fso: bool,
    /// Present for tethered balloons only.
    pub battery: Option<BatteryState>,
    pub backhaul_bandwidth_rf_hz: f64,
    pub backhaul_bandwidth_fso_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundUser {
    pub id: UserId,
    pub position: Position,
    pub qos_min_rate_bps: f64,
    pub peak_tx_power_dbm: f64,
    pub antenna_gain_dbi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gateway {
    pub id: GatewayId,
    pub position: Position,
    pub has_fso: bool,
    /// Capacity of the wired core connection, bit/s.
    pub fiber_rate_bps: f64,
    pub antenna_gain_dbi: f64,
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    fn sample(&self, rng: &mut impl Rng) -> (f64, f64) {
        (
            self.x_min + rng.gen::<f64>() * (self.x_max - self.x_min),
            self.y_min + rng.gen::<f64>() * (self.y_max - self.y_min),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Rect(Rect),
    /// Whatever part of the area no rectangular sub-area covers.
    Remainder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubArea {
    pub name: String,
    pub region: Region,
    pub user_fraction: f64,
    #[serde(default)]
    pub gbs_count: usize,
    #[serde(default)]
    pub tb_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaSize {
    pub width_m: f64,
    pub height_m: f64,
}

impl AreaSize {
    pub fn rect(&self) -> Rect {
        Rect { x_min: 0.0, x_max: self.width_m, y_min: 0.0, y_max: self.height_m }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Altitudes {
    pub tb_m: f64,
    pub hap_m: f64,
    pub satellite_m: f64,
}

impl Default for Altitudes {
    fn default() -> Self {
        Self { tb_m: 1_000.0, hap_m: 20_000.0, satellite_m: 500_000.0 }
    }
}

/// Transmit power, antenna gain and FSO fit of one station kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationRadio {
    pub peak_tx_power_dbm: f64,
    pub antenna_gain_dbi: f64,
    pub has_fso: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioProfile {
    pub satellite: StationRadio,
    pub hap: StationRadio,
    pub tb: StationRadio,
    pub gbs: StationRadio,
    pub backhaul_bandwidth_rf_hz: f64,
    pub backhaul_bandwidth_fso_hz: f64,
    pub user_peak_tx_power_dbm: f64,
    pub user_antenna_gain_dbi: f64,
    pub user_qos_min_rate_bps: f64,
    pub gateway_fiber_rate_bps: f64,
    pub gateway_antenna_gain_dbi: f64,
    pub gateway_tx_power_dbm: f64,
    pub gateway_has_fso: bool,
}

impl Default for RadioProfile {
    fn default() -> Self {
        Self {
            satellite: StationRadio { peak_tx_power_dbm: 40.0, antenna_gain_dbi: 40.0, has_fso: true },
            hap: StationRadio { peak_tx_power_dbm: 40.0, antenna_gain_dbi: 20.0, has_fso: true },
            tb: StationRadio { peak_tx_power_dbm: 30.0, antenna_gain_dbi: 10.0, has_fso: false },
            gbs: StationRadio { peak_tx_power_dbm: 40.0, antenna_gain_dbi: 10.0, has_fso: false },
            backhaul_bandwidth_rf_hz: 20e6,
            backhaul_bandwidth_fso_hz: 2e9,
            user_peak_tx_power_dbm: 20.0,
            user_antenna_gain_dbi: 0.0,
            user_qos_min_rate_bps: 0.0,
            gateway_fiber_rate_bps: 10e9,
            gateway_antenna_gain_dbi: 30.0,
            gateway_tx_power_dbm: 40.0,
            gateway_has_fso: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub area_size: AreaSize,
    pub subareas: Vec<SubArea>,
    pub num_users: usize,
    pub num_haps: usize,
    pub num_gateways: usize,
    pub altitudes: Altitudes,
    pub channel: ChannelParams,
    pub radio: RadioProfile,
    pub energy: EnergyParams,
    pub allocation: AllocationParams,
    pub placement: PlacementParams,
    pub max_haps_per_backhaul: usize,
    /// GBSs within this ground distance of a gateway use fiber back-haul.
    pub gbs_fiber_radius_m: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Fixed positions replacing the generated ones, keyed by station id.
    /// This is the format `place` writes.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub station_positions: BTreeMap<StationId, Position>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        reference_config()
    }
}

/// The reference layout: a 180 km square with a dense city corner (A), a
/// disaster zone without terrestrial coverage (B) and a rural remainder (C).
pub fn reference_config() -> ScenarioConfig {
    let km = 1_000.0;
    ScenarioConfig {
        area_size: AreaSize { width_m: 180.0 * km, height_m: 180.0 * km },
        subareas: vec![
            SubArea {
                name: "A".into(),
                region: Region::Rect(Rect { x_min: 55.0 * km, x_max: 125.0 * km, y_min: 0.0, y_max: 70.0 * km }),
                user_fraction: 0.40,
                gbs_count: 30,
                tb_count: 30,
            },
            SubArea {
                name: "B".into(),
                region: Region::Rect(Rect {
                    x_min: 55.0 * km,
                    x_max: 125.0 * km,
                    y_min: 110.0 * km,
                    y_max: 180.0 * km,
                }),
                user_fraction: 0.30,
                gbs_count: 0,
                tb_count: 0,
            },
            SubArea { name: "C".into(), region: Region::Remainder, user_fraction: 0.30, gbs_count: 0, tb_count: 0 },
        ],
        num_users: 100,
        num_haps: 8,
        num_gateways: 4,
        altitudes: Altitudes::default(),
        channel: ChannelParams::default(),
        radio: RadioProfile::default(),
        energy: EnergyParams::default(),
        allocation: AllocationParams::default(),
        placement: PlacementParams::default(),
        max_haps_per_backhaul: 2,
        gbs_fiber_radius_m: 10.0 * km,
        mode: Mode::Integrated,
        seed: 1,
        station_positions: BTreeMap::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid config at `{path}`: {reason}")]
pub struct ConfigError {
    pub path: String,
    pub reason: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { path: path.into(), reason: reason.into() }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::new("$", e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks the structural rules a config must satisfy before a scenario can be built.
    pub fn check(&self) -> Result<(), ConfigError> {
        let area = self.area_size;
        if !(area.width_m > 0.0 && area.height_m > 0.0 && area.width_m.is_finite() && area.height_m.is_finite()) {
            return Err(ConfigError::new("area_size", "width and height must be positive"));
        }
        if self.subareas.is_empty() {
            return Err(ConfigError::new("subareas", "at least one sub-area is required"));
        }
        let sum: f64 = self.subareas.iter().map(|s| s.user_fraction).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::new("subareas[*].user_fraction", format!("fractions sum to {sum}, expected 1")));
        }
        let bounds = area.rect();
        let mut remainders = 0;
        let mut covered = 0.0;
        for (i, sub) in self.subareas.iter().enumerate() {
            if !(0.0..=1.0).contains(&sub.user_fraction) {
                return Err(ConfigError::new(format!("subareas[{i}].user_fraction"), "must lie in [0, 1]"));
            }
            match &sub.region {
                Region::Rect(r) => {
                    if !(r.x_min < r.x_max && r.y_min < r.y_max) {
                        return Err(ConfigError::new(format!("subareas[{i}].region"), "empty rectangle"));
                    }
                    if r.x_min < bounds.x_min || r.y_min < bounds.y_min || r.x_max > bounds.x_max || r.y_max > bounds.y_max {
                        return Err(ConfigError::new(format!("subareas[{i}].region"), "rectangle exceeds area_size"));
                    }
                    covered += r.area();
                }
                Region::Remainder => remainders += 1,
            }
        }
        if remainders > 1 {
            return Err(ConfigError::new("subareas", "at most one remainder sub-area"));
        }
        if remainders == 1 && covered >= bounds.area() {
            return Err(ConfigError::new("subareas", "remainder sub-area has no free area"));
        }
        let alt = self.altitudes;
        if !(alt.tb_m > 0.0 && alt.tb_m < alt.hap_m && alt.hap_m < alt.satellite_m) {
            return Err(ConfigError::new("altitudes", "need 0 < tb_m < hap_m < satellite_m"));
        }
        if self.num_gateways > 0 && self.radio.gateway_fiber_rate_bps <= 0.0 {
            return Err(ConfigError::new("radio.gateway_fiber_rate_bps", "must be positive"));
        }
        if self.radio.user_qos_min_rate_bps < 0.0 {
            return Err(ConfigError::new("radio.user_qos_min_rate_bps", "must be non-negative"));
        }
        if !(self.gbs_fiber_radius_m >= 0.0) {
            return Err(ConfigError::new("gbs_fiber_radius_m", "must be non-negative"));
        }
        for (id, p) in &self.station_positions {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(ConfigError::new(format!("station_positions.{id}"), "coordinates must be finite"));
            }
        }
        self.channel.check().map_err(|reason| ConfigError::new("channel", reason))?;
        self.allocation.check().map_err(|reason| ConfigError::new("allocation", reason))?;
        self.placement.check().map_err(|reason| ConfigError::new("placement", reason))?;
        self.energy.check().map_err(|reason| ConfigError::new("energy", reason))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub stations: Vec<Station>,
    pub users: Vec<GroundUser>,
    pub gateways: Vec<Gateway>,
}

/// Index of the element with `id`, trying position `id` first since built
/// scenarios number their entities densely.
fn index_of<T>(items: &[T], id: u32, key: impl Fn(&T) -> u32) -> Option<usize> {
    match items.get(id as usize) {
        Some(item) if key(item) == id => Some(id as usize),
        _ => items.iter().position(|item| key(item) == id),
    }
}

impl Scenario {
    pub fn station(&self, id: StationId) -> Option<&Station> {
        index_of(&self.stations, id, |s| s.id).map(|i| &self.stations[i])
    }

    pub fn station_mut(&mut self, id: StationId) -> Option<&mut Station> {
        index_of(&self.stations, id, |s| s.id).map(|i| &mut self.stations[i])
    }

    pub fn user(&self, id: UserId) -> Option<&GroundUser> {
        index_of(&self.users, id, |u| u.id).map(|i| &self.users[i])
    }

    pub fn gateway(&self, id: GatewayId) -> Option<&Gateway> {
        index_of(&self.gateways, id, |g| g.id).map(|i| &self.gateways[i])
    }

    pub fn stations_of(&self, kind: NodeKind) -> impl Iterator<Item = &Station> + '_ {
        self.stations.iter().filter(move |s| s.kind == kind)
    }

    pub fn satellite(&self) -> Option<&Station> {
        self.stations_of(NodeKind::Satellite).next()
    }

    pub fn bounds(&self) -> Rect {
        self.config.area_size.rect()
    }

    /// Ids of the stations the placement optimizer may move (HAPs and TBs).
    pub fn movable_station_ids(&self) -> Vec<StationId> {
        self.stations
            .iter()
            .filter(|s| matches!(s.kind, NodeKind::Hap | NodeKind::TetheredBalloon))
            .map(|s| s.id)
            .collect()
    }
}

/// User counts per sub-area: floor of each share, remainder to the last sub-area.
pub fn user_counts(fractions: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = fractions
        .iter()
        .map(|f| ((f * total as f64) + 1e-9).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    if let Some(last) = counts.last_mut() {
        *last = (*last + total.saturating_sub(assigned)).min(total);
    }
    counts
}

fn sample_remainder(area: &Rect, rects: &[Rect], rng: &mut impl Rng) -> (f64, f64) {
    loop {
        let (x, y) = area.sample(rng);
        if !rects.iter().any(|r| r.contains(x, y)) {
            return (x, y);
        }
    }
}

fn sample_region(region: &Region, area: &Rect, rects: &[Rect], rng: &mut impl Rng) -> (f64, f64) {
    match region {
        Region::Rect(r) => r.sample(rng),
        Region::Remainder => sample_remainder(area, rects, rng),
    }
}

/// Grid with `rows * cols >= n`, rows = floor(sqrt(n)); cell centers in row-major order.
fn grid_positions(n: usize, area: &Rect) -> Vec<(f64, f64)> {
    if n == 0 {
        return Vec::new();
    }
    let rows = ((n as f64).sqrt().floor() as usize).max(1);
    let cols = n.div_ceil(rows);
    let (cw, ch) = ((area.x_max - area.x_min) / cols as f64, (area.y_max - area.y_min) / rows as f64);
    (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            (area.x_min + (c as f64 + 0.5) * cw, area.y_min + (r as f64 + 0.5) * ch)
        })
        .collect()
}

/// Points evenly spaced along the rectangle perimeter, starting half a spacing
/// from the origin corner and walking counter-clockwise.
fn perimeter_positions(n: usize, area: &Rect) -> Vec<(f64, f64)> {
    let (w, h) = (area.x_max - area.x_min, area.y_max - area.y_min);
    let perimeter = 2.0 * (w + h);
    (0..n)
        .map(|i| {
            let mut s = (i as f64 + 0.5) * perimeter / n as f64;
            if s < w {
                return (area.x_min + s, area.y_min);
            }
            s -= w;
            if s < h {
                return (area.x_max, area.y_min + s);
            }
            s -= h;
            if s < w {
                return (area.x_max - s, area.y_max);
            }
            s -= w;
            (area.x_min, area.y_max - s)
        })
        .collect()
}

fn make_station(
    id: StationId,
    kind: NodeKind,
    position: Position,
    radio: &StationRadio,
    cfg: &ScenarioConfig,
) -> Station {
    let battery = (kind == NodeKind::TetheredBalloon).then(|| BatteryState::full(&cfg.energy));
    Station {
        id,
        kind,
        position,
        peak_tx_power_dbm: radio.peak_tx_power_dbm,
        antenna_gain_tx_dbi: radio.antenna_gain_dbi,
        antenna_gain_rx_dbi: radio.antenna_gain_dbi,
        has_fso: radio.has_fso,
        battery,
        backhaul_bandwidth_rf_hz: cfg.radio.backhaul_bandwidth_rf_hz,
        backhaul_bandwidth_fso_hz: cfg.radio.backhaul_bandwidth_fso_hz,
    }
}

/// Builds a scenario from `config`. Identical configs (including the seed)
/// give bit-identical scenarios.
pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario, ConfigError> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let area = config.area_size.rect();
    let rects: Vec<Rect> = config
        .subareas
        .iter()
        .filter_map(|s| match s.region {
            Region::Rect(r) => Some(r),
            Region::Remainder => None,
        })
        .collect();

    let fractions: Vec<f64> = config.subareas.iter().map(|s| s.user_fraction).collect();
    let counts = user_counts(&fractions, config.num_users);
    let radio = &config.radio;

    let mut users = Vec::with_capacity(config.num_users);
    for (sub, &count) in config.subareas.iter().zip(&counts) {
        for _ in 0..count {
            let (x, y) = sample_region(&sub.region, &area, &rects, &mut rng);
            users.push(GroundUser {
                id: users.len() as UserId,
                position: Position::ground(x, y),
                qos_min_rate_bps: radio.user_qos_min_rate_bps,
                peak_tx_power_dbm: radio.user_peak_tx_power_dbm,
                antenna_gain_dbi: radio.user_antenna_gain_dbi,
            });
        }
    }

    let mut stations = Vec::new();
    let center = Position::new(area.x_max / 2.0, area.y_max / 2.0, config.altitudes.satellite_m);
    stations.push(make_station(0, NodeKind::Satellite, center, &radio.satellite, config));

    for (x, y) in grid_positions(config.num_haps, &area) {
        let id = stations.len() as StationId;
        stations.push(make_station(id, NodeKind::Hap, Position::new(x, y, config.altitudes.hap_m), &radio.hap, config));
    }
    for sub in &config.subareas {
        for _ in 0..sub.gbs_count {
            let (x, y) = sample_region(&sub.region, &area, &rects, &mut rng);
            let id = stations.len() as StationId;
            stations.push(make_station(id, NodeKind::GroundBaseStation, Position::ground(x, y), &radio.gbs, config));
        }
    }
    for sub in &config.subareas {
        for _ in 0..sub.tb_count {
            let (x, y) = sample_region(&sub.region, &area, &rects, &mut rng);
            let id = stations.len() as StationId;
            let pos = Position::new(x, y, config.altitudes.tb_m);
            stations.push(make_station(id, NodeKind::TetheredBalloon, pos, &radio.tb, config));
        }
    }

    for (&id, &pos) in &config.station_positions {
        let station = stations
            .get_mut(id as usize)
            .ok_or_else(|| ConfigError::new(format!("station_positions.{id}"), "no such station"))?;
        station.position = pos;
    }

    let gateways = perimeter_positions(config.num_gateways, &area)
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| Gateway {
            id: i as GatewayId,
            position: Position::ground(x, y),
            has_fso: radio.gateway_has_fso,
            fiber_rate_bps: radio.gateway_fiber_rate_bps,
            antenna_gain_dbi: radio.gateway_antenna_gain_dbi,
            tx_power_dbm: radio.gateway_tx_power_dbm,
        })
        .collect();

    Ok(Scenario { config: config.clone(), stations, users, gateways })
}

/// A broken scenario invariant, naming the offending entity.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateId(NodeKind, u32),
    SatelliteCount(usize),
    NonPositiveAltitude(StationId),
    AltitudeOrdering(StationId),
    BatteryMismatch(StationId),
    BatteryOutOfRange(StationId),
    OutOfBounds(NodeKind, u32),
    NegativeQos(UserId),
    NonFinitePower(NodeKind, u32),
    NonPositiveFiberRate(GatewayId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(k, id) => write!(f, "{k} {id}: duplicate id"),
            Violation::SatelliteCount(n) => write!(f, "expected exactly one satellite, found {n}"),
            Violation::NonPositiveAltitude(id) => write!(f, "station {id}: aerial station altitude must be > 0"),
            Violation::AltitudeOrdering(id) => write!(f, "station {id}: altitude breaks tb < hap < satellite ordering"),
            Violation::BatteryMismatch(id) => write!(f, "station {id}: battery present iff tethered balloon"),
            Violation::BatteryOutOfRange(id) => write!(f, "station {id}: stored energy outside [0, capacity]"),
            Violation::OutOfBounds(k, id) => write!(f, "{k} {id}: position outside area"),
            Violation::NegativeQos(id) => write!(f, "user {id}: negative qos_min_rate"),
            Violation::NonFinitePower(k, id) => write!(f, "{k} {id}: peak power is not finite"),
            Violation::NonPositiveFiberRate(id) => write!(f, "gateway {id}: fiber_rate must be > 0"),
        }
    }
}

/// Returns every broken invariant; an empty list means the scenario is well formed.
pub fn validate(scenario: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let bounds = scenario.bounds();

    let mut seen = BTreeSet::new();
    for s in &scenario.stations {
        if !seen.insert(s.id) {
            out.push(Violation::DuplicateId(s.kind, s.id));
        }
    }
    let mut seen = BTreeSet::new();
    for u in &scenario.users {
        if !seen.insert(u.id) {
            out.push(Violation::DuplicateId(NodeKind::User, u.id));
        }
    }
    let mut seen = BTreeSet::new();
    for g in &scenario.gateways {
        if !seen.insert(g.id) {
            out.push(Violation::DuplicateId(NodeKind::Gateway, g.id));
        }
    }

    let sat_count = scenario.stations_of(NodeKind::Satellite).count();
    if sat_count != 1 {
        out.push(Violation::SatelliteCount(sat_count));
    }

    let max_alt = |kind| scenario.stations_of(kind).map(|s| s.position.z).fold(f64::NEG_INFINITY, f64::max);
    let min_alt = |kind| scenario.stations_of(kind).map(|s| s.position.z).fold(f64::INFINITY, f64::min);
    let hap_min = min_alt(NodeKind::Hap);
    let hap_max = max_alt(NodeKind::Hap);
    let sat_min = min_alt(NodeKind::Satellite);
    // Bands are compared across kinds; with no HAPs the TB ceiling is the satellite.
    let tb_ceiling = hap_min.min(sat_min);

    for s in &scenario.stations {
        let aerial = matches!(s.kind, NodeKind::Satellite | NodeKind::Hap | NodeKind::TetheredBalloon);
        if aerial && !(s.position.z > 0.0) {
            out.push(Violation::NonPositiveAltitude(s.id));
        }
        let ordered = match s.kind {
            NodeKind::TetheredBalloon => s.position.z < tb_ceiling,
            NodeKind::Hap => s.position.z < sat_min,
            NodeKind::Satellite => s.position.z > hap_max,
            _ => true,
        };
        if aerial && s.position.z > 0.0 && !ordered {
            out.push(Violation::AltitudeOrdering(s.id));
        }
        if s.battery.is_some() != (s.kind == NodeKind::TetheredBalloon) {
            out.push(Violation::BatteryMismatch(s.id));
        }
        if let Some(b) = &s.battery {
            if !b.is_within_bounds() {
                out.push(Violation::BatteryOutOfRange(s.id));
            }
        }
        if s.kind != NodeKind::Satellite && !bounds.contains(s.position.x, s.position.y) {
            out.push(Violation::OutOfBounds(s.kind, s.id));
        }
        if !s.peak_tx_power_dbm.is_finite() {
            out.push(Violation::NonFinitePower(s.kind, s.id));
        }
    }
    for u in &scenario.users {
        if !bounds.contains(u.position.x, u.position.y) {
            out.push(Violation::OutOfBounds(NodeKind::User, u.id));
        }
        if !(u.qos_min_rate_bps >= 0.0) {
            out.push(Violation::NegativeQos(u.id));
        }
        if !u.peak_tx_power_dbm.is_finite() {
            out.push(Violation::NonFinitePower(NodeKind::User, u.id));
        }
    }
    for g in &scenario.gateways {
        if !bounds.contains(g.position.x, g.position.y) {
            out.push(Violation::OutOfBounds(NodeKind::Gateway, g.id));
        }
        if !(g.fiber_rate_bps > 0.0) {
            out.push(Violation::NonPositiveFiberRate(g.id));
        }
    }
    out
}
