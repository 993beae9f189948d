//! Bandwidth and power allocation, back-haul sharing and rate utilities.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{AccessAssociation, BackhaulAssociation, Direction, LinkId};
use crate::channel::{rf_link_budget, shannon_rate, ChannelError};
use crate::scenario::{GroundUser, NodeKind, Scenario, Station, StationId, UserId};
use crate::units::{db_to_linear, dbm_to_mw, mw_to_dbm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocationError {
    #[error("cannot split bandwidth among zero users")]
    ZeroUsers,
    #[error("water-filling needs at least one channel")]
    EmptyChannelList,
    #[error("total power must be positive, got {0}")]
    NonPositivePower(f64),
    #[error("channel gains must be positive and finite, got {0}")]
    NonPositiveGain(f64),
    #[error("demands must be non-negative, got {0}")]
    NegativeDemand(f64),
    #[error("utility of an empty rate list")]
    EmptyRates,
    #[error("rates must be non-negative, got {0}")]
    NegativeRate(f64),
    #[error("user {user} is assigned to unknown station {station}")]
    UnknownStation { user: UserId, station: StationId },
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Access spectrum of one station, by kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccessBandwidth {
    pub gbs_hz: f64,
    pub tb_hz: f64,
    pub hap_hz: f64,
    pub satellite_hz: f64,
}

impl Default for AccessBandwidth {
    fn default() -> Self {
        AccessBandwidth { gbs_hz: 20e6, tb_hz: 20e6, hap_hz: 5e6, satellite_hz: 100e3 }
    }
}

impl AccessBandwidth {
    pub fn for_kind(&self, kind: NodeKind) -> f64 {
        match kind {
            NodeKind::GroundBaseStation => self.gbs_hz,
            NodeKind::TetheredBalloon => self.tb_hz,
            NodeKind::Hap => self.hap_hz,
            NodeKind::Satellite => self.satellite_hz,
            NodeKind::Gateway | NodeKind::User => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMetric {
    SumRate,
    MinRate,
    ProportionalFair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationParams {
    pub access_bandwidth: AccessBandwidth,
    pub backhaul_bandwidth_cases: Vec<f64>,
    pub utility_metric: UtilityMetric,
    pub control_overhead_fraction: f64,
}

impl Default for AllocationParams {
    fn default() -> Self {
        AllocationParams {
            access_bandwidth: AccessBandwidth::default(),
            backhaul_bandwidth_cases: vec![20e6, 200e6, 2e9],
            utility_metric: UtilityMetric::SumRate,
            control_overhead_fraction: 0.05,
        }
    }
}

impl AllocationParams {
    pub fn check(&self) -> Result<(), String> {
        let b = &self.access_bandwidth;
        for (name, v) in [("gbs_hz", b.gbs_hz), ("tb_hz", b.tb_hz), ("hap_hz", b.hap_hz), ("satellite_hz", b.satellite_hz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("access_bandwidth.{name}: must be positive and finite"));
            }
        }
        for (i, v) in self.backhaul_bandwidth_cases.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(format!("backhaul_bandwidth_cases[{i}]: must be positive and finite"));
            }
        }
        if !(0.0..=0.5).contains(&self.control_overhead_fraction) {
            return Err("control_overhead_fraction: must lie in [0, 0.5]".into());
        }
        Ok(())
    }
}

/// `(1 - overhead) * station_band / n_users`.
pub fn equal_bandwidth_split(station_band_hz: f64, n_users: usize, overhead: f64) -> Result<f64, AllocationError> {
    if n_users == 0 {
        return Err(AllocationError::ZeroUsers);
    }
    Ok((1.0 - overhead) * station_band_hz / n_users as f64)
}

/// Power split maximizing `sum log2(1 + g_i p_i)` subject to `sum p_i = total_power`.
///
/// The water level is found exactly: channels are activated strongest first
/// until the next one's floor `1/g` sits above the level.
pub fn waterfill_power(gain_over_noise: &[f64], total_power: f64) -> Result<Vec<f64>, AllocationError> {
    if gain_over_noise.is_empty() {
        return Err(AllocationError::EmptyChannelList);
    }
    if !(total_power > 0.0 && total_power.is_finite()) {
        return Err(AllocationError::NonPositivePower(total_power));
    }
    if let Some(&g) = gain_over_noise.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(AllocationError::NonPositiveGain(g));
    }
    let mut floors: Vec<(usize, f64)> = gain_over_noise.iter().map(|g| 1.0 / g).enumerate().collect();
    floors.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut active = 0;
    let mut floor_sum = 0.0;
    let mut level = 0.0;
    for (k, &(_, floor)) in floors.iter().enumerate() {
        let candidate = (total_power + floor_sum + floor) / (k + 1) as f64;
        if k > 0 && floor >= candidate {
            break;
        }
        active = k + 1;
        floor_sum += floor;
        level = candidate;
    }

    let mut power = vec![0.0; gain_over_noise.len()];
    for &(i, floor) in &floors[..active] {
        power[i] = (level - floor).max(0.0);
    }
    // Put any rounding residue on the strongest channel.
    let residue = total_power - power.iter().sum::<f64>();
    power[floors[0].0] += residue;
    Ok(power)
}

/// Bottlenecked rate: the minimum of the access rate and every hop share.
pub fn effective_user_rate(access_rate_bps: f64, chain_shares_bps: &[f64]) -> f64 {
    chain_shares_bps.iter().copied().fold(access_rate_bps, f64::min)
}

/// Max-min fair division of `link_capacity` among `demands`.
pub fn share_backhaul(link_capacity_bps: f64, demands_bps: &[f64]) -> Result<Vec<f64>, AllocationError> {
    if let Some(&d) = demands_bps.iter().find(|d| !(**d >= 0.0)) {
        return Err(AllocationError::NegativeDemand(d));
    }
    let total: f64 = demands_bps.iter().sum();
    if total <= link_capacity_bps {
        return Ok(demands_bps.to_vec());
    }
    let mut order: Vec<usize> = (0..demands_bps.len()).collect();
    order.sort_by(|&a, &b| demands_bps[a].total_cmp(&demands_bps[b]).then(a.cmp(&b)));
    let mut shares = vec![0.0; demands_bps.len()];
    let mut remaining = link_capacity_bps.max(0.0);
    for (k, &i) in order.iter().enumerate() {
        let fair = remaining / (order.len() - k) as f64;
        let grant = demands_bps[i].min(fair);
        shares[i] = grant;
        remaining = (remaining - grant).max(0.0);
    }
    Ok(shares)
}

pub fn utility(rates_bps: &[f64], metric: UtilityMetric) -> Result<f64, AllocationError> {
    if rates_bps.is_empty() {
        return Err(AllocationError::EmptyRates);
    }
    if let Some(&r) = rates_bps.iter().find(|r| !(**r >= 0.0)) {
        return Err(AllocationError::NegativeRate(r));
    }
    Ok(match metric {
        UtilityMetric::SumRate => rates_bps.iter().sum(),
        UtilityMetric::MinRate => rates_bps.iter().copied().fold(f64::INFINITY, f64::min),
        UtilityMetric::ProportionalFair => {
            let mean_log = rates_bps.iter().map(|r| r.max(1.0).ln()).sum::<f64>() / rates_bps.len() as f64;
            mean_log.exp()
        }
    })
}

/// Received access power in dBm; `tx_power_dbm` defaults to the transmitter's peak.
pub fn access_rx_power_dbm(
    scenario: &Scenario,
    direction: Direction,
    user: &GroundUser,
    station: &Station,
    tx_power_dbm: Option<f64>,
) -> Result<f64, ChannelError> {
    let params = &scenario.config.channel;
    let budget = match direction {
        Direction::Uplink => {
            rf_link_budget(user, station, tx_power_dbm.unwrap_or(user.peak_tx_power_dbm), 1.0, params)?
        }
        Direction::Downlink => {
            rf_link_budget(station, user, tx_power_dbm.unwrap_or(station.peak_tx_power_dbm), 1.0, params)?
        }
    };
    Ok(budget.rx_power_dbm)
}

/// Binding constraint on a user's effective rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bottleneck {
    Access,
    Link(LinkId),
    Unserved,
}

impl fmt::Display for Bottleneck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bottleneck::Access => f.write_str("access"),
            Bottleneck::Link(l) => write!(f, "{l}"),
            Bottleneck::Unserved => f.write_str("unserved"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserAllocation {
    pub user_id: UserId,
    pub station_id: Option<StationId>,
    pub bandwidth_hz: f64,
    /// Transmit power on this user's access link; `None` when unserved or given no power.
    pub tx_power_dbm: Option<f64>,
    pub access_rate_bps: f64,
    pub effective_rate_bps: f64,
    pub bottleneck: Bottleneck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub direction: Direction,
    /// In user-id order.
    pub users: Vec<UserAllocation>,
    /// Carried traffic per capacity-limited hop.
    pub link_load_bps: BTreeMap<LinkId, f64>,
    pub utility_value: f64,
}

impl AllocationResult {
    pub fn effective_rates(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.effective_rate_bps).collect()
    }

    /// Sum of effective rates over all users (served or not) divided by the user count.
    pub fn mean_rate(&self) -> f64 {
        if self.users.is_empty() {
            return 0.0;
        }
        self.users.iter().map(|u| u.effective_rate_bps).sum::<f64>() / self.users.len() as f64
    }

    pub fn min_rate(&self) -> f64 {
        self.users.iter().map(|u| u.effective_rate_bps).fold(f64::INFINITY, f64::min).min(f64::MAX).max(0.0)
    }

    /// Back-haul load on the link leaving `station`.
    pub fn backhaul_load(&self, station: StationId) -> f64 {
        self.link_load_bps.get(&LinkId::Backhaul(station)).copied().unwrap_or(0.0)
    }
}

/// Full allocation for fixed associations.
///
/// Each station splits its access band equally among its users. Uplink users
/// transmit at peak power; downlink stations water-fill their peak power over
/// their users. Hop capacities are then shared max-min fairly, edge hops first,
/// with each user's demand on a hop capped by what it was granted upstream.
pub fn allocate(
    scenario: &Scenario,
    direction: Direction,
    access: &AccessAssociation,
    backhaul: &BackhaulAssociation,
    params: &AllocationParams,
) -> Result<AllocationResult, AllocationError> {
    let channel = &scenario.config.channel;
    let noise_mw_per_hz = db_to_linear(channel.noise_density_dbm_hz);

    let mut per_station: BTreeMap<StationId, Vec<&GroundUser>> = BTreeMap::new();
    let mut users: BTreeMap<UserId, UserAllocation> = BTreeMap::new();
    let mut sorted_users: Vec<&GroundUser> = scenario.users.iter().collect();
    sorted_users.sort_by_key(|u| u.id);
    for user in sorted_users {
        let station = access.station_of(user.id);
        if let Some(sid) = station {
            if scenario.station(sid).is_none() {
                return Err(AllocationError::UnknownStation { user: user.id, station: sid });
            }
            per_station.entry(sid).or_default().push(user);
        }
        users.insert(
            user.id,
            UserAllocation {
                user_id: user.id,
                station_id: station,
                bandwidth_hz: 0.0,
                tx_power_dbm: None,
                access_rate_bps: 0.0,
                effective_rate_bps: 0.0,
                bottleneck: Bottleneck::Unserved,
            },
        );
    }

    // Access rates.
    for (&sid, served) in &per_station {
        let station = scenario.station(sid).expect("checked above");
        let band = equal_bandwidth_split(params.access_bandwidth.for_kind(station.kind), served.len(), params.control_overhead_fraction)?;
        let noise_mw = noise_mw_per_hz * band.max(1.0);
        let powers_dbm: Vec<f64> = match direction {
            Direction::Uplink => served.iter().map(|u| u.peak_tx_power_dbm).collect(),
            Direction::Downlink => {
                let total_mw = dbm_to_mw(station.peak_tx_power_dbm);
                if !(total_mw > 0.0 && total_mw.is_finite()) {
                    vec![f64::NEG_INFINITY; served.len()]
                } else {
                    let mut gains = Vec::with_capacity(served.len());
                    for u in served {
                        let rx_at_1mw = access_rx_power_dbm(scenario, direction, u, station, Some(0.0))?;
                        gains.push(dbm_to_mw(rx_at_1mw) / noise_mw);
                    }
                    waterfill_power(&gains, total_mw)?.into_iter().map(mw_to_dbm).collect()
                }
            }
        };
        for (u, p_dbm) in served.iter().zip(powers_dbm) {
            let rate = if p_dbm == f64::NEG_INFINITY {
                0.0
            } else {
                let rx = access_rx_power_dbm(scenario, direction, u, station, Some(p_dbm))?;
                shannon_rate(band, dbm_to_mw(rx) / noise_mw, channel.snr_cap)?
            };
            let rec = users.get_mut(&u.id).expect("user record");
            rec.bandwidth_hz = band;
            rec.tx_power_dbm = (p_dbm > f64::NEG_INFINITY).then_some(p_dbm);
            rec.access_rate_bps = rate;
            rec.effective_rate_bps = rate;
            rec.bottleneck = Bottleneck::Access;
        }
    }

    // Hop-by-hop sharing, edge level first.
    let mut routes: BTreeMap<StationId, Vec<crate::association::Hop>> = BTreeMap::new();
    for &sid in per_station.keys() {
        routes.insert(sid, backhaul.route(scenario, sid).unwrap_or_default());
    }
    let mut link_load_bps = BTreeMap::new();
    for level in 0..=2u8 {
        let mut on_link: BTreeMap<LinkId, (f64, Vec<UserId>)> = BTreeMap::new();
        for (sid, route) in &routes {
            for hop in route.iter().filter(|h| h.level == level) {
                let entry = on_link.entry(hop.link).or_insert((hop.capacity_bps, Vec::new()));
                entry.1.extend(per_station[sid].iter().map(|u| u.id));
            }
        }
        for (link, (capacity, ids)) in on_link {
            let demands: Vec<f64> = ids.iter().map(|id| users[id].effective_rate_bps).collect();
            let shares = share_backhaul(capacity, &demands)?;
            link_load_bps.insert(link, shares.iter().sum::<f64>());
            for (id, share) in ids.iter().zip(shares) {
                let rec = users.get_mut(id).expect("user record");
                if share < rec.effective_rate_bps {
                    rec.effective_rate_bps = share;
                    rec.bottleneck = Bottleneck::Link(link);
                }
            }
        }
    }
    // Stations with no route to the core carry nothing.
    for (sid, served) in &per_station {
        if backhaul.route(scenario, *sid).is_none() {
            for u in served {
                let rec = users.get_mut(&u.id).expect("user record");
                rec.effective_rate_bps = 0.0;
                rec.bottleneck = Bottleneck::Link(LinkId::Backhaul(*sid));
            }
        }
    }

    let users: Vec<UserAllocation> = users.into_values().collect();
    let rates: Vec<f64> = users.iter().map(|u| u.effective_rate_bps).collect();
    let utility_value = if rates.is_empty() { 0.0 } else { utility(&rates, params.utility_metric)? };
    Ok(AllocationResult { direction, users, link_load_bps, utility_value })
}
