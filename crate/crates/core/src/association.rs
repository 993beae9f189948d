//! Access-link and back-haul associations.
//!
//! Back-haul: every HAP picks one parent (a gateway or the satellite) under a
//! per-parent cap, TBs attach to their best HAP, and GBSs use fiber when a
//! gateway is close enough and a HAP otherwise. Access: each user is attached
//! to at most one permitted station, either greedily (bottleneck-aware) or by
//! exhaustive search on small instances.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::f64::consts::PI;

use crate::allocation::{self, AllocationError, AllocationParams};
use crate::channel::{self, best_medium, optimal_alignment, Alignment, ChannelError, LinkClass, Medium, RadioNode};
use crate::energy::{tb_consumption, TbLoad};
use crate::scenario::{GatewayId, Mode, NodeKind, Scenario, Station, StationId, UserId};
use crate::units::{db_to_linear, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Uplink,
    Downlink,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Uplink => "uplink",
            Direction::Downlink => "downlink",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uplink" | "ul" => Ok(Direction::Uplink),
            "downlink" | "dl" => Ok(Direction::Downlink),
            _ => Err(format!("unknown direction `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssociationError {
    #[error("{haps} HAPs cannot fit under a cap of {cap} per parent with {parents} parents")]
    InfeasibleCap { haps: usize, cap: usize, parents: usize },
    #[error("exhaustive search limited to {max_users} users and {max_stations} stations, got {users} and {stations}")]
    InstanceTooLarge { users: usize, stations: usize, max_users: usize, max_stations: usize },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Allocation(#[from] Box<AllocationError>),
}

impl From<AllocationError> for AssociationError {
    fn from(e: AllocationError) -> Self {
        AssociationError::Allocation(Box::new(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parent {
    Station(StationId),
    Gateway(GatewayId),
}

impl fmt::Display for Parent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parent::Station(id) => write!(f, "station:{id}"),
            Parent::Gateway(id) => write!(f, "gateway:{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BackhaulLink {
    pub parent: Parent,
    /// `None` for a fiber attachment.
    pub medium: Option<Medium>,
    pub capacity_bps: f64,
    /// Pointing of the child-side FSO terminal toward its parent.
    pub alignment: Option<Alignment>,
}

/// A capacity-limited hop between a serving station and the core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum LinkId {
    /// The back-haul link from this station to its parent.
    Backhaul(StationId),
    /// A gateway's wired core connection.
    Fiber(GatewayId),
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkId::Backhaul(id) => write!(f, "backhaul:{id}"),
            LinkId::Fiber(id) => write!(f, "fiber:{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hop {
    pub link: LinkId,
    pub capacity_bps: f64,
    /// 0 = GBS/TB back-haul, 1 = HAP back-haul, 2 = gateway fiber.
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackhaulAssociation {
    pub direction: Direction,
    pub links: BTreeMap<StationId, BackhaulLink>,
}

impl BackhaulAssociation {
    /// Hops from `station` to the core, edge first. `None` if the station cannot reach the core.
    pub fn route(&self, scenario: &Scenario, station: StationId) -> Option<Vec<Hop>> {
        let mut hops = Vec::new();
        let mut current = station;
        for _ in 0..8 {
            let kind = scenario.station(current)?.kind;
            if kind == NodeKind::Satellite {
                return Some(hops);
            }
            let link = self.links.get(&current)?;
            if link.medium.is_some() {
                let level = if kind == NodeKind::Hap { 1 } else { 0 };
                hops.push(Hop { link: LinkId::Backhaul(current), capacity_bps: link.capacity_bps, level });
            }
            match link.parent {
                Parent::Gateway(g) => {
                    let gw = scenario.gateway(g)?;
                    hops.push(Hop { link: LinkId::Fiber(g), capacity_bps: gw.fiber_rate_bps, level: 2 });
                    return Some(hops);
                }
                Parent::Station(p) => current = p,
            }
        }
        None
    }

    pub fn haps_on(&self, parent: Parent) -> usize {
        self.links.values().filter(|l| l.parent == parent && l.medium.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessAssociation {
    pub direction: Direction,
    /// `None` marks an unserved user.
    pub assignments: BTreeMap<UserId, Option<StationId>>,
}

impl AccessAssociation {
    pub fn station_of(&self, user: UserId) -> Option<StationId> {
        self.assignments.get(&user).copied().flatten()
    }

    pub fn users_of(&self, station: StationId) -> impl Iterator<Item = UserId> + '_ {
        self.assignments.iter().filter(move |(_, s)| **s == Some(station)).map(|(u, _)| *u)
    }

    pub fn unserved(&self) -> impl Iterator<Item = UserId> + '_ {
        self.assignments.iter().filter(|(_, s)| s.is_none()).map(|(u, _)| *u)
    }
}

/// Station kinds allowed to carry a user's access link.
pub fn access_kinds(direction: Direction, mode: Mode) -> &'static [NodeKind] {
    use NodeKind::*;
    match (mode, direction) {
        (Mode::SatOnly, _) => &[Satellite],
        (Mode::SatPlusHaps, _) => &[Satellite, Hap],
        (Mode::Integrated, Direction::Uplink) => &[GroundBaseStation, TetheredBalloon],
        (Mode::Integrated, Direction::Downlink) => &[Hap, GroundBaseStation, TetheredBalloon],
    }
}

/// Every (user, station) access pair permitted by `mode` and `direction`, sorted by ids.
pub fn enumerate_access_candidates(scenario: &Scenario, direction: Direction, mode: Mode) -> Vec<(UserId, StationId)> {
    let kinds = access_kinds(direction, mode);
    let mut stations: Vec<StationId> =
        scenario.stations.iter().filter(|s| kinds.contains(&s.kind)).map(|s| s.id).collect();
    stations.sort_unstable();
    let mut users: Vec<UserId> = scenario.users.iter().map(|u| u.id).collect();
    users.sort_unstable();
    users.iter().flat_map(|&u| stations.iter().map(move |&s| (u, s))).collect()
}

fn directed_budget(
    child: &dyn RadioNode,
    parent: &dyn RadioNode,
    direction: Direction,
    params: &channel::ChannelParams,
    rf_hz: f64,
    fso_hz: f64,
) -> Result<channel::LinkBudget, ChannelError> {
    match direction {
        Direction::Uplink => best_medium(child, parent, params, rf_hz, fso_hz),
        Direction::Downlink => best_medium(parent, child, params, rf_hz, fso_hz),
    }
}

fn link_from_budget(
    child: &Station,
    parent_node: &dyn RadioNode,
    parent: Parent,
    budget: &channel::LinkBudget,
) -> Result<BackhaulLink, ChannelError> {
    let alignment = match budget.medium {
        Medium::Fso => Some(optimal_alignment(child.position, parent_node.position())?),
        Medium::Rf => None,
    };
    Ok(BackhaulLink { parent, medium: Some(budget.medium), capacity_bps: budget.max_rate_at_full_band, alignment })
}

/// Back-haul associations for one direction.
///
/// HAPs are placed greedily, largest regret (best minus second-best parent
/// rate) first, each taking its best parent with room left. Parent rates for
/// gateways are capped by the gateway's fiber rate. TBs take their best HAP;
/// GBSs within `gbs_fiber_radius_m` of a gateway take fiber to the nearest one.
pub fn solve_backhaul(scenario: &Scenario, direction: Direction) -> Result<BackhaulAssociation, AssociationError> {
    let cfg = &scenario.config;
    let params = &cfg.channel;
    let cap = cfg.max_haps_per_backhaul;
    let haps: Vec<&Station> = scenario.stations_of(NodeKind::Hap).collect();
    let satellite = scenario.satellite();
    let parents = scenario.gateways.len() + satellite.is_some() as usize;
    if haps.len() > cap.saturating_mul(parents) {
        return Err(AssociationError::InfeasibleCap { haps: haps.len(), cap, parents });
    }

    let mut links = BTreeMap::new();

    // (hap, parent, budget, score) for every HAP/parent pair.
    let mut options: Vec<Vec<(Parent, channel::LinkBudget, f64)>> = Vec::with_capacity(haps.len());
    for hap in &haps {
        let mut opts = Vec::new();
        for gw in &scenario.gateways {
            let b = directed_budget(*hap, gw, direction, params, hap.backhaul_bandwidth_rf_hz, hap.backhaul_bandwidth_fso_hz)?;
            opts.push((Parent::Gateway(gw.id), b, b.max_rate_at_full_band.min(gw.fiber_rate_bps)));
        }
        if let Some(sat) = satellite {
            let b = directed_budget(*hap, sat, direction, params, hap.backhaul_bandwidth_rf_hz, hap.backhaul_bandwidth_fso_hz)?;
            opts.push((Parent::Station(sat.id), b, b.max_rate_at_full_band));
        }
        // Best first; ties prefer gateways, then the lowest id.
        opts.sort_by(|a, b| b.2.total_cmp(&a.2).then(parent_order(a.0).cmp(&parent_order(b.0))));
        options.push(opts);
    }
    let regret = |opts: &[(Parent, channel::LinkBudget, f64)]| match opts {
        [] => 0.0,
        [only] => only.2,
        [best, second, ..] => best.2 - second.2,
    };
    let mut order: Vec<usize> = (0..haps.len()).collect();
    order.sort_by(|&a, &b| regret(&options[b]).total_cmp(&regret(&options[a])).then(haps[a].id.cmp(&haps[b].id)));

    let mut load: BTreeMap<Parent, usize> = BTreeMap::new();
    for i in order {
        let hap = haps[i];
        let choice = options[i].iter().find(|(p, _, _)| load.get(p).copied().unwrap_or(0) < cap);
        let (parent, budget, _) = choice.expect("cap feasibility checked above");
        *load.entry(*parent).or_default() += 1;
        let parent_node: &dyn RadioNode = match parent {
            Parent::Gateway(g) => scenario.gateway(*g).expect("gateway exists"),
            Parent::Station(s) => scenario.station(*s).expect("satellite exists"),
        };
        links.insert(hap.id, link_from_budget(hap, parent_node, *parent, budget)?);
    }

    // Children per HAP, used to spread ties between capped links.
    let mut children: BTreeMap<StationId, usize> = BTreeMap::new();
    for station in &scenario.stations {
        match station.kind {
            NodeKind::TetheredBalloon => {
                if let Some((hap, b)) = best_hap(station, &haps, &children, direction, params)? {
                    *children.entry(hap.id).or_default() += 1;
                    links.insert(station.id, link_from_budget(station, hap, Parent::Station(hap.id), &b)?);
                }
            }
            NodeKind::GroundBaseStation => {
                let nearest = scenario
                    .gateways
                    .iter()
                    .map(|g| (g, g.position.horizontal_distance(&station.position)))
                    .filter(|(_, d)| *d <= cfg.gbs_fiber_radius_m)
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.id.cmp(&b.0.id)));
                if let Some((gw, _)) = nearest {
                    links.insert(
                        station.id,
                        BackhaulLink {
                            parent: Parent::Gateway(gw.id),
                            medium: None,
                            capacity_bps: f64::INFINITY,
                            alignment: None,
                        },
                    );
                } else if let Some((hap, b)) = best_hap(station, &haps, &children, direction, params)? {
                    *children.entry(hap.id).or_default() += 1;
                    links.insert(station.id, link_from_budget(station, hap, Parent::Station(hap.id), &b)?);
                }
            }
            _ => {}
        }
    }

    Ok(BackhaulAssociation { direction, links })
}

fn parent_order(p: Parent) -> (u8, u32) {
    match p {
        Parent::Gateway(g) => (0, g),
        Parent::Station(s) => (1, s),
    }
}

fn best_hap<'a>(
    station: &Station,
    haps: &[&'a Station],
    children: &BTreeMap<StationId, usize>,
    direction: Direction,
    params: &channel::ChannelParams,
) -> Result<Option<(&'a Station, channel::LinkBudget)>, ChannelError> {
    let load = |h: &Station| children.get(&h.id).copied().unwrap_or(0);
    let mut best: Option<(&Station, channel::LinkBudget)> = None;
    for hap in haps {
        let b = directed_budget(
            station,
            *hap,
            direction,
            params,
            station.backhaul_bandwidth_rf_hz,
            station.backhaul_bandwidth_fso_hz,
        )?;
        let better = match &best {
            None => true,
            Some((h, cur)) => {
                b.max_rate_at_full_band > cur.max_rate_at_full_band
                    || (b.max_rate_at_full_band == cur.max_rate_at_full_band
                        && (load(hap), hap.id) < (load(h), h.id))
            }
        };
        if better {
            best = Some((hap, b));
        }
    }
    Ok(best)
}

/// A routable access candidate with its received power at full transmit power.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub station: StationId,
    /// Received power (mW) when the transmitter uses its full peak power.
    pub rx_power_mw: f64,
    pub access_band_hz: f64,
}

/// Access candidates of every user over the routable stations.
pub(crate) struct CandidateSet {
    /// Routable stations allowed by the mode, in id order.
    pub stations: Vec<StationId>,
    /// Capacity-limited hops, referenced by index from `routes`.
    pub hop_capacity_bps: Vec<f64>,
    /// Hop indices from each station (same order as `stations`) to the core.
    pub routes: Vec<Vec<usize>>,
    /// Per user, one candidate per entry of `stations`.
    pub per_user: BTreeMap<UserId, Vec<Candidate>>,
}

/// Routable candidates for each user.
///
/// Received power uses the linear form of the RF budget,
/// `P G_tx G_rx / (L_excess (4 pi d f / c)^2)`, with the station-side factor
/// computed once per station.
pub(crate) fn routable_candidates(
    scenario: &Scenario,
    direction: Direction,
    backhaul: &BackhaulAssociation,
    alloc: &AllocationParams,
) -> Result<CandidateSet, AssociationError> {
    let params = &scenario.config.channel;
    let kinds = access_kinds(direction, scenario.config.mode);
    let free_space = (SPEED_OF_LIGHT / (4.0 * PI * params.rf_access_freq_hz)).powi(2);

    let mut serving: Vec<&Station> = scenario.stations.iter().filter(|s| kinds.contains(&s.kind)).collect();
    serving.sort_by_key(|s| s.id);

    let mut hop_index: BTreeMap<LinkId, usize> = BTreeMap::new();
    let mut set = CandidateSet { stations: Vec::new(), hop_capacity_bps: Vec::new(), routes: Vec::new(), per_user: BTreeMap::new() };
    let mut factors = Vec::new();
    let mut served: Vec<&Station> = Vec::new();
    for s in serving {
        let Some(route) = backhaul.route(scenario, s.id) else { continue };
        let class = LinkClass::between(NodeKind::User, s.kind).ok_or(ChannelError::UnknownLinkClass(NodeKind::User, s.kind))?;
        let excess = params.excess_loss_db.for_class(class);
        let station_db = match direction {
            Direction::Uplink => s.antenna_gain_rx_dbi,
            Direction::Downlink => s.peak_tx_power_dbm + s.antenna_gain_tx_dbi,
        };
        factors.push(db_to_linear(station_db - excess) * free_space);
        let hops = route
            .iter()
            .map(|h| {
                *hop_index.entry(h.link).or_insert_with(|| {
                    set.hop_capacity_bps.push(h.capacity_bps);
                    set.hop_capacity_bps.len() - 1
                })
            })
            .collect();
        set.routes.push(hops);
        set.stations.push(s.id);
        served.push(s);
    }

    for user in &scenario.users {
        let user_db = match direction {
            Direction::Uplink => user.peak_tx_power_dbm + user.antenna_gain_dbi,
            Direction::Downlink => user.antenna_gain_dbi,
        };
        let user_factor = db_to_linear(user_db);
        let mut cands = Vec::with_capacity(served.len());
        for (s, factor) in served.iter().zip(&factors) {
            let (a, b) = (user.position, s.position);
            let d2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2);
            if !(d2 > 0.0) {
                return Err(ChannelError::NonPositiveDistance(d2.sqrt()).into());
            }
            cands.push(Candidate {
                station: s.id,
                rx_power_mw: user_factor * factor / d2,
                access_band_hz: alloc.access_bandwidth.for_kind(s.kind),
            });
        }
        set.per_user.insert(user.id, cands);
    }
    Ok(set)
}

struct Estimator {
    usable: f64,
    noise_mw_per_hz: f64,
    snr_cap: f64,
    direction: Direction,
}

impl Estimator {
    fn new(scenario: &Scenario, direction: Direction, alloc: &AllocationParams) -> Self {
        Estimator {
            usable: 1.0 - alloc.control_overhead_fraction,
            noise_mw_per_hz: db_to_linear(scenario.config.channel.noise_density_dbm_hz),
            snr_cap: scenario.config.channel.snr_cap,
            direction,
        }
    }

    /// Access rate of joining `c` when `current` users already use it.
    fn access(&self, c: &Candidate, current: usize) -> f64 {
        let share = (current + 1) as f64;
        let band = self.usable * c.access_band_hz / share;
        let rx_mw = match self.direction {
            Direction::Uplink => c.rx_power_mw,
            Direction::Downlink => c.rx_power_mw / share,
        };
        let snr = rx_mw / (self.noise_mw_per_hz * band.max(1.0));
        band * (1.0 + snr.min(self.snr_cap)).log2()
    }
}

/// Equal share of every hop on `route` for one more user.
fn route_share(set: &CandidateSet, route: &[usize], hop_users: &[usize]) -> f64 {
    route.iter().map(|&h| set.hop_capacity_bps[h] / (hop_users[h] + 1) as f64).fold(f64::INFINITY, f64::min)
}

/// Largest user count each TB can serve for one slot on its stored energy.
fn tb_user_limits(scenario: &Scenario) -> BTreeMap<StationId, usize> {
    let params = &scenario.config.energy;
    let mut out = BTreeMap::new();
    for s in scenario.stations_of(NodeKind::TetheredBalloon) {
        let Some(b) = &s.battery else { continue };
        let cost = |n| tb_consumption(TbLoad::Active { users: n }, s.peak_tx_power_dbm, b.slot_duration_s, params);
        let stored = b.last_stored();
        let limit = if cost(0) > stored {
            0
        } else {
            let per_user = params.p_per_user_w * b.slot_duration_s;
            let mut n = if per_user > 0.0 { ((stored - cost(0)) / per_user).floor().min(1e9) as usize } else { usize::MAX };
            // Guard the closed form against rounding at the boundary.
            while n > 0 && cost(n) > stored {
                n -= 1;
            }
            n
        };
        out.insert(s.id, limit);
    }
    out
}

fn battery_allows(limits: &BTreeMap<StationId, usize>, station: StationId, users: usize) -> bool {
    limits.get(&station).map_or(true, |&limit| users <= limit)
}

/// Greedy bottleneck-aware access association.
///
/// Users are visited in descending order of their best single-user estimate;
/// each takes the station with the best estimated bottlenecked rate given the
/// users already attached there. Users with no routable candidate, or whose
/// best estimate falls below their QoS floor, are left unserved.
pub fn solve_access_greedy(
    scenario: &Scenario,
    direction: Direction,
    backhaul: &BackhaulAssociation,
    alloc: &AllocationParams,
) -> Result<AccessAssociation, AssociationError> {
    let set = routable_candidates(scenario, direction, backhaul, alloc)?;
    let est = Estimator::new(scenario, direction, alloc);
    let limits = tb_user_limits(scenario);
    let limit: Vec<usize> = set.stations.iter().map(|s| limits.get(s).copied().unwrap_or(usize::MAX)).collect();
    let mut station_users = vec![0usize; set.stations.len()];
    let mut hop_users = vec![0usize; set.hop_capacity_bps.len()];

    let mut order: Vec<(UserId, f64)> = set
        .per_user
        .iter()
        .map(|(&u, cands)| {
            let best = cands
                .iter()
                .zip(&set.routes)
                .map(|(c, r)| est.access(c, 0).min(route_share(&set, r, &hop_users)))
                .fold(f64::NEG_INFINITY, f64::max);
            (u, best)
        })
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut assignments = BTreeMap::new();
    for (uid, _) in order {
        let qos = scenario.user(uid).map(|u| u.qos_min_rate_bps).unwrap_or(0.0);
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in set.per_user[&uid].iter().enumerate() {
            if station_users[j] + 1 > limit[j] {
                continue;
            }
            let rate = est.access(c, station_users[j]).min(route_share(&set, &set.routes[j], &hop_users));
            // Candidates arrive in id order, so strict improvement keeps the lowest id on ties.
            if best.map_or(true, |(_, r)| rate > r) {
                best = Some((j, rate));
            }
        }
        let choice = best.filter(|&(_, r)| r >= qos).map(|(j, _)| j);
        if let Some(j) = choice {
            station_users[j] += 1;
            for &h in &set.routes[j] {
                hop_users[h] += 1;
            }
        }
        assignments.insert(uid, choice.map(|j| set.stations[j]));
    }
    Ok(AccessAssociation { direction, assignments })
}

pub const EXACT_MAX_USERS: usize = 10;
pub const EXACT_MAX_STATIONS: usize = 6;

/// Exhaustive access association: the assignment (unserved allowed) with the
/// highest allocation utility. Ties go to the lexicographically smallest
/// assignment vector over users in id order, with stations ordered by id and
/// "unserved" ranked after every station.
pub fn solve_access_exact(
    scenario: &Scenario,
    direction: Direction,
    backhaul: &BackhaulAssociation,
    alloc: &AllocationParams,
) -> Result<AccessAssociation, AssociationError> {
    let kinds = access_kinds(direction, scenario.config.mode);
    let stations = scenario.stations.iter().filter(|s| kinds.contains(&s.kind)).count();
    if scenario.users.len() > EXACT_MAX_USERS || stations > EXACT_MAX_STATIONS {
        return Err(AssociationError::InstanceTooLarge {
            users: scenario.users.len(),
            stations,
            max_users: EXACT_MAX_USERS,
            max_stations: EXACT_MAX_STATIONS,
        });
    }
    let set = routable_candidates(scenario, direction, backhaul, alloc)?;
    let limits = tb_user_limits(scenario);
    let users: Vec<UserId> = set.per_user.keys().copied().collect();
    // Option lists per user: candidate stations by id, then unserved.
    let options: Vec<Vec<Option<StationId>>> = users
        .iter()
        .map(|u| {
            set.per_user[u].iter().map(|c| c.station).map(Some).chain(std::iter::once(None)).collect()
        })
        .collect();

    let mut digits = vec![0usize; users.len()];
    let mut best: Option<(f64, AccessAssociation)> = None;
    loop {
        let assignments: BTreeMap<UserId, Option<StationId>> =
            users.iter().zip(&digits).map(|(&u, &d)| (u, options_at(&options, u, &users, d))).collect();
        let plan = AccessAssociation { direction, assignments };
        if tb_loads_fundable(&limits, &plan) {
            let value = allocation::allocate(scenario, direction, &plan, backhaul, alloc)?.utility_value;
            // Enumeration runs in lexicographic order, so only strict gains replace.
            if best.as_ref().map_or(true, |(v, _)| value > *v) {
                best = Some((value, plan));
            }
        }
        // Odometer increment, last user fastest.
        let mut i = users.len();
        loop {
            if i == 0 {
                let (_, plan) = best.unwrap_or((0.0, all_unserved(direction, &users)));
                return Ok(plan);
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < options[i].len() {
                break;
            }
            digits[i] = 0;
        }
    }
}

fn options_at(options: &[Vec<Option<StationId>>], user: UserId, users: &[UserId], digit: usize) -> Option<StationId> {
    let idx = users.iter().position(|&u| u == user).expect("user index");
    options[idx][digit]
}

fn all_unserved(direction: Direction, users: &[UserId]) -> AccessAssociation {
    AccessAssociation { direction, assignments: users.iter().map(|&u| (u, None)).collect() }
}

fn tb_loads_fundable(limits: &BTreeMap<StationId, usize>, plan: &AccessAssociation) -> bool {
    let mut counts: BTreeMap<StationId, usize> = BTreeMap::new();
    for s in plan.assignments.values().flatten() {
        *counts.entry(*s).or_default() += 1;
    }
    counts.iter().all(|(&s, &n)| battery_allows(limits, s, n))
}

/// Broken association invariants, as human-readable messages.
pub fn verify_access(scenario: &Scenario, access: &AccessAssociation, mode: Mode) -> Vec<String> {
    let mut out = Vec::new();
    let kinds = access_kinds(access.direction, mode);
    let known: BTreeSet<UserId> = scenario.users.iter().map(|u| u.id).collect();
    for (&u, &s) in &access.assignments {
        if !known.contains(&u) {
            out.push(format!("user {u}: not in scenario"));
        }
        if let Some(sid) = s {
            match scenario.station(sid) {
                None => out.push(format!("user {u}: unknown station {sid}")),
                Some(st) if !kinds.contains(&st.kind) => {
                    out.push(format!("user {u}: {} {sid} not allowed for {} in {mode}", st.kind, access.direction))
                }
                _ => {}
            }
        }
    }
    out
}

pub fn verify_backhaul(scenario: &Scenario, backhaul: &BackhaulAssociation) -> Vec<String> {
    let mut out = Vec::new();
    let cap = scenario.config.max_haps_per_backhaul;
    let mut per_parent: BTreeMap<Parent, usize> = BTreeMap::new();
    for hap in scenario.stations_of(NodeKind::Hap) {
        match backhaul.links.get(&hap.id) {
            None => out.push(format!("hap {}: no back-haul parent", hap.id)),
            Some(link) => {
                let ok = match link.parent {
                    Parent::Gateway(g) => scenario.gateway(g).is_some(),
                    Parent::Station(s) => scenario.station(s).is_some_and(|p| p.kind == NodeKind::Satellite),
                };
                if !ok {
                    out.push(format!("hap {}: parent {} is not a gateway or the satellite", hap.id, link.parent));
                }
                *per_parent.entry(link.parent).or_default() += 1;
            }
        }
    }
    for (p, n) in per_parent {
        if n > cap {
            out.push(format!("{p}: {n} HAPs exceed cap {cap}"));
        }
    }
    for (&sid, link) in &backhaul.links {
        let Some(st) = scenario.station(sid) else {
            out.push(format!("station {sid}: not in scenario"));
            continue;
        };
        let parent_kind = match link.parent {
            Parent::Station(p) => scenario.station(p).map(|s| s.kind),
            Parent::Gateway(_) => Some(NodeKind::Gateway),
        };
        let ok = match st.kind {
            NodeKind::TetheredBalloon => parent_kind == Some(NodeKind::Hap),
            NodeKind::GroundBaseStation => matches!(parent_kind, Some(NodeKind::Hap | NodeKind::Gateway)),
            NodeKind::Hap => true,
            _ => false,
        };
        if !ok {
            out.push(format!("{} {sid}: invalid parent {}", st.kind, link.parent));
        }
        if link.medium == Some(Medium::Fso) && link.alignment.is_none() {
            out.push(format!("{} {sid}: FSO link without alignment", st.kind));
        }
        if backhaul.route(scenario, sid).is_none() {
            out.push(format!("{} {sid}: chain does not terminate at the core", st.kind));
        }
    }
    out
}
