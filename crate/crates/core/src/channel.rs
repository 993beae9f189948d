//! RF and FSO link budgets.
//!
//! RF links use free-space pathloss plus a fixed excess loss per link class;
//! FSO links combine geometric beam spreading, Gaussian pointing loss and a
//! single clear-air attenuation coefficient. Both feed a capped Shannon rate.
//! Every function here is pure.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{Gateway, GroundUser, NodeKind, Position, Station};
use crate::units::{db_to_linear, dbm_to_mw, linear_to_db, mw_to_dbm, SPEED_OF_LIGHT};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("frequency must be positive, got {0} Hz")]
    NonPositiveFrequency(f64),
    #[error("negative input to rate computation")]
    NegativeInput,
    #[error("FSO geometry inputs must be positive")]
    NonPositiveInput,
    #[error("FSO divergence must be positive, got {0} rad")]
    NonPositiveDivergence(f64),
    #[error("no link class connects {0} and {1}")]
    UnknownLinkClass(NodeKind, NodeKind),
    #[error("{0} or {1} has no FSO transceiver")]
    NoFsoCapability(NodeKind, NodeKind),
    #[error("transmitter and receiver positions coincide")]
    CoincidentPositions,
    #[error("FSO is not allowed on access link {0} <-> {1}")]
    AccessPairNotAllowed(NodeKind, NodeKind),
}

/// Pairs of node kinds that can form a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkClass {
    UserGbs,
    UserTb,
    UserHap,
    UserSatellite,
    /// GBS or TB to HAP back-haul.
    StationHap,
    HapGateway,
    HapSatellite,
}

impl LinkClass {
    pub fn between(a: NodeKind, b: NodeKind) -> Option<LinkClass> {
        use NodeKind::*;
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        match (a, b) {
            (GroundBaseStation, User) => Some(LinkClass::UserGbs),
            (TetheredBalloon, User) => Some(LinkClass::UserTb),
            (Hap, User) => Some(LinkClass::UserHap),
            (Satellite, User) => Some(LinkClass::UserSatellite),
            (Hap, TetheredBalloon) | (Hap, GroundBaseStation) => Some(LinkClass::StationHap),
            (Hap, Gateway) => Some(LinkClass::HapGateway),
            (Satellite, Hap) => Some(LinkClass::HapSatellite),
            _ => None,
        }
    }

    pub fn is_access(self) -> bool {
        matches!(self, LinkClass::UserGbs | LinkClass::UserTb | LinkClass::UserHap | LinkClass::UserSatellite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcessLoss {
    pub user_gbs_db: f64,
    pub user_tb_db: f64,
    pub user_hap_db: f64,
    pub user_satellite_db: f64,
    pub station_hap_db: f64,
    pub hap_gateway_db: f64,
    pub hap_satellite_db: f64,
}

impl Default for ExcessLoss {
    fn default() -> Self {
        Self {
            user_gbs_db: 20.0,
            user_tb_db: 10.0,
            user_hap_db: 5.0,
            user_satellite_db: 2.0,
            station_hap_db: 0.0,
            hap_gateway_db: 0.0,
            hap_satellite_db: 0.0,
        }
    }
}

impl ExcessLoss {
    pub fn for_class(&self, class: LinkClass) -> f64 {
        match class {
            LinkClass::UserGbs => self.user_gbs_db,
            LinkClass::UserTb => self.user_tb_db,
            LinkClass::UserHap => self.user_hap_db,
            LinkClass::UserSatellite => self.user_satellite_db,
            LinkClass::StationHap => self.station_hap_db,
            LinkClass::HapGateway => self.hap_gateway_db,
            LinkClass::HapSatellite => self.hap_satellite_db,
        }
    }

    fn all(&self) -> [f64; 7] {
        [
            self.user_gbs_db,
            self.user_tb_db,
            self.user_hap_db,
            self.user_satellite_db,
            self.station_hap_db,
            self.hap_gateway_db,
            self.hap_satellite_db,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub rf_access_freq_hz: f64,
    pub rf_backhaul_freq_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub excess_loss_db: ExcessLoss,
    pub fso_wavelength_m: f64,
    pub fso_divergence_rad: f64,
    pub fso_rx_aperture_m: f64,
    pub fso_atm_attenuation_db_per_km: f64,
    pub fso_optics_efficiency: f64,
    pub fso_tx_power_dbm: f64,
    /// SNR produced by 1 mW of received optical power.
    pub fso_rx_sensitivity_snr_ref: f64,
    pub snr_cap: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            rf_access_freq_hz: 2e9,
            rf_backhaul_freq_hz: 6e9,
            noise_density_dbm_hz: -174.0,
            excess_loss_db: ExcessLoss::default(),
            fso_wavelength_m: 1550e-9,
            fso_divergence_rad: 1e-3,
            fso_rx_aperture_m: 0.1,
            fso_atm_attenuation_db_per_km: 0.43,
            fso_optics_efficiency: 0.8,
            fso_tx_power_dbm: 30.0,
            fso_rx_sensitivity_snr_ref: 1e7,
            snr_cap: 1e6,
        }
    }
}

impl ChannelParams {
    pub fn check(&self) -> Result<(), String> {
        if self.excess_loss_db.all().iter().any(|l| !(*l >= 0.0)) {
            return Err("excess losses must be >= 0".into());
        }
        if !(self.fso_atm_attenuation_db_per_km >= 0.0) {
            return Err("fso_atm_attenuation_db_per_km must be >= 0".into());
        }
        if !(self.fso_optics_efficiency > 0.0 && self.fso_optics_efficiency <= 1.0) {
            return Err("fso_optics_efficiency must lie in (0, 1]".into());
        }
        if !(self.fso_divergence_rad > 0.0 && self.fso_rx_aperture_m > 0.0) {
            return Err("fso_divergence_rad and fso_rx_aperture_m must be > 0".into());
        }
        if !(self.rf_access_freq_hz > 0.0 && self.rf_backhaul_freq_hz > 0.0) {
            return Err("RF frequencies must be > 0".into());
        }
        if !(self.snr_cap > 0.0) {
            return Err("snr_cap must be > 0".into());
        }
        Ok(())
    }
}

/// Anything that can sit at either end of a link.
pub trait RadioNode {
    fn kind(&self) -> NodeKind;
    fn position(&self) -> Position;
    fn tx_gain_dbi(&self) -> f64;
    fn rx_gain_dbi(&self) -> f64;
    fn has_fso(&self) -> bool;
    fn tx_power_dbm(&self) -> f64;
}

impl RadioNode for Station {
    fn kind(&self) -> NodeKind {
        self.kind
    }
    fn position(&self) -> Position {
        self.position
    }
    fn tx_gain_dbi(&self) -> f64 {
        self.antenna_gain_tx_dbi
    }
    fn rx_gain_dbi(&self) -> f64 {
        self.antenna_gain_rx_dbi
    }
    fn has_fso(&self) -> bool {
        self.has_fso
    }
    fn tx_power_dbm(&self) -> f64 {
        self.peak_tx_power_dbm
    }
}

impl RadioNode for GroundUser {
    fn kind(&self) -> NodeKind {
        NodeKind::User
    }
    fn position(&self) -> Position {
        self.position
    }
    fn tx_gain_dbi(&self) -> f64 {
        self.antenna_gain_dbi
    }
    fn rx_gain_dbi(&self) -> f64 {
        self.antenna_gain_dbi
    }
    fn has_fso(&self) -> bool {
        false
    }
    fn tx_power_dbm(&self) -> f64 {
        self.peak_tx_power_dbm
    }
}

impl RadioNode for Gateway {
    fn kind(&self) -> NodeKind {
        NodeKind::Gateway
    }
    fn position(&self) -> Position {
        self.position
    }
    fn tx_gain_dbi(&self) -> f64 {
        self.antenna_gain_dbi
    }
    fn rx_gain_dbi(&self) -> f64 {
        self.antenna_gain_dbi
    }
    fn has_fso(&self) -> bool {
        self.has_fso
    }
    fn tx_power_dbm(&self) -> f64 {
        self.tx_power_dbm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Medium {
    Rf,
    Fso,
}

impl fmt::Display for Medium {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Medium::Rf => "rf",
            Medium::Fso => "fso",
        })
    }
}

/// Derived record for one directed link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkBudget {
    pub distance_m: f64,
    pub medium: Medium,
    pub bandwidth_hz: f64,
    /// Total propagation loss; for FSO the combined optical loss in dB.
    pub pathloss_db: f64,
    pub rx_power_dbm: f64,
    pub snr: f64,
    pub rate_per_hz: f64,
    pub max_rate_at_full_band: f64,
}

impl LinkBudget {
    pub const CSV_HEADER: &'static str =
        "distance_m,medium,bandwidth_hz,pathloss_db,rx_power_dbm,snr,rate_per_hz,max_rate_bps";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.distance_m,
            self.medium,
            self.bandwidth_hz,
            self.pathloss_db,
            self.rx_power_dbm,
            self.snr,
            self.rate_per_hz,
            self.max_rate_at_full_band
        )
    }
}

/// Free-space pathloss plus `excess_db`.
pub fn rf_pathloss_db(distance_m: f64, frequency_hz: f64, excess_db: f64) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance_m));
    }
    if !(frequency_hz > 0.0) {
        return Err(ChannelError::NonPositiveFrequency(frequency_hz));
    }
    Ok(20.0 * (4.0 * PI * distance_m * frequency_hz / SPEED_OF_LIGHT).log10() + excess_db)
}

#[inline]
fn spectral_efficiency(snr: f64, snr_cap: f64) -> f64 {
    (1.0 + snr.min(snr_cap)).log2()
}

pub fn shannon_rate(bandwidth_hz: f64, snr: f64, snr_cap: f64) -> Result<f64, ChannelError> {
    if !(bandwidth_hz >= 0.0) || !(snr >= 0.0) {
        return Err(ChannelError::NegativeInput);
    }
    Ok(bandwidth_hz * spectral_efficiency(snr, snr_cap))
}

fn link_class(tx: NodeKind, rx: NodeKind) -> Result<LinkClass, ChannelError> {
    LinkClass::between(tx, rx).ok_or(ChannelError::UnknownLinkClass(tx, rx))
}

/// RF budget for `tx -> rx` at `tx_power_dbm` over `bandwidth_hz`.
///
/// Access classes use the access carrier, back-haul classes the back-haul
/// carrier. A zero bandwidth yields a zero rate with the SNR evaluated over a
/// 1 Hz reference band.
pub fn rf_link_budget<T, R>(
    tx: &T,
    rx: &R,
    tx_power_dbm: f64,
    bandwidth_hz: f64,
    params: &ChannelParams,
) -> Result<LinkBudget, ChannelError>
where
    T: RadioNode + ?Sized,
    R: RadioNode + ?Sized,
{
    let class = link_class(tx.kind(), rx.kind())?;
    let distance = tx.position().distance(&rx.position());
    let freq = if class.is_access() { params.rf_access_freq_hz } else { params.rf_backhaul_freq_hz };
    let pathloss = rf_pathloss_db(distance, freq, params.excess_loss_db.for_class(class))?;
    let rx_power = tx_power_dbm + tx.tx_gain_dbi() + rx.rx_gain_dbi() - pathloss;
    let noise_dbm = params.noise_density_dbm_hz + linear_to_db(bandwidth_hz.max(1.0));
    let snr = db_to_linear(rx_power - noise_dbm);
    let rate_per_hz = spectral_efficiency(snr, params.snr_cap);
    Ok(LinkBudget {
        distance_m: distance,
        medium: Medium::Rf,
        bandwidth_hz,
        pathloss_db: pathloss,
        rx_power_dbm: rx_power,
        snr,
        rate_per_hz,
        max_rate_at_full_band: bandwidth_hz.max(0.0) * rate_per_hz,
    })
}

/// Fraction of the transmitted beam captured by the receive aperture.
pub fn fso_geometric_loss(divergence_rad: f64, distance_m: f64, rx_aperture_m: f64) -> Result<f64, ChannelError> {
    if !(divergence_rad > 0.0 && distance_m > 0.0 && rx_aperture_m > 0.0) {
        return Err(ChannelError::NonPositiveInput);
    }
    Ok((rx_aperture_m / (divergence_rad * distance_m)).powi(2).min(1.0))
}

/// Gaussian-beam pointing loss for an angular misalignment.
pub fn fso_pointing_loss(misalignment_rad: f64, divergence_rad: f64) -> Result<f64, ChannelError> {
    if !(divergence_rad > 0.0) {
        return Err(ChannelError::NonPositiveDivergence(divergence_rad));
    }
    let ratio = misalignment_rad.abs() / divergence_rad;
    Ok((-2.0 * ratio * ratio).exp())
}

fn fso_budget_between(
    tx_pos: Position,
    rx_pos: Position,
    misalignment_rad: f64,
    bandwidth_hz: f64,
    params: &ChannelParams,
) -> Result<LinkBudget, ChannelError> {
    let distance = tx_pos.distance(&rx_pos);
    if !(distance > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance));
    }
    let geometric = fso_geometric_loss(params.fso_divergence_rad, distance, params.fso_rx_aperture_m)?;
    let pointing = fso_pointing_loss(misalignment_rad, params.fso_divergence_rad)?;
    let atmospheric = db_to_linear(-params.fso_atm_attenuation_db_per_km * distance / 1_000.0);
    let fraction = params.fso_optics_efficiency * geometric * pointing * atmospheric;
    let rx_mw = dbm_to_mw(params.fso_tx_power_dbm) * fraction;
    let snr = params.fso_rx_sensitivity_snr_ref * rx_mw;
    let rate_per_hz = spectral_efficiency(snr, params.snr_cap);
    Ok(LinkBudget {
        distance_m: distance,
        medium: Medium::Fso,
        bandwidth_hz,
        pathloss_db: -linear_to_db(fraction),
        rx_power_dbm: mw_to_dbm(rx_mw),
        snr,
        rate_per_hz,
        max_rate_at_full_band: bandwidth_hz.max(0.0) * rate_per_hz,
    })
}

/// FSO budget for `tx -> rx` with the given pointing error.
pub fn fso_link_budget<T, R>(
    tx: &T,
    rx: &R,
    misalignment_rad: f64,
    bandwidth_hz: f64,
    params: &ChannelParams,
) -> Result<LinkBudget, ChannelError>
where
    T: RadioNode + ?Sized,
    R: RadioNode + ?Sized,
{
    if !(tx.has_fso() && rx.has_fso()) {
        return Err(ChannelError::NoFsoCapability(tx.kind(), rx.kind()));
    }
    fso_budget_between(tx.position(), rx.position(), misalignment_rad, bandwidth_hz, params)
}

/// Boresight direction: azimuth measured from +x (east) toward +y, elevation above horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
}

impl Alignment {
    fn unit_vector(&self) -> [f64; 3] {
        let (se, ce) = self.elevation_rad.sin_cos();
        let (sa, ca) = self.azimuth_rad.sin_cos();
        [ce * ca, ce * sa, se]
    }
}

/// Line-of-sight pointing angles from `tx` toward `rx`. Vertical links report azimuth 0.
pub fn optimal_alignment(tx: Position, rx: Position) -> Result<Alignment, ChannelError> {
    let (dx, dy, dz) = (rx.x - tx.x, rx.y - tx.y, rx.z - tx.z);
    let horizontal = dx.hypot(dy);
    if horizontal == 0.0 && dz == 0.0 {
        return Err(ChannelError::CoincidentPositions);
    }
    let azimuth = if horizontal == 0.0 { 0.0 } else { dy.atan2(dx) };
    Ok(Alignment { azimuth_rad: azimuth, elevation_rad: dz.atan2(horizontal) })
}

/// Angle between the pointing direction and the true line of sight.
pub fn misalignment(tx: Position, rx: Position, pointing: &Alignment) -> Result<f64, ChannelError> {
    let los = [rx.x - tx.x, rx.y - tx.y, rx.z - tx.z];
    let norm = (los[0] * los[0] + los[1] * los[1] + los[2] * los[2]).sqrt();
    if norm == 0.0 {
        return Err(ChannelError::CoincidentPositions);
    }
    let los = [los[0] / norm, los[1] / norm, los[2] / norm];
    let p = pointing.unit_vector();
    let cross = [
        p[1] * los[2] - p[2] * los[1],
        p[2] * los[0] - p[0] * los[2],
        p[0] * los[1] - p[1] * los[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let cos = p[0] * los[0] + p[1] * los[1] + p[2] * los[2];
    Ok(sin.atan2(cos))
}

/// The better of the RF and (if both ends carry FSO) the aligned FSO budget for
/// a back-haul pair; ties go to FSO. RF uses the transmitter's peak power.
pub fn best_medium<T, R>(
    tx: &T,
    rx: &R,
    params: &ChannelParams,
    rf_bandwidth_hz: f64,
    fso_bandwidth_hz: f64,
) -> Result<LinkBudget, ChannelError>
where
    T: RadioNode + ?Sized,
    R: RadioNode + ?Sized,
{
    let class = link_class(tx.kind(), rx.kind())?;
    if class.is_access() {
        return Err(ChannelError::AccessPairNotAllowed(tx.kind(), rx.kind()));
    }
    let rf = rf_link_budget(tx, rx, tx.tx_power_dbm(), rf_bandwidth_hz, params)?;
    if !(tx.has_fso() && rx.has_fso()) {
        return Ok(rf);
    }
    let pointing = optimal_alignment(tx.position(), rx.position())?;
    let error = misalignment(tx.position(), rx.position(), &pointing)?;
    let fso = fso_link_budget(tx, rx, error, fso_bandwidth_hz, params)?;
    Ok(if fso.max_rate_at_full_band >= rf.max_rate_at_full_band { fso } else { rf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn station(kind: NodeKind, pos: Position, power: f64, gain: f64, fso: bool) -> Station {
        Station {
            id: 0,
            kind,
            position: pos,
            peak_tx_power_dbm: power,
            antenna_gain_tx_dbi: gain,
            antenna_gain_rx_dbi: gain,
            has_fso: fso,
            battery: None,
            backhaul_bandwidth_rf_hz: 20e6,
            backhaul_bandwidth_fso_hz: 2e9,
        }
    }

    fn user(pos: Position) -> GroundUser {
        GroundUser { id: 0, position: pos, qos_min_rate_bps: 0.0, peak_tx_power_dbm: 20.0, antenna_gain_dbi: 0.0 }
    }

    fn gateway(pos: Position) -> Gateway {
        Gateway { id: 0, position: pos, has_fso: true, fiber_rate_bps: 1e10, antenna_gain_dbi: 30.0, tx_power_dbm: 40.0 }
    }

    #[test]
    fn pathloss_reference_values() {
        // Frozen from an independent closed-form calculator.
        assert!((rf_pathloss_db(1_000.0, 2e9, 0.0).unwrap() - 98.468383135163).abs() < 1e-9);
        assert!((rf_pathloss_db(20_000.0, 2e9, 0.0).unwrap() - 124.48898304844262).abs() < 1e-9);
        assert!((rf_pathloss_db(1_000.0, 2e9, 0.0).unwrap() - 98.47).abs() < 0.01);
        assert!((rf_pathloss_db(20_000.0, 2e9, 0.0).unwrap() - 124.49).abs() < 0.01);
    }

    #[test]
    fn pathloss_inverse_square() {
        for d in [1.0, 37.0, 1_000.0, 123_456.0] {
            let step = rf_pathloss_db(2.0 * d, 6e9, 3.0).unwrap() - rf_pathloss_db(d, 6e9, 3.0).unwrap();
            assert!((step - 6.0206).abs() < 1e-4);
            assert!((step - 20.0 * 2f64.log10()).abs() < 1e-9);
        }
    }

    #[test]
    fn pathloss_rejects_bad_input() {
        assert_eq!(rf_pathloss_db(0.0, 2e9, 0.0), Err(ChannelError::NonPositiveDistance(0.0)));
        assert_eq!(rf_pathloss_db(10.0, -1.0, 0.0), Err(ChannelError::NonPositiveFrequency(-1.0)));
    }

    #[test]
    fn shannon_examples() {
        assert_eq!(shannon_rate(1e6, 1.0, f64::INFINITY).unwrap(), 1e6);
        assert_eq!(shannon_rate(7e6, 0.0, 1e6).unwrap(), 0.0);
        assert_eq!(shannon_rate(10e6, 15.0, f64::INFINITY).unwrap(), 40e6);
        assert_eq!(shannon_rate(-1.0, 1.0, 1e6), Err(ChannelError::NegativeInput));
        assert_eq!(shannon_rate(1.0, -1.0, 1e6), Err(ChannelError::NegativeInput));
        assert_eq!(shannon_rate(1.0, 1e9, 15.0).unwrap(), 4.0);
    }

    #[test]
    fn tb_snr_gap_over_satellite() {
        let p = ChannelParams::default();
        let u = user(Position::ground(0.0, 0.0));
        let sat = station(NodeKind::Satellite, Position::new(0.0, 0.0, 500e3), 40.0, 40.0, true);
        let tb = station(NodeKind::TetheredBalloon, Position::new(1_000.0, 0.0, 1_000.0), 30.0, 10.0, false);
        let to_sat = rf_link_budget(&u, &sat, 20.0, 1e6, &p).unwrap();
        let to_tb = rf_link_budget(&u, &tb, 20.0, 1e6, &p).unwrap();
        let gap = linear_to_db(to_tb.snr) - linear_to_db(to_sat.snr);
        // 20 log10(500 km / sqrt(2) km) + (2 - 10) dB excess + (10 - 40) dB gains.
        let expect = 20.0 * (500.0 / 2f64.sqrt()).log10() - 8.0 - 30.0;
        assert!((gap - expect).abs() < 1e-9, "gap {gap} dB");
        assert!(gap > 12.9);
    }

    #[test]
    fn zero_bandwidth_uses_one_hz_reference() {
        let p = ChannelParams::default();
        let u = user(Position::ground(0.0, 0.0));
        let tb = station(NodeKind::TetheredBalloon, Position::new(0.0, 0.0, 1_000.0), 30.0, 10.0, false);
        let zero = rf_link_budget(&u, &tb, 20.0, 0.0, &p).unwrap();
        let one = rf_link_budget(&u, &tb, 20.0, 1.0, &p).unwrap();
        assert_eq!(zero.max_rate_at_full_band, 0.0);
        assert_eq!(zero.snr, one.snr);
    }

    #[test]
    fn doubling_distance_costs_6_db_snr() {
        let p = ChannelParams::default();
        let u = user(Position::ground(0.0, 0.0));
        let near = station(NodeKind::Hap, Position::new(0.0, 0.0, 20_000.0), 40.0, 20.0, true);
        let far = station(NodeKind::Hap, Position::new(0.0, 0.0, 40_000.0), 40.0, 20.0, true);
        let a = rf_link_budget(&u, &near, 20.0, 1e6, &p).unwrap();
        let b = rf_link_budget(&u, &far, 20.0, 1e6, &p).unwrap();
        assert!((linear_to_db(a.snr) - linear_to_db(b.snr) - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn unknown_link_class() {
        let p = ChannelParams::default();
        let u = user(Position::ground(0.0, 0.0));
        let g = gateway(Position::ground(10.0, 0.0));
        assert_eq!(
            rf_link_budget(&u, &g, 20.0, 1e6, &p).unwrap_err(),
            ChannelError::UnknownLinkClass(NodeKind::User, NodeKind::Gateway)
        );
    }

    #[test]
    fn geometric_loss_examples() {
        assert_eq!(fso_geometric_loss(1e-3, 1e-6, 0.1).unwrap(), 1.0);
        assert!((fso_geometric_loss(1e-3, 1_000.0, 0.1).unwrap() - 0.01).abs() < 1e-15);
        assert!((fso_geometric_loss(1e-3, 10_000.0, 0.1).unwrap() - 1e-4).abs() < 1e-17);
        assert_eq!(fso_geometric_loss(0.0, 1.0, 0.1), Err(ChannelError::NonPositiveInput));
    }

    #[test]
    fn pointing_loss_examples() {
        assert_eq!(fso_pointing_loss(0.0, 1e-3).unwrap(), 1.0);
        assert!((fso_pointing_loss(1e-3, 1e-3).unwrap() - 0.1353352832366127).abs() < 1e-15);
        assert_eq!(fso_pointing_loss(1e-3, 0.0), Err(ChannelError::NonPositiveDivergence(0.0)));
    }

    #[test]
    fn fso_cap_binds_at_short_range() {
        let p = ChannelParams::default();
        let a = station(NodeKind::Hap, Position::new(0.0, 0.0, 20_000.0), 40.0, 20.0, true);
        let g = gateway(Position::new(0.0, 0.0, 19_999.0));
        let b = fso_link_budget(&a, &g, 0.0, 1e9, &p).unwrap();
        assert_eq!(b.max_rate_at_full_band, 1e9 * (1.0 + p.snr_cap).log2());
    }

    #[test]
    fn misaligned_fso_is_slower() {
        let p = ChannelParams::default();
        let a = station(NodeKind::Hap, Position::new(0.0, 0.0, 20_000.0), 40.0, 20.0, true);
        let g = gateway(Position::ground(30_000.0, 0.0));
        let aligned = fso_link_budget(&a, &g, 0.0, 1e9, &p).unwrap();
        let off = fso_link_budget(&a, &g, p.fso_divergence_rad, 1e9, &p).unwrap();
        assert!(off.max_rate_at_full_band < aligned.max_rate_at_full_band);
    }

    #[test]
    fn fso_requires_capability() {
        let p = ChannelParams::default();
        let a = station(NodeKind::Hap, Position::new(0.0, 0.0, 20_000.0), 40.0, 20.0, true);
        let tb = station(NodeKind::TetheredBalloon, Position::new(0.0, 0.0, 1_000.0), 30.0, 10.0, false);
        assert!(matches!(fso_link_budget(&tb, &a, 0.0, 1e9, &p), Err(ChannelError::NoFsoCapability(..))));
    }

    #[test]
    fn hap_gateway_fso_beats_rf_tenfold() {
        let p = ChannelParams::default();
        let hap = station(NodeKind::Hap, Position::new(0.0, 0.0, 20_000.0), 40.0, 20.0, true);
        let g = gateway(Position::ground(20_000.0, 0.0));
        let fso = fso_link_budget(&hap, &g, 0.0, hap.backhaul_bandwidth_fso_hz, &p).unwrap();
        let rf = rf_link_budget(&hap, &g, hap.peak_tx_power_dbm, hap.backhaul_bandwidth_rf_hz, &p).unwrap();
        assert!(fso.max_rate_at_full_band >= 10.0 * rf.max_rate_at_full_band);
    }

    #[test]
    fn alignment_conventions() {
        let up = optimal_alignment(Position::ground(0.0, 0.0), Position::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(up, Alignment { azimuth_rad: 0.0, elevation_rad: PI / 2.0 });
        let east = optimal_alignment(Position::new(0.0, 0.0, 3.0), Position::new(8.0, 0.0, 3.0)).unwrap();
        assert_eq!(east, Alignment { azimuth_rad: 0.0, elevation_rad: 0.0 });
        let p = Position::new(1.0, 2.0, 3.0);
        assert_eq!(optimal_alignment(p, p), Err(ChannelError::CoincidentPositions));
    }

    #[test]
    fn best_medium_choices() {
        let p = ChannelParams::default();
        let hap = station(NodeKind::Hap, Position::new(0.0, 0.0, 20_000.0), 40.0, 20.0, true);
        let g = gateway(Position::ground(20_000.0, 0.0));
        assert_eq!(best_medium(&hap, &g, &p, 20e6, 2e9).unwrap().medium, Medium::Fso);

        let tb = station(NodeKind::TetheredBalloon, Position::new(0.0, 0.0, 1_000.0), 30.0, 10.0, false);
        assert_eq!(best_medium(&tb, &hap, &p, 20e6, 2e9).unwrap().medium, Medium::Rf);

        let fog = ChannelParams { fso_atm_attenuation_db_per_km: 100.0, ..p };
        assert_eq!(best_medium(&hap, &g, &fog, 20e6, 2e9).unwrap().medium, Medium::Rf);

        let u = user(Position::ground(0.0, 0.0));
        assert!(matches!(best_medium(&u, &hap, &p, 20e6, 2e9), Err(ChannelError::AccessPairNotAllowed(..))));
    }

    #[test]
    fn best_medium_is_max_of_both() {
        let p = ChannelParams::default();
        for d in [1e3, 2e4, 8e4, 2e5] {
            let hap = station(NodeKind::Hap, Position::new(0.0, 0.0, 20_000.0), 40.0, 20.0, true);
            let g = gateway(Position::ground(d, 0.0));
            let best = best_medium(&hap, &g, &p, 20e6, 2e9).unwrap();
            let rf = rf_link_budget(&hap, &g, 40.0, 20e6, &p).unwrap().max_rate_at_full_band;
            let fso = fso_link_budget(&hap, &g, 0.0, 2e9, &p).unwrap().max_rate_at_full_band;
            assert_eq!(best.max_rate_at_full_band, rf.max(fso));
        }
    }

    proptest! {
        #[test]
        fn pathloss_increasing(d in 1.0f64..1e6, f in 1e8f64..1e11, k in 1.0001f64..10.0) {
            let base = rf_pathloss_db(d, f, 0.0).unwrap();
            prop_assert!(rf_pathloss_db(d * k, f, 0.0).unwrap() > base);
            prop_assert!(rf_pathloss_db(d, f * k, 0.0).unwrap() > base);
        }

        #[test]
        fn shannon_linear_in_bandwidth(b in 0.0f64..1e9, snr in 0.0f64..1e7, k in 0.0f64..100.0) {
            let r = shannon_rate(b, snr, 1e6).unwrap();
            let rk = shannon_rate(b * k, snr, 1e6).unwrap();
            prop_assert!((rk - k * r).abs() <= 1e-9 * rk.max(1.0));
            prop_assert!(shannon_rate(b, snr * 1.5 + 1e-9, 1e6).unwrap() >= r);
        }

        #[test]
        fn pointing_loss_range(a in 0.0f64..4.0, b in 0.0f64..4.0, div in 1e-5f64..1e-2) {
            let (m, m2) = (a.min(b) * div, a.max(b) * div);
            let l = fso_pointing_loss(m, div).unwrap();
            prop_assert!(l > 0.0 && l <= 1.0);
            if m == 0.0 {
                prop_assert_eq!(l, 1.0);
            }
            if m2 > m + 1e-6 * div {
                prop_assert!(fso_pointing_loss(m2, div).unwrap() < l);
            }
        }
    }
}
