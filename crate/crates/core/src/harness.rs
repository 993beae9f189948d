//! End-to-end pipeline and parameter sweeps.
//!
//! A point runs back-haul association, optional placement, greedy access
//! association and allocation. A sweep repeats points over modes, back-haul
//! bandwidth cases, swept power values and seeded replications, then averages
//! the per-replication metrics.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{allocate, AllocationResult};
use crate::association::{solve_access_greedy, solve_backhaul, AccessAssociation, BackhaulAssociation, Direction};
use crate::placement::{shrink_and_realign, PlacementParams};
use crate::scenario::{build_scenario, Mode, NodeKind, Scenario, ScenarioConfig, StationId};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid sweep spec: {0}")]
    InvalidSpec(String),
    #[error("nothing to write: the sweep result is empty")]
    EmptyResult,
    #[error("sweep point failed (mode {mode}, backhaul {backhaul_hz} Hz, value {value} dBm, replication {replication}): {source}")]
    Point {
        mode: Mode,
        backhaul_hz: f64,
        value: f64,
        replication: usize,
        #[source]
        source: Box<crate::Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-point adjustments applied on top of a built scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub user_tx_power_dbm: Option<f64>,
    pub hap_peak_power_dbm: Option<f64>,
    /// Replaces both the RF and the FSO back-haul bandwidth of every station.
    pub backhaul_bandwidth_hz: Option<f64>,
    /// Run placement before the final association.
    pub placement: Option<PlacementParams>,
}

pub fn apply_overrides(scenario: &mut Scenario, overrides: &Overrides) {
    if let Some(p) = overrides.user_tx_power_dbm {
        for u in &mut scenario.users {
            u.peak_tx_power_dbm = p;
        }
    }
    if let Some(p) = overrides.hap_peak_power_dbm {
        for s in scenario.stations.iter_mut().filter(|s| s.kind == NodeKind::Hap) {
            s.peak_tx_power_dbm = p;
        }
    }
    if let Some(b) = overrides.backhaul_bandwidth_hz {
        for s in &mut scenario.stations {
            s.backhaul_bandwidth_rf_hz = b;
            s.backhaul_bandwidth_fso_hz = b;
        }
    }
}

/// Stations placement may move in `mode`: HAPs and TBs when integrated, HAPs
/// alone for the HAP-assisted baseline, none for the satellite-only baseline.
pub fn placement_targets(scenario: &Scenario, mode: Mode) -> Vec<StationId> {
    let kinds: &[NodeKind] = match mode {
        Mode::SatOnly => &[],
        Mode::SatPlusHaps => &[NodeKind::Hap],
        Mode::Integrated => &[NodeKind::Hap, NodeKind::TetheredBalloon],
    };
    scenario.stations.iter().filter(|s| kinds.contains(&s.kind)).map(|s| s.id).collect()
}

#[derive(Debug, Clone)]
pub struct PointOutcome {
    /// Scenario as evaluated, after overrides and placement.
    pub scenario: Scenario,
    pub backhaul: BackhaulAssociation,
    pub access: AccessAssociation,
    pub allocation: AllocationResult,
}

fn evaluate(scenario: &Scenario, direction: Direction) -> crate::Result<(BackhaulAssociation, AccessAssociation, AllocationResult)> {
    let alloc = &scenario.config.allocation;
    let backhaul = solve_backhaul(scenario, direction)?;
    let access = solve_access_greedy(scenario, direction, &backhaul, alloc)?;
    let allocation = allocate(scenario, direction, &access, &backhaul, alloc)?;
    Ok((backhaul, access, allocation))
}

/// Network utility of `scenario` under the full pipeline; failures score `-inf`.
pub fn pipeline_utility(scenario: &Scenario, direction: Direction) -> f64 {
    evaluate(scenario, direction).map(|(_, _, a)| a.utility_value).unwrap_or(f64::NEG_INFINITY)
}

/// One pipeline pass, keeping every intermediate product.
pub fn run_pipeline(scenario: &Scenario, direction: Direction, mode: Mode, overrides: &Overrides) -> crate::Result<PointOutcome> {
    let mut scenario = scenario.clone();
    scenario.config.mode = mode;
    apply_overrides(&mut scenario, overrides);
    if let Some(params) = &overrides.placement {
        let targets = placement_targets(&scenario, mode);
        if !targets.is_empty() {
            scenario = shrink_and_realign(&scenario, &targets, |s| pipeline_utility(s, direction), params)?.scenario;
        }
    }
    let (backhaul, access, allocation) = evaluate(&scenario, direction)?;
    Ok(PointOutcome { scenario, backhaul, access, allocation })
}

pub fn run_point(scenario: &Scenario, direction: Direction, mode: Mode, overrides: &Overrides) -> crate::Result<AllocationResult> {
    run_pipeline(scenario, direction, mode, overrides).map(|o| o.allocation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweptParameter {
    UserTxPower,
    HapPeakPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub swept_parameter: SweptParameter,
    /// dBm, strictly increasing.
    pub values: Vec<f64>,
    pub modes: Vec<Mode>,
    pub backhaul_bandwidth_cases: Vec<f64>,
    pub direction: Direction,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Placement on/off for the modes that have movable stations.
    #[serde(default = "yes")]
    pub placement: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn steps(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

impl SweepSpec {
    /// Uplink throughput against user transmit power, all three modes.
    pub fn uplink_user_power() -> Self {
        SweepSpec {
            swept_parameter: SweptParameter::UserTxPower,
            values: steps(0.0, 50.0, 5.0),
            modes: Mode::ALL.to_vec(),
            backhaul_bandwidth_cases: vec![20e6],
            direction: Direction::Uplink,
            replications: 5,
            base_seed: 1,
            placement: true,
        }
    }

    /// Integrated downlink throughput against HAP peak power, one curve per back-haul case.
    pub fn downlink_hap_power() -> Self {
        SweepSpec {
            swept_parameter: SweptParameter::HapPeakPower,
            values: steps(30.0, 90.0, 5.0),
            modes: vec![Mode::Integrated],
            backhaul_bandwidth_cases: vec![20e6, 200e6, 2e9],
            direction: Direction::Downlink,
            replications: 5,
            base_seed: 1,
            placement: true,
        }
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidSpec(m.into()));
        if self.values.is_empty() {
            return bad("values: must not be empty");
        }
        if self.values.iter().any(|v| !v.is_finite()) || self.values.windows(2).any(|w| w[1] <= w[0]) {
            return bad("values: must be finite and strictly increasing");
        }
        if self.modes.is_empty() {
            return bad("modes: must not be empty");
        }
        if self.backhaul_bandwidth_cases.is_empty() || self.backhaul_bandwidth_cases.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return bad("backhaul_bandwidth_cases: must be non-empty, positive and finite");
        }
        if self.replications == 0 {
            return bad("replications: must be at least 1");
        }
        Ok(())
    }

    fn overrides_for(&self, value: f64, backhaul_hz: f64) -> Overrides {
        let mut o = Overrides { backhaul_bandwidth_hz: Some(backhaul_hz), ..Default::default() };
        match self.swept_parameter {
            SweptParameter::UserTxPower => o.user_tx_power_dbm = Some(value),
            SweptParameter::HapPeakPower => o.hap_peak_power_dbm = Some(value),
        }
        o
    }

    /// Swept value under which placement is optimized: the median.
    pub fn placement_value(&self) -> f64 {
        self.values[(self.values.len() - 1) / 2]
    }

    /// Back-haul case under which placement is optimized: the median.
    pub fn placement_case(&self) -> f64 {
        self.backhaul_bandwidth_cases[(self.backhaul_bandwidth_cases.len() - 1) / 2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: Mode,
    pub backhaul_hz: f64,
    pub swept_dbm: f64,
    /// Replication averages.
    pub mean_rate_bps: f64,
    pub min_rate_bps: f64,
    pub utility: f64,
    /// One allocation per replication, in seed order.
    pub replicates: Vec<AllocationResult>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    /// Ordered by mode, back-haul case, then swept value, in the order the sweep lists them.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn curve(&self, mode: Mode, backhaul_hz: f64) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.mode == mode && r.backhaul_hz == backhaul_hz).collect()
    }

    pub fn row(&self, mode: Mode, backhaul_hz: f64, swept_dbm: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.mode == mode && r.backhaul_hz == backhaul_hz && r.swept_dbm == swept_dbm)
    }
}

/// All curves of one (mode, replication): per back-haul case, per swept value.
fn run_group(spec: &SweepSpec, config: &ScenarioConfig, mode: Mode, replication: usize) -> Result<Vec<Vec<AllocationResult>>, HarnessError> {
    let fail = |backhaul_hz: f64, value: f64, e: crate::Error| HarnessError::Point {
        mode,
        backhaul_hz,
        value,
        replication,
        source: Box::new(e),
    };
    let mut cfg = config.clone();
    cfg.seed = spec.base_seed.wrapping_add(replication as u64);
    cfg.mode = mode;
    let scenario = build_scenario(&cfg).map_err(|e| fail(spec.backhaul_bandwidth_cases[0], spec.values[0], e.into()))?;

    let placed = if spec.placement && !placement_targets(&scenario, mode).is_empty() {
        let (case, value) = (spec.placement_case(), spec.placement_value());
        let mut overrides = spec.overrides_for(value, case);
        let mut params = cfg.placement.clone();
        params.seed = params.seed.wrapping_add(replication as u64);
        overrides.placement = Some(params);
        run_pipeline(&scenario, spec.direction, mode, &overrides).map_err(|e| fail(case, value, e))?.scenario
    } else {
        scenario
    };

    spec.backhaul_bandwidth_cases
        .iter()
        .map(|&case| {
            spec.values
                .iter()
                .map(|&value| {
                    run_point(&placed, spec.direction, mode, &spec.overrides_for(value, case)).map_err(|e| fail(case, value, e))
                })
                .collect()
        })
        .collect()
}

/// Runs every point of `spec`. Groups of curves are evaluated in parallel;
/// the output order and values do not depend on scheduling.
///
/// Placement runs once per (mode, replication) at [`SweepSpec::placement_value`]
/// and [`SweepSpec::placement_case`]; every back-haul case and swept value of
/// that replication reuses the resulting layout.
pub fn run_sweep(spec: &SweepSpec, config: &ScenarioConfig) -> Result<SweepResult, HarnessError> {
    spec.check()?;
    let tasks: Vec<(Mode, usize)> =
        spec.modes.iter().flat_map(|&m| (0..spec.replications).map(move |r| (m, r))).collect();
    let groups: Vec<Vec<Vec<AllocationResult>>> = tasks
        .par_iter()
        .map(|&(mode, rep)| run_group(spec, config, mode, rep))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for (m, &mode) in spec.modes.iter().enumerate() {
        let reps = &groups[m * spec.replications..(m + 1) * spec.replications];
        for (c, &case) in spec.backhaul_bandwidth_cases.iter().enumerate() {
            for (i, &value) in spec.values.iter().enumerate() {
                let replicates: Vec<AllocationResult> = reps.iter().map(|g| g[c][i].clone()).collect();
                let n = replicates.len() as f64;
                let mean = |f: fn(&AllocationResult) -> f64| replicates.iter().map(f).sum::<f64>() / n;
                rows.push(SweepRow {
                    mode,
                    backhaul_hz: case,
                    swept_dbm: value,
                    mean_rate_bps: mean(AllocationResult::mean_rate),
                    min_rate_bps: mean(AllocationResult::min_rate),
                    utility: mean(|a| a.utility_value),
                    replicates,
                });
            }
        }
    }
    Ok(SweepResult { rows })
}

pub const CSV_HEADER: &str = "mode,backhaul_hz,swept_dbm,mean_rate_bps,min_rate_bps,utility";

pub fn csv_string(result: &SweepResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.mode, r.backhaul_hz, r.swept_dbm, r.mean_rate_bps, r.min_rate_bps, r.utility
        ));
    }
    out
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<(), HarnessError> {
    if result.rows.is_empty() {
        return Err(HarnessError::EmptyResult);
    }
    let mut f = fs::File::create(path)?;
    f.write_all(csv_string(result).as_bytes())?;
    Ok(())
}

struct Curve {
    label: String,
    points: Vec<(f64, f64)>,
}

fn curves(result: &SweepResult) -> Vec<Curve> {
    let mut keys: Vec<(Mode, f64)> = Vec::new();
    for r in &result.rows {
        if !keys.contains(&(r.mode, r.backhaul_hz)) {
            keys.push((r.mode, r.backhaul_hz));
        }
    }
    let many_cases = keys.iter().any(|k| k.1 != keys[0].1);
    keys.into_iter()
        .map(|(mode, case)| Curve {
            label: if many_cases { format!("{mode} ({})", BandLabel(case)) } else { mode.to_string() },
            points: result.curve(mode, case).iter().map(|r| (r.swept_dbm, r.mean_rate_bps)).collect(),
        })
        .collect()
}

struct BandLabel(f64);

impl fmt::Display for BandLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hz = self.0;
        if hz >= 1e9 {
            write!(f, "{} GHz", hz / 1e9)
        } else if hz >= 1e6 {
            write!(f, "{} MHz", hz / 1e6)
        } else if hz >= 1e3 {
            write!(f, "{} kHz", hz / 1e3)
        } else {
            write!(f, "{hz} Hz")
        }
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// SVG line chart of mean rate (log scale) against the swept power.
pub fn svg_string(result: &SweepResult, y_label: &str) -> String {
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (80.0, 200.0, 30.0, 60.0);
    let curves = curves(result);

    let xs = || curves.iter().flat_map(|c| c.points.iter().map(|p| p.0));
    let (mut x0, mut x1) = (xs().fold(f64::INFINITY, f64::min), xs().fold(f64::NEG_INFINITY, f64::max));
    if x1 <= x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let positive = || curves.iter().flat_map(|c| c.points.iter().map(|p| p.1)).filter(|y| *y > 0.0);
    let lo = positive().fold(f64::INFINITY, f64::min);
    let hi = positive().fold(f64::NEG_INFINITY, f64::max);
    let (mut d0, mut d1) = if lo.is_finite() { (lo.log10().floor(), hi.log10().ceil()) } else { (0.0, 1.0) };
    if d1 <= d0 {
        d0 -= 1.0;
        d1 += 1.0;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| {
        let l = if y > 0.0 { y.log10().max(d0) } else { d0 };
        top + (d1 - l) / (d1 - d0) * (h - top - bottom)
    };

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"));
    let (pl, pr, pt, pb) = (left, w - right, top, h - bottom);
    s.push_str(&format!("<rect x=\"{pl}\" y=\"{pt}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", pr - pl, pb - pt));

    let mut decade = d0;
    while decade <= d1 + 1e-9 {
        let y = py(10f64.powf(decade));
        s.push_str(&format!("<line x1=\"{pl}\" y1=\"{y:.2}\" x2=\"{pr}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n"));
        s.push_str(&format!("<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">1e{}</text>\n", pl - 6.0, y + 4.0, decade as i64));
        decade += 1.0;
    }
    let mut ticks: Vec<f64> = xs().collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let tx = px(x);
        s.push_str(&format!("<line x1=\"{tx:.2}\" y1=\"{pb}\" x2=\"{tx:.2}\" y2=\"{}\" stroke=\"black\"/>\n", pb + 5.0));
        s.push_str(&format!("<text x=\"{tx:.2}\" y=\"{}\" text-anchor=\"middle\">{x}</text>\n", pb + 20.0));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">Transmit power (dBm)</text>\n",
        (pl + pr) / 2.0,
        h - 15.0
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0})\">{1}</text>\n",
        (pt + pb) / 2.0,
        xml_escape(y_label)
    ));

    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        s.push_str(&format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n", pts.join(" ")));
        for &(x, y) in &c.points {
            s.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{color}\"/>\n", px(x), py(y)));
        }
        let ly = pt + 16.0 + 20.0 * i as f64;
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pr + 15.0,
            pr + 40.0
        ));
        s.push_str(&format!("<text x=\"{}\" y=\"{}\">{}</text>\n", pr + 46.0, ly + 4.0, xml_escape(&c.label)));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_plot(result: &SweepResult, path: &Path) -> Result<(), HarnessError> {
    if result.rows.is_empty() {
        return Err(HarnessError::EmptyResult);
    }
    fs::write(path, svg_string(result, "Mean rate per user (bit/s)"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::reference_config;

    fn small_config() -> ScenarioConfig {
        let mut cfg = reference_config();
        cfg.num_users = 20;
        cfg.subareas[0].gbs_count = 4;
        cfg.subareas[0].tb_count = 4;
        cfg
    }

    fn small_spec() -> SweepSpec {
        SweepSpec {
            values: vec![0.0, 10.0, 20.0],
            replications: 2,
            placement: false,
            ..SweepSpec::uplink_user_power()
        }
    }

    #[test]
    fn sat_only_serves_everyone_from_the_satellite() {
        let sc = build_scenario(&small_config()).unwrap();
        let out = run_pipeline(&sc, Direction::Uplink, Mode::SatOnly, &Overrides::default()).unwrap();
        assert!(out.access.assignments.values().all(|s| *s == Some(0)));
    }

    #[test]
    fn no_serving_stations_means_zero_rate() {
        let mut cfg = small_config();
        cfg.subareas[0].gbs_count = 0;
        cfg.subareas[0].tb_count = 0;
        let sc = build_scenario(&cfg).unwrap();
        let r = run_point(&sc, Direction::Uplink, Mode::Integrated, &Overrides::default()).unwrap();
        assert!(r.users.iter().all(|u| u.station_id.is_none()));
        assert_eq!(r.mean_rate(), 0.0);
    }

    #[test]
    fn sweep_shape_and_metric() {
        let spec = small_spec();
        let res = run_sweep(&spec, &small_config()).unwrap();
        assert_eq!(res.rows.len(), 9);
        for row in &res.rows {
            let per_rep: Vec<f64> = row
                .replicates
                .iter()
                .map(|a| a.users.iter().map(|u| u.effective_rate_bps).sum::<f64>() / a.users.len() as f64)
                .collect();
            let expect = per_rep.iter().sum::<f64>() / per_rep.len() as f64;
            assert!((row.mean_rate_bps - expect).abs() <= 1e-12 * expect.max(1.0));
        }
        let csv = csv_string(&res);
        assert_eq!(csv.lines().count(), 10);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn spec_validation() {
        let mut spec = small_spec();
        spec.values = vec![10.0, 5.0];
        assert!(matches!(spec.check(), Err(HarnessError::InvalidSpec(_))));
        spec.values = vec![];
        assert!(spec.check().is_err());
        let spec = SweepSpec { replications: 0, ..small_spec() };
        assert!(spec.check().is_err());
    }

    #[test]
    fn empty_result_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        assert!(matches!(emit_csv(&SweepResult::default(), &path), Err(HarnessError::EmptyResult)));
        assert!(!path.exists());
        let svg = dir.path().join("out.svg");
        assert!(matches!(emit_plot(&SweepResult::default(), &svg), Err(HarnessError::EmptyResult)));
        assert!(!svg.exists());
    }

    #[test]
    fn plot_has_one_curve_per_mode() {
        let res = run_sweep(&small_spec(), &small_config()).unwrap();
        let svg = svg_string(&res, "rate");
        assert_eq!(svg.matches("<polyline").count(), 3);
        for m in Mode::ALL {
            assert!(svg.contains(&format!(">{}</text>", m.name())));
        }
    }

    #[test]
    fn single_point_plot() {
        let spec = SweepSpec { values: vec![20.0], modes: vec![Mode::SatOnly], replications: 1, ..small_spec() };
        let res = run_sweep(&spec, &small_config()).unwrap();
        let svg = svg_string(&res, "rate");
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SweepSpec::downlink_hap_power();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SweepSpec>(&text).unwrap(), spec);
    }
}
