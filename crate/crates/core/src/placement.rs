//! Station placement: shrink-and-re-align random local search and a lattice oracle.
//!
//! Altitudes are fixed per station kind, so every search runs in the horizontal
//! plane and keeps each station's z coordinate.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{Position, Rect, Scenario, StationId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlacementError {
    #[error("no movable stations given")]
    NoMovableStations,
    #[error("station {0} is not in the scenario")]
    UnknownStation(StationId),
    #[error("grid search supports at most 2 stations, got {0}")]
    TooManyStations(usize),
    #[error("lattice of {0} points exceeds the 1e6 limit")]
    PitchTooFine(f64),
    #[error("pitch must be positive, got {0}")]
    NonPositivePitch(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementParams {
    pub initial_radius_m: f64,
    pub candidates_per_round: usize,
    pub min_radius_m: f64,
    pub max_rounds: usize,
    pub seed: u64,
}

impl Default for PlacementParams {
    fn default() -> Self {
        PlacementParams { initial_radius_m: 20_000.0, candidates_per_round: 16, min_radius_m: 50.0, max_rounds: 200, seed: 7 }
    }
}

impl PlacementParams {
    pub fn check(&self) -> Result<(), String> {
        if !(self.min_radius_m > 0.0) {
            return Err("min_radius_m: must be positive".into());
        }
        if !(self.initial_radius_m > self.min_radius_m) || !self.initial_radius_m.is_finite() {
            return Err("initial_radius_m: must be finite and exceed min_radius_m".into());
        }
        if self.candidates_per_round < 2 {
            return Err("candidates_per_round: must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub round: usize,
    pub station_id: StationId,
    /// Radius the station searched with in this step.
    pub radius_m: f64,
    /// Best objective after the step.
    pub objective: f64,
}

pub const TRACE_HEADER: &str = "round,station_id,radius_m,objective";

impl TraceRow {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.round, self.station_id, self.radius_m, self.objective)
    }
}

#[derive(Debug, Clone)]
pub struct PlacementOutcome {
    pub scenario: Scenario,
    pub positions: BTreeMap<StationId, Position>,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub trace: Vec<TraceRow>,
}

fn finite_or_worst(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Uniform point in the disk of `radius` around `center`, clamped to `bounds`.
fn sample_disk(rng: &mut ChaCha8Rng, center: Position, radius: f64, bounds: &Rect) -> Position {
    let r = radius * rng.gen::<f64>().sqrt();
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    Position {
        x: (center.x + r * theta.cos()).clamp(bounds.x_min, bounds.x_max),
        y: (center.y + r * theta.sin()).clamp(bounds.y_min, bounds.y_max),
        z: center.z,
    }
}

/// Round-robin shrink-and-re-align search maximizing `objective`.
///
/// Each active station draws `candidates_per_round` points in a disk around
/// its current position. It moves to the best one if that strictly improves
/// the objective and keeps its radius; otherwise the radius halves. A station
/// drops out once its radius falls below `min_radius_m`. One round is one
/// station's draw of candidates; the search stops when every station has
/// dropped out or after `max_rounds` rounds.
pub fn shrink_and_realign<F>(
    scenario: &Scenario,
    movable: &[StationId],
    objective: F,
    params: &PlacementParams,
) -> Result<PlacementOutcome, PlacementError>
where
    F: Fn(&Scenario) -> f64,
{
    if movable.is_empty() {
        return Err(PlacementError::NoMovableStations);
    }
    for &id in movable {
        if scenario.station(id).is_none() {
            return Err(PlacementError::UnknownStation(id));
        }
    }
    let bounds = scenario.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut current = scenario.clone();
    let mut best = finite_or_worst(objective(&current));
    let initial_objective = best;
    let mut radius: Vec<f64> = vec![params.initial_radius_m; movable.len()];
    let mut trace = Vec::new();
    let mut trial = current.clone();

    let mut round = 0;
    'search: loop {
        let mut active = false;
        for (slot, &id) in movable.iter().enumerate() {
            if radius[slot] < params.min_radius_m {
                continue;
            }
            if round == params.max_rounds {
                break 'search;
            }
            active = true;
            let center = current.station(id).expect("checked above").position;
            let mut winner: Option<(Position, f64)> = None;
            for _ in 0..params.candidates_per_round {
                let candidate = sample_disk(&mut rng, center, radius[slot], &bounds);
                trial.station_mut(id).expect("checked above").position = candidate;
                let value = finite_or_worst(objective(&trial));
                if winner.map_or(true, |(_, v)| value > v) {
                    winner = Some((candidate, value));
                }
            }
            let searched = radius[slot];
            match winner {
                Some((pos, value)) if value > best => {
                    best = value;
                    current.station_mut(id).expect("checked above").position = pos;
                }
                _ => radius[slot] /= 2.0,
            }
            trial.station_mut(id).expect("checked above").position = current.station(id).expect("checked above").position;
            trace.push(TraceRow { round, station_id: id, radius_m: searched, objective: best });
            round += 1;
        }
        if !active {
            break;
        }
    }

    let positions = movable.iter().map(|&id| (id, current.station(id).expect("checked above").position)).collect();
    Ok(PlacementOutcome { scenario: current, positions, initial_objective, final_objective: best, trace })
}

pub const MAX_LATTICE_POINTS: f64 = 1e6;

/// Exhaustive search over the lattice `bounds.min + i * pitch` for every
/// movable station jointly. Ties go to the lowest lattice index.
pub fn grid_search<F>(
    scenario: &Scenario,
    movable: &[StationId],
    objective: F,
    pitch_m: f64,
) -> Result<BTreeMap<StationId, Position>, PlacementError>
where
    F: Fn(&Scenario) -> f64,
{
    if movable.is_empty() {
        return Err(PlacementError::NoMovableStations);
    }
    if movable.len() > 2 {
        return Err(PlacementError::TooManyStations(movable.len()));
    }
    if !(pitch_m > 0.0) {
        return Err(PlacementError::NonPositivePitch(pitch_m));
    }
    for &id in movable {
        if scenario.station(id).is_none() {
            return Err(PlacementError::UnknownStation(id));
        }
    }
    let bounds = scenario.bounds();
    let nx = ((bounds.x_max - bounds.x_min) / pitch_m + 1e-9).floor() as usize + 1;
    let ny = ((bounds.y_max - bounds.y_min) / pitch_m + 1e-9).floor() as usize + 1;
    let per_station = nx as f64 * ny as f64;
    let total = per_station.powi(movable.len() as i32);
    if total > MAX_LATTICE_POINTS {
        return Err(PlacementError::PitchTooFine(total));
    }
    let per_station = nx * ny;
    let point = |idx: usize, z: f64| Position {
        x: bounds.x_min + (idx / ny) as f64 * pitch_m,
        y: bounds.y_min + (idx % ny) as f64 * pitch_m,
        z,
    };
    let heights: Vec<f64> = movable.iter().map(|&id| scenario.station(id).expect("checked above").position.z).collect();

    let mut trial = scenario.clone();
    let mut best: Option<(usize, f64)> = None;
    for joint in 0..total as usize {
        let mut rest = joint;
        for (k, &id) in movable.iter().enumerate().rev() {
            trial.station_mut(id).expect("checked above").position = point(rest % per_station, heights[k]);
            rest /= per_station;
        }
        let value = finite_or_worst(objective(&trial));
        if best.map_or(true, |(_, v)| value > v) {
            best = Some((joint, value));
        }
    }
    let (joint, _) = best.expect("lattice is non-empty");
    let mut rest = joint;
    let mut out = BTreeMap::new();
    for (k, &id) in movable.iter().enumerate().rev() {
        out.insert(id, point(rest % per_station, heights[k]));
        rest /= per_station;
    }
    Ok(out)
}
