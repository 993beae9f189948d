//! Tethered-balloon batteries and energy causality.
//!
//! A TB may only spend energy that was already in its battery at the end of the
//! previous slot; harvest collected during a slot is credited after that slot's
//! consumption, and anything above capacity is clipped.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::dbm_to_watts;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("slot {slot}: consumption {consumed_j} J exceeds stored {available_j} J")]
    CausalityViolation { slot: usize, consumed_j: f64, available_j: f64 },
    #[error("slot {got} stepped out of order (next slot is {expected})")]
    SlotOutOfOrder { expected: usize, got: usize },
    #[error("energy amounts must be finite and >= 0")]
    NegativeEnergy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyParams {
    pub p_operating_w: f64,
    pub p_per_user_w: f64,
    pub p_sleep_w: f64,
    pub battery_capacity_j: f64,
    pub slot_duration_s: f64,
    /// Peak of the diurnal harvest profile.
    pub harvest_peak_w: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            p_operating_w: 50.0,
            p_per_user_w: 1.0,
            p_sleep_w: 5.0,
            battery_capacity_j: 2.0 * 3.6e6,
            slot_duration_s: 900.0,
            harvest_peak_w: 200.0,
        }
    }
}

impl EnergyParams {
    pub fn check(&self) -> Result<(), String> {
        let all = [self.p_operating_w, self.p_per_user_w, self.p_sleep_w, self.battery_capacity_j, self.harvest_peak_w];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err("power and energy constants must be finite and >= 0".into());
        }
        if !(self.slot_duration_s > 0.0) {
            return Err("slot_duration_s must be > 0".into());
        }
        if self.p_sleep_w >= self.p_operating_w {
            return Err("p_sleep_w must be below p_operating_w".into());
        }
        Ok(())
    }
}

/// Stored-energy trajectory of one battery; `stored_j[t]` is the charge at the end of slot `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub capacity_j: f64,
    pub initial_j: f64,
    pub stored_j: Vec<f64>,
    pub slot_duration_s: f64,
}

impl BatteryState {
    pub fn new(capacity_j: f64, initial_j: f64, slot_duration_s: f64) -> Self {
        Self { capacity_j, initial_j, stored_j: Vec::new(), slot_duration_s }
    }

    pub fn full(params: &EnergyParams) -> Self {
        Self::new(params.battery_capacity_j, params.battery_capacity_j, params.slot_duration_s)
    }

    /// Charge available to the next slot.
    pub fn last_stored(&self) -> f64 {
        self.stored_j.last().copied().unwrap_or(self.initial_j)
    }

    pub fn next_slot(&self) -> usize {
        self.stored_j.len()
    }

    pub fn is_within_bounds(&self) -> bool {
        std::iter::once(self.initial_j)
            .chain(self.stored_j.iter().copied())
            .all(|e| (0.0..=self.capacity_j).contains(&e))
    }
}

/// Energy accounting for one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    pub previous_j: f64,
    pub stored_j: f64,
    pub harvested_j: f64,
    pub consumed_j: f64,
    /// Harvest discarded because the battery was full.
    pub clipped_j: f64,
}

/// Advances `state` by slot `t`, which must be the next unrecorded slot.
pub fn step_energy(state: &BatteryState, t: usize, harvested_j: f64, consumed_j: f64) -> Result<BatteryState, EnergyError> {
    let (next, _) = step_energy_recorded(state, t, harvested_j, consumed_j)?;
    Ok(next)
}

pub fn step_energy_recorded(
    state: &BatteryState,
    t: usize,
    harvested_j: f64,
    consumed_j: f64,
) -> Result<(BatteryState, SlotRecord), EnergyError> {
    if t != state.next_slot() {
        return Err(EnergyError::SlotOutOfOrder { expected: state.next_slot(), got: t });
    }
    if !(harvested_j >= 0.0 && consumed_j >= 0.0) || !harvested_j.is_finite() || !consumed_j.is_finite() {
        return Err(EnergyError::NegativeEnergy);
    }
    let previous = state.last_stored();
    if consumed_j > previous {
        return Err(EnergyError::CausalityViolation { slot: t, consumed_j, available_j: previous });
    }
    let unclipped = previous - consumed_j + harvested_j;
    let stored = unclipped.min(state.capacity_j);
    let mut next = state.clone();
    next.stored_j.push(stored);
    let record = SlotRecord {
        previous_j: previous,
        stored_j: stored,
        harvested_j,
        consumed_j,
        clipped_j: unclipped - stored,
    };
    Ok((next, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TbLoad {
    Asleep,
    Active { users: usize },
}

/// Energy a TB draws over one slot.
pub fn tb_consumption(load: TbLoad, tx_power_dbm: f64, slot_duration_s: f64, params: &EnergyParams) -> f64 {
    match load {
        TbLoad::Asleep => params.p_sleep_w * slot_duration_s,
        TbLoad::Active { users } => {
            (params.p_operating_w + dbm_to_watts(tx_power_dbm) + users as f64 * params.p_per_user_w) * slot_duration_s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestProfile {
    pub per_slot_j: Vec<f64>,
}

impl HarvestProfile {
    pub fn zeros(slots: usize) -> Self {
        Self { per_slot_j: vec![0.0; slots] }
    }

    /// Half-sine between 06:00 and 18:00 peaking at `peak_w` at noon, zero at night.
    /// `start_hour` is the clock time at the start of slot 0. Slot energies are exact integrals.
    pub fn diurnal(peak_w: f64, slot_duration_s: f64, slots: usize, start_hour: f64) -> Self {
        const DAY_S: f64 = 86_400.0;
        const SUNRISE_S: f64 = 6.0 * 3_600.0;
        const DAYLIGHT_S: f64 = 12.0 * 3_600.0;
        // Integral of the half-sine over absolute time since slot 0 start, one day at a time.
        let cumulative = |t: f64| -> f64 {
            let clock = start_hour * 3_600.0 + t;
            let days = (clock / DAY_S).floor();
            let within = clock - days * DAY_S;
            let per_day = peak_w * 2.0 * DAYLIGHT_S / PI;
            let partial = if within <= SUNRISE_S {
                0.0
            } else if within >= SUNRISE_S + DAYLIGHT_S {
                per_day
            } else {
                peak_w * DAYLIGHT_S / PI * (1.0 - (PI * (within - SUNRISE_S) / DAYLIGHT_S).cos())
            };
            days * per_day + partial
        };
        let per_slot_j = (0..slots)
            .map(|k| {
                let (a, b) = (k as f64 * slot_duration_s, (k + 1) as f64 * slot_duration_s);
                (cumulative(b) - cumulative(a)).max(0.0)
            })
            .collect();
        Self { per_slot_j }
    }

    pub fn at(&self, t: usize) -> f64 {
        self.per_slot_j.get(t).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotMode {
    Sleep,
    On,
}

/// Planning input for one TB.
#[derive(Debug, Clone, Copy)]
pub struct SleepRequest<'a> {
    pub battery: &'a BatteryState,
    pub harvest: &'a HarvestProfile,
    /// Predicted number of users in each slot.
    pub demand: &'a [usize],
    pub tx_power_dbm: f64,
}

impl SleepRequest<'_> {
    fn demand_at(&self, t: usize) -> usize {
        self.demand.get(t).copied().unwrap_or(0)
    }

    pub fn consumption(&self, mode: SlotMode, t: usize, params: &EnergyParams) -> f64 {
        let load = match mode {
            SlotMode::Sleep => TbLoad::Asleep,
            SlotMode::On => TbLoad::Active { users: self.demand_at(t) },
        };
        tb_consumption(load, self.tx_power_dbm, self.battery.slot_duration_s, params)
    }

    fn feasible_from(
        &self,
        mut stored: f64,
        from: usize,
        horizon: usize,
        params: &EnergyParams,
        policy: impl Fn(usize) -> SlotMode,
    ) -> bool {
        for t in from..horizon {
            let cost = self.consumption(policy(t), t, params);
            if cost > stored {
                return false;
            }
            stored = (stored - cost + self.harvest.at(t)).min(self.battery.capacity_j);
        }
        true
    }
}

/// Per-slot on/off plan for each TB.
///
/// A TB with demand is switched on unless (a) it cannot pay for the slot,
/// (b) being on would leave too little charge to stay in standby for the rest
/// of the horizon, or (c) being on would make serving every later demand slot
/// infeasible while sleeping now would keep it feasible. Following the plan
/// never violates causality provided the initial charge can fund standby for
/// the whole horizon.
pub fn sleep_schedule(requests: &[SleepRequest<'_>], horizon: usize, params: &EnergyParams) -> Vec<Vec<SlotMode>> {
    requests
        .iter()
        .map(|req| {
            let cap = req.battery.capacity_j;
            let serve_all = |t: usize| if req.demand_at(t) > 0 { SlotMode::On } else { SlotMode::Sleep };
            let mut stored = req.battery.last_stored();
            let mut plan = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let mode = if req.demand_at(t) == 0 {
                    SlotMode::Sleep
                } else {
                    let on_cost = req.consumption(SlotMode::On, t, params);
                    let sleep_cost = req.consumption(SlotMode::Sleep, t, params);
                    if on_cost > stored {
                        SlotMode::Sleep
                    } else {
                        let after_on = (stored - on_cost + req.harvest.at(t)).min(cap);
                        let standby_ok = req.feasible_from(after_on, t + 1, horizon, params, |_| SlotMode::Sleep);
                        let after_sleep = (stored - sleep_cost + req.harvest.at(t)).min(cap);
                        let defer = !req.feasible_from(after_on, t + 1, horizon, params, serve_all)
                            && sleep_cost <= stored
                            && req.feasible_from(after_sleep, t + 1, horizon, params, serve_all);
                        if standby_ok && !defer {
                            SlotMode::On
                        } else {
                            SlotMode::Sleep
                        }
                    }
                };
                let cost = req.consumption(mode, t, params);
                stored = (stored - cost).max(0.0) + req.harvest.at(t);
                stored = stored.min(cap);
                plan.push(mode);
            }
            plan
        })
        .collect()
}

/// One row of the optional battery trace CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryTraceRow {
    pub slot: usize,
    pub tb_id: u32,
    pub stored_j: f64,
    pub harvested_j: f64,
    pub consumed_j: f64,
    pub asleep: bool,
}

pub const BATTERY_TRACE_HEADER: &str = "slot,tb_id,stored_j,harvested_j,consumed_j,asleep";

impl BatteryTraceRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.slot, self.tb_id, self.stored_j, self.harvested_j, self.consumed_j, self.asleep as u8
        )
    }
}

/// Follows `plan` with [`step_energy`], returning the final battery and the trace rows.
pub fn simulate_plan(
    tb_id: u32,
    request: &SleepRequest<'_>,
    plan: &[SlotMode],
    params: &EnergyParams,
) -> Result<(BatteryState, Vec<BatteryTraceRow>), EnergyError> {
    let mut state = request.battery.clone();
    let mut rows = Vec::with_capacity(plan.len());
    let first = state.next_slot();
    for (k, &mode) in plan.iter().enumerate() {
        let t = first + k;
        let consumed = request.consumption(mode, k, params);
        let harvested = request.harvest.at(k);
        state = step_energy(&state, t, harvested, consumed)?;
        rows.push(BatteryTraceRow {
            slot: t,
            tb_id,
            stored_j: state.last_stored(),
            harvested_j: harvested,
            consumed_j: consumed,
            asleep: mode == SlotMode::Sleep,
        });
    }
    Ok((state, rows))
}
