//! Acceptance gate. Runs every criterion in order, prints one PASS/FAIL line
//! each, and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skybridge::allocation::{allocate, waterfill_power};
use skybridge::association::{
    enumerate_access_candidates, solve_access_exact, solve_access_greedy, solve_backhaul, AccessAssociation, Direction,
};
use skybridge::channel::{best_medium, fso_pointing_loss, misalignment, optimal_alignment, Medium};
use skybridge::energy::{
    simulate_plan, sleep_schedule, step_energy_recorded, BatteryState, EnergyParams, HarvestProfile, SleepRequest, SlotMode,
};
use skybridge::harness::{csv_string, run_sweep, SweepResult, SweepSpec, SweptParameter};
use skybridge::placement::{grid_search, shrink_and_realign, PlacementParams};
use skybridge::scenario::{
    build_scenario, reference_config, AreaSize, Mode, NodeKind, Position, Rect, Region, Scenario, ScenarioConfig, SubArea,
};

type Outcome = Result<String, String>;

const LIMIT: Duration = Duration::from_secs(60);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_change(a: f64, b: f64) -> f64 {
    (b - a).abs() / a.abs().max(f64::MIN_POSITIVE)
}

fn uplink_sweep() -> SweepResult {
    run_sweep(&SweepSpec::uplink_user_power(), &reference_config()).expect("uplink sweep")
}

fn mean_at(r: &SweepResult, mode: Mode, value: f64) -> f64 {
    r.row(mode, 20e6, value).unwrap_or_else(|| panic!("missing row {mode} {value}")).mean_rate_bps
}

fn baseline_ordering(r: &SweepResult) -> Outcome {
    let spec = SweepSpec::uplink_user_power();
    let mut worst = f64::INFINITY;
    for &v in &spec.values {
        let (i, h, s) = (mean_at(r, Mode::Integrated, v), mean_at(r, Mode::SatPlusHaps, v), mean_at(r, Mode::SatOnly, v));
        check(i >= h && h >= s, || format!("at {v} dBm: Integrated {i:e}, SatPlusHaps {h:e}, SatOnly {s:e}"))?;
        worst = worst.min(i / h);
    }
    let (i, h, s) = (mean_at(r, Mode::Integrated, 20.0), mean_at(r, Mode::SatPlusHaps, 20.0), mean_at(r, Mode::SatOnly, 20.0));
    check(i > h && h > s, || format!("not strict at 20 dBm: {i:e} / {h:e} / {s:e}"))?;
    Ok(format!("ordered at all {} points; 20 dBm: {i:.3e} > {h:.3e} > {s:.3e}; min Integrated/SatPlusHaps {worst:.3}", spec.values.len()))
}

fn magnitude_gap(r: &SweepResult) -> Outcome {
    let ratio = mean_at(r, Mode::Integrated, 20.0) / mean_at(r, Mode::SatOnly, 20.0);
    check((1e2..=1e6).contains(&ratio), || format!("Integrated/SatOnly at 20 dBm = {ratio:.3e}"))?;
    Ok(format!("Integrated/SatOnly at 20 dBm = {ratio:.3e}"))
}

fn saturation(r: &SweepResult) -> Outcome {
    let (a, b) = (mean_at(r, Mode::Integrated, 45.0), mean_at(r, Mode::Integrated, 50.0));
    let d = rel_change(a, b);
    check(d < 0.01, || format!("Integrated 45 -> 50 dBm changes by {:.3}%", 100.0 * d))?;
    Ok(format!("Integrated 45 -> 50 dBm: {a:.4e} -> {b:.4e} ({:.3}%)", 100.0 * d))
}

fn backhaul_bandwidth_effect() -> Outcome {
    let spec = SweepSpec::downlink_hap_power();
    let r = run_sweep(&spec, &reference_config()).map_err(|e| e.to_string())?;
    let cases = &spec.backhaul_bandwidth_cases;
    for &v in &spec.values {
        let means: Vec<f64> = cases.iter().map(|&c| r.row(Mode::Integrated, c, v).expect("row").mean_rate_bps).collect();
        check(means.windows(2).all(|w| w[1] >= w[0]), || format!("at {v} dBm the cases give {means:?}"))?;
    }
    let mut tails = Vec::new();
    for &c in cases {
        let curve = r.curve(Mode::Integrated, c);
        let (a, b) = (curve[curve.len() - 2].mean_rate_bps, curve[curve.len() - 1].mean_rate_bps);
        let d = rel_change(a, b);
        check(d < 0.01, || format!("{c:e} Hz curve: last two points {a:e} -> {b:e} ({:.3}%)", 100.0 * d))?;
        tails.push(format!("{:.0} MHz {b:.3e} ({:.3}%)", c / 1e6, 100.0 * d));
    }
    Ok(format!("non-decreasing in bandwidth at all {} powers; saturated tails: {}", spec.values.len(), tails.join(", ")))
}

/// A random instance with at most 6 users and 4 stations (satellite included).
fn small_instance(rng: &mut ChaCha8Rng, seed: u64) -> (Scenario, Direction) {
    let side = 30_000.0;
    let ground = rng.gen_range(1..=2usize);
    let gbs = rng.gen_range(0..=ground);
    let mut cfg = ScenarioConfig {
        area_size: AreaSize { width_m: side, height_m: side },
        subareas: vec![SubArea {
            name: "all".into(),
            region: Region::Rect(Rect { x_min: 0.0, x_max: side, y_min: 0.0, y_max: side }),
            user_fraction: 1.0,
            gbs_count: gbs,
            tb_count: ground - gbs,
        }],
        num_users: rng.gen_range(1..=6),
        num_haps: 1,
        num_gateways: 1,
        mode: Mode::Integrated,
        seed,
        ..reference_config()
    };
    cfg.gbs_fiber_radius_m = if rng.gen_bool(0.5) { 0.0 } else { 20_000.0 };
    let direction = if rng.gen_bool(0.5) { Direction::Uplink } else { Direction::Downlink };
    (build_scenario(&cfg).expect("small instance"), direction)
}

/// Independent oracle: best utility over every assignment of every user to
/// any candidate station or to nobody.
fn enumerate_best(sc: &Scenario, direction: Direction, bh: &skybridge::BackhaulAssociation) -> f64 {
    let pairs = enumerate_access_candidates(sc, direction, sc.config.mode);
    let users: Vec<u32> = sc.users.iter().map(|u| u.id).collect();
    let options: Vec<Vec<Option<u32>>> = users
        .iter()
        .map(|&u| {
            let mut o: Vec<Option<u32>> = vec![None];
            o.extend(pairs.iter().filter(|p| p.0 == u).map(|p| Some(p.1)));
            o
        })
        .collect();
    let total: usize = options.iter().map(|o| o.len()).product();
    let mut best = f64::NEG_INFINITY;
    for mut code in 0..total {
        let mut assignments = BTreeMap::new();
        for (k, &u) in users.iter().enumerate() {
            assignments.insert(u, options[k][code % options[k].len()]);
            code /= options[k].len();
        }
        let plan = AccessAssociation { direction, assignments };
        let v = allocate(sc, direction, &plan, bh, &sc.config.allocation).expect("allocate").utility_value;
        best = best.max(v);
    }
    best
}

fn association_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ratios = Vec::new();
    for i in 0..200u64 {
        let (sc, dir) = small_instance(&mut rng, i);
        check(sc.stations.len() <= 4 && sc.users.len() <= 6, || format!("instance {i} too large"))?;
        let bh = solve_backhaul(&sc, dir).map_err(|e| e.to_string())?;
        let params = &sc.config.allocation;
        let exact = solve_access_exact(&sc, dir, &bh, params).map_err(|e| e.to_string())?;
        let greedy = solve_access_greedy(&sc, dir, &bh, params).map_err(|e| e.to_string())?;
        let u_exact = allocate(&sc, dir, &exact, &bh, params).map_err(|e| e.to_string())?.utility_value;
        let u_greedy = allocate(&sc, dir, &greedy, &bh, params).map_err(|e| e.to_string())?.utility_value;
        let oracle = enumerate_best(&sc, dir, &bh);
        check(u_exact == oracle, || format!("instance {i} ({dir}): exact {u_exact:e} != enumeration {oracle:e}"))?;
        check(u_greedy <= u_exact, || format!("instance {i} ({dir}): greedy {u_greedy:e} > exact {u_exact:e}"))?;
        ratios.push(if u_exact > 0.0 { u_greedy / u_exact } else { 1.0 });
    }
    ratios.sort_by(f64::total_cmp);
    let q = |p: f64| ratios[((ratios.len() - 1) as f64 * p).round() as usize];
    let optimal = ratios.iter().filter(|&&r| r == 1.0).count();
    let report = format!(
        "greedy/exact over 200: min {:.4} p10 {:.4} p25 {:.4} median {:.4} p90 {:.4} max {:.4}; optimal on {optimal}",
        q(0.0),
        q(0.1),
        q(0.25),
        q(0.5),
        q(0.9),
        q(1.0)
    );
    check(q(0.5) >= 0.9, || format!("median ratio below 0.9; {report}"))?;
    Ok(format!("exact == enumeration on 200 instances; {report}"))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn sum_rate(g: &[f64], p: &[f64]) -> f64 {
    g.iter().zip(p).map(|(g, p)| (1.0 + g * p).log2()).sum()
}

fn waterfilling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_kkt, mut worst_sum) = (0.0f64, 0.0f64);
    for i in 0..1000 {
        let n = rng.gen_range(1..=24);
        let g: Vec<f64> = (0..n).map(|_| log_uniform(&mut rng, 1e-3, 1e6)).collect();
        let total = log_uniform(&mut rng, 1e-3, 1e3);
        let p = waterfill_power(&g, total).map_err(|e| e.to_string())?;
        check(p.iter().all(|&x| x >= 0.0), || format!("instance {i}: negative power"))?;
        // Level from the active set; inactive floors must sit at or above it.
        let active: Vec<usize> = (0..n).filter(|&k| p[k] > 0.0).collect();
        let level = (total + active.iter().map(|&k| 1.0 / g[k]).sum::<f64>()) / active.len() as f64;
        let mut kkt = 0.0f64;
        for k in 0..n {
            let r = if p[k] > 0.0 { (p[k] + 1.0 / g[k] - level).abs() } else { (level - 1.0 / g[k]).max(0.0) };
            kkt = kkt.max(r / level);
        }
        let sum_err = (p.iter().sum::<f64>() - total).abs() / total;
        check(kkt <= 1e-9, || format!("instance {i}: KKT residual {kkt:e}"))?;
        check(sum_err <= 1e-12, || format!("instance {i}: power error {sum_err:e}"))?;
        worst_kkt = worst_kkt.max(kkt);
        worst_sum = worst_sum.max(sum_err);
    }
    let mut min_margin = f64::INFINITY;
    for i in 0..20 {
        let n = rng.gen_range(2..=12);
        let g: Vec<f64> = (0..n).map(|_| log_uniform(&mut rng, 1e-2, 1e4)).collect();
        let total = log_uniform(&mut rng, 1e-2, 1e2);
        let best = sum_rate(&g, &waterfill_power(&g, total).map_err(|e| e.to_string())?);
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..n).map(|_| -rng.gen_range(f64::EPSILON..1.0f64).ln()).collect();
            let s: f64 = w.iter().sum();
            let p: Vec<f64> = w.iter().map(|x| x / s * total).collect();
            let v = sum_rate(&g, &p);
            check(v <= best * (1.0 + 1e-12), || format!("instance {i}: random split {v} beats water-filling {best}"))?;
            min_margin = min_margin.min(best - v);
        }
    }
    Ok(format!(
        "1000 instances: max KKT residual {worst_kkt:.2e}, max power error {worst_sum:.2e}; 20x10^4 random splits, min margin {min_margin:.3e} bit/s/Hz"
    ))
}

fn placement() -> Outcome {
    let side = 10_000.0;
    let mut cfg = ScenarioConfig {
        area_size: AreaSize { width_m: side, height_m: side },
        subareas: vec![SubArea {
            name: "all".into(),
            region: Region::Rect(Rect { x_min: 0.0, x_max: side, y_min: 0.0, y_max: side }),
            user_fraction: 1.0,
            gbs_count: 0,
            tb_count: 0,
        }],
        num_users: 1,
        num_haps: 1,
        ..reference_config()
    };
    cfg.seed = 7;
    let base = build_scenario(&cfg).map_err(|e| e.to_string())?;
    let id = base.stations_of(NodeKind::Hap).next().expect("hap").id;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for run in 0..50u64 {
        let target = (rng.gen_range(0.0..side), rng.gen_range(0.0..side));
        let objective = move |s: &Scenario| {
            let p = s.station(id).expect("hap").position;
            -((p.x - target.0).powi(2) + (p.y - target.1).powi(2))
        };
        let mut sc = base.clone();
        let z = sc.station(id).unwrap().position.z;
        sc.station_mut(id).unwrap().position = Position::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side), z);
        let grid = grid_search(&sc, &[id], objective, 50.0).map_err(|e| e.to_string())?[&id];
        let params = PlacementParams { initial_radius_m: side / 2.0, min_radius_m: 10.0, seed: run, ..Default::default() };
        let out = shrink_and_realign(&sc, &[id], objective, &params).map_err(|e| e.to_string())?;
        let p = out.positions[&id];
        let d = ((p.x - grid.x).powi(2) + (p.y - grid.y).powi(2)).sqrt();
        check(d <= 50.0, || format!("run {run}: {d:.1} m from the grid optimum"))?;
        check(out.trace.windows(2).all(|w| w[1].objective >= w[0].objective), || format!("run {run}: trace decreases"))?;
        worst = worst.max(d);
    }
    Ok(format!("50 starts within 50 m of the 50 m grid optimum (worst {worst:.1} m); all traces non-decreasing"))
}

fn energy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // Integer joule quantities keep every battery update exact in f64.
    let params = EnergyParams {
        p_operating_w: 50.0,
        p_per_user_w: 1.0,
        p_sleep_w: 5.0,
        battery_capacity_j: 0.0,
        slot_duration_s: 900.0,
        harvest_peak_w: 0.0,
    };
    let (mut on_slots, mut clipped_slots) = (0usize, 0usize);
    for i in 0..10_000 {
        let horizon = rng.gen_range(1..=96);
        let standby = params.p_sleep_w * params.slot_duration_s * horizon as f64;
        let capacity = (standby + rng.gen_range(0.0..2e6f64)).round();
        let initial = rng.gen_range(standby..=capacity).round();
        let battery = BatteryState::new(capacity, initial, params.slot_duration_s);
        let harvest = HarvestProfile {
            per_slot_j: (0..horizon).map(|_| if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0..200_000) as f64 }).collect(),
        };
        let demand: Vec<usize> = (0..horizon).map(|_| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(1..20) }).collect();
        let req = SleepRequest { battery: &battery, harvest: &harvest, demand: &demand, tx_power_dbm: 30.0 };
        let plan = sleep_schedule(&[req], horizon, &params).remove(0);
        simulate_plan(0, &req, &plan, &params).map_err(|e| format!("sequence {i}: {e}"))?;
        on_slots += plan.iter().filter(|m| **m == SlotMode::On).count();

        let mut state = battery.clone();
        for (t, &mode) in plan.iter().enumerate() {
            let (next, rec) = step_energy_recorded(&state, t, harvest.at(t), req.consumption(mode, t, &params))
                .map_err(|e| format!("sequence {i}: {e}"))?;
            let lhs = rec.stored_j - rec.previous_j;
            let rhs = rec.harvested_j - rec.consumed_j - rec.clipped_j;
            check(lhs == rhs, || format!("sequence {i} slot {t}: {lhs} != {rhs}"))?;
            check(rec.clipped_j >= 0.0 && (rec.clipped_j == 0.0 || rec.stored_j == capacity), || {
                format!("sequence {i} slot {t}: clipping {} at stored {}", rec.clipped_j, rec.stored_j)
            })?;
            clipped_slots += (rec.clipped_j > 0.0) as usize;
            state = next;
        }
        check(state.is_within_bounds(), || format!("sequence {i}: battery out of bounds"))?;

        let cost = |p: &[SlotMode]| p.iter().enumerate().map(|(t, &m)| req.consumption(m, t, &params)).sum::<f64>();
        let asleep = cost(&vec![SlotMode::Sleep; horizon]);
        for _ in 0..100 {
            let random: Vec<SlotMode> =
                (0..horizon).map(|_| if rng.gen_bool(0.5) { SlotMode::On } else { SlotMode::Sleep }).collect();
            let c = cost(&random);
            check(asleep <= c, || format!("sequence {i}: random plan uses {c} J < all-sleep {asleep} J"))?;
        }
    }
    Ok(format!(
        "10^4 sequences: no causality violation, exact conservation ({clipped_slots} clipped slots, {on_slots} on-slots); all-sleep minimal vs 10^6 random plans"
    ))
}

fn determinism() -> Outcome {
    let spec = SweepSpec {
        swept_parameter: SweptParameter::UserTxPower,
        values: vec![0.0, 20.0, 40.0],
        modes: Mode::ALL.to_vec(),
        backhaul_bandwidth_cases: vec![20e6, 2e9],
        direction: Direction::Uplink,
        replications: 2,
        base_seed: 11,
        placement: true,
    };
    let mut cfg = reference_config();
    cfg.placement.max_rounds = 48;
    let run = |threads: usize| -> Result<String, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        pool.install(|| run_sweep(&spec, &cfg)).map(|r| csv_string(&r)).map_err(|e| e.to_string())
    };
    let reference = run(1)?;
    for threads in [1, 2, 4] {
        let again = run(threads)?;
        check(again == reference, || format!("CSV differs with {threads} threads"))?;
    }
    Ok(format!("{} CSV bytes identical over 4 runs at 1, 1, 2 and 4 threads", reference.len()))
}

fn fso_alignment() -> Outcome {
    let cfg = reference_config();
    let divergence = cfg.channel.fso_divergence_rad;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..1000 {
        let mut pos = || Position::new(rng.gen_range(-2e5..2e5), rng.gen_range(-2e5..2e5), rng.gen_range(0.0..6e5));
        let (tx, rx) = (pos(), pos());
        if tx == rx {
            continue;
        }
        let pointing = optimal_alignment(tx, rx).map_err(|e| e.to_string())?;
        let err = misalignment(tx, rx, &pointing).map_err(|e| e.to_string())?;
        let loss = fso_pointing_loss(err, divergence).map_err(|e| e.to_string())?;
        check(loss == 1.0, || format!("pair {i}: pointing loss {loss}"))?;
    }

    let sc = build_scenario(&cfg).map_err(|e| e.to_string())?;
    let mut hap = sc.stations_of(NodeKind::Hap).next().expect("hap").clone();
    let gw = sc.gateways[0].clone();
    hap.position = Position::new(gw.position.x, gw.position.y, 20_000.0);
    let params = &cfg.channel;
    let (rf_bw, fso_bw) = (hap.backhaul_bandwidth_rf_hz, hap.backhaul_bandwidth_fso_hz);
    let clear = best_medium(&hap, &gw, params, rf_bw, fso_bw).map_err(|e| e.to_string())?;
    let mut foggy = params.clone();
    foggy.fso_atm_attenuation_db_per_km = 100.0;
    let fog = best_medium(&hap, &gw, &foggy, rf_bw, fso_bw).map_err(|e| e.to_string())?;
    check(clear.medium == Medium::Fso, || format!("clear air picked {}", clear.medium))?;
    check(fog.medium == Medium::Rf, || format!("100 dB/km picked {}", fog.medium))?;
    Ok(format!(
        "pointing loss exactly 1 on 1000 pairs; 20 km HAP-gateway: clear air fso ({:.3e} bit/s), 100 dB/km rf ({:.3e} bit/s)",
        clear.max_rate_at_full_band, fog.max_rate_at_full_band
    ))
}

fn report(n: usize, name: &str, started: Instant, outcome: Outcome, failures: &mut usize) {
    let elapsed = started.elapsed();
    let outcome = outcome.and_then(|s| {
        if elapsed <= LIMIT {
            Ok(s)
        } else {
            Err(format!("took {:.1} s (limit {} s); {s}", elapsed.as_secs_f64(), LIMIT.as_secs()))
        }
    });
    match outcome {
        Ok(detail) => println!("PASS criterion {n} {name} [{:.1} s]: {detail}", elapsed.as_secs_f64()),
        Err(detail) => {
            *failures += 1;
            println!("FAIL criterion {n} {name} [{:.1} s]: {detail}", elapsed.as_secs_f64());
        }
    }
}

fn main() {
    // Respect `cargo test -- <filter>` by running nothing for foreign filters.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let mut failures = 0;

    // Criteria 1-3 read the same uplink sweep; its cost is charged to each.
    let t = Instant::now();
    let uplink = uplink_sweep();
    let sweep_time = t.elapsed();
    let timed = |f: &dyn Fn(&SweepResult) -> Outcome| {
        let t = Instant::now();
        let out = f(&uplink);
        (t.checked_sub(sweep_time).unwrap_or(t), out)
    };
    let (t1, o1) = timed(&baseline_ordering);
    report(1, "baseline ordering", t1, o1, &mut failures);
    let (t2, o2) = timed(&magnitude_gap);
    report(2, "magnitude gap", t2, o2, &mut failures);
    let (t3, o3) = timed(&saturation);
    report(3, "saturation", t3, o3, &mut failures);

    let criteria: [(usize, &str, fn() -> Outcome); 7] = [
        (4, "back-haul bandwidth effect", backhaul_bandwidth_effect),
        (5, "association oracle", association_oracle),
        (6, "water-filling", waterfilling),
        (7, "placement", placement),
        (8, "energy", energy),
        (9, "determinism", determinism),
        (10, "fso alignment", fso_alignment),
    ];
    for (n, name, f) in criteria {
        let t = Instant::now();
        let out = f();
        report(n, name, t, out, &mut failures);
    }

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 10 acceptance criteria passed");
}
