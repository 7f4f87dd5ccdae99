//! Seeded Monte-Carlo experiments.
//!
//! Every drop draws from its own ChaCha stream derived from the master seed
//! and a (tag, index) pair, so results do not depend on how rayon schedules
//! the work. Drops with the same number of UEs share positions and link
//! states across schemes and hardware variants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::battery::{
    build_chain, joules_to_mah, mah_to_joules, simulate_trace, size_battery, stationary, stationary_residual,
    states_for_capacity, EmpiricalEnergy, ModalEnergy, NetEnergyDist, Sizing, SocModel, StationaryMethod,
    TraceParams,
};
use crate::channel::{realize_channels, Deployment};
use crate::comm::evaluate_with_rzf;
use crate::energy::{frame_energy, idle_efficiency, FrameConfigs, FrameEnergy};
use crate::hris::{
    bs_pilot_incident, oracle_config, self_configure, sensed_power, ue_pilot_incident, Branch,
    Codebook, HrisConfig, OracleMode, ProbeSettings,
};
use crate::report::{summarize, RunReport, Table, Value};
use crate::scenario::{Scenario, Scheme};
use crate::{Error, Result};

const TAG_BATTERY_TRACE: u64 = 1 << 31;
const TAG_SOC_TRACE: u64 = 1 << 30;

/// Stream `(tag << 32) | index` of the master seed.
pub fn drop_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 32) | (index & 0xFFFF_FFFF));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    SumRate,
    Energy,
    Battery,
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sumrate" => Ok(Experiment::SumRate),
            "energy" => Ok(Experiment::Energy),
            "battery" => Ok(Experiment::Battery),
            other => Err(Error::invalid("experiment", format!("unknown experiment {other:?}"))),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::SumRate => "sumrate",
            Experiment::Energy => "energy",
            Experiment::Battery => "battery",
        })
    }
}

pub fn run_experiment(scenario: &Scenario, experiment: Experiment) -> Result<RunReport> {
    match experiment {
        Experiment::SumRate => run_sumrate_experiment(scenario),
        Experiment::Energy => run_energy_experiment(scenario),
        Experiment::Battery => run_battery_experiment(scenario),
    }
}

fn codebooks_for(dep: &Deployment, scenario: &Scenario, schemes: &[Scheme]) -> Result<BTreeMap<u32, Codebook>> {
    let mut books = BTreeMap::new();
    for s in schemes {
        if let Scheme::WAresQ(q) = *s {
            if let std::collections::btree_map::Entry::Vacant(e) = books.entry(q) {
                e.insert(scenario.codebook(dep, scenario.hris_nx, scenario.hris_nz, q)?);
            }
        }
    }
    Ok(books)
}

/// Reflection configuration a scheme applies on one drop.
pub fn scheme_reflection(
    scheme: Scheme,
    channels: &crate::channel::ChannelSet,
    codebooks: &BTreeMap<u32, Codebook>,
    settings: &ProbeSettings,
) -> Result<HrisConfig> {
    match scheme {
        Scheme::Idle => Ok(HrisConfig::idle(channels.hris_elements(), Branch::Reflection)),
        Scheme::OAres => Ok(oracle_config(channels, OracleMode::Unweighted)),
        Scheme::OwAres => Ok(oracle_config(channels, OracleMode::Weighted)),
        Scheme::WAresQ(q) => {
            let book = codebooks
                .get(&q)
                .ok_or_else(|| Error::invalid("codebook", format!("no {q}-bit codebook prepared")))?;
            Ok(self_configure(book, channels, settings)?.reflection)
        }
    }
}

struct SchemeResult {
    sum_rate: f64,
    direct_fraction: Vec<f64>,
}

/// Average sum-rate of every scheme against the number of UEs.
///
/// Tables: `sumrate_drops`, `sumrate_summary`, `direct_fraction`.
pub fn run_sumrate_experiment(scenario: &Scenario) -> Result<RunReport> {
    scenario.validate()?;
    let dep = scenario.deployment()?;
    let codebooks = codebooks_for(&dep, scenario, &scenario.schemes)?;
    let settings = scenario.probe_settings();
    let (p, noise, eta) = (scenario.tx_power_w(), scenario.noise_w(), scenario.power_splitting);
    let seed = scenario.seed;

    let mut drops_t = Table::new("sumrate_drops", &["scheme", "users", "seed", "drop", "sum_rate_bps_hz"]);
    let mut frac_t = Table::new(
        "direct_fraction",
        &["scheme", "users", "seed", "drop", "ue", "direct_power_fraction"],
    );
    let mut summary_t = Table::new(
        "sumrate_summary",
        &["scheme", "users", "seed", "drops", "mean_bps_hz", "std_bps_hz", "ci95_low", "ci95_high"],
    )
    .plotted_by("scheme");

    let mut per_scheme: Vec<BTreeMap<usize, Vec<f64>>> = vec![BTreeMap::new(); scenario.schemes.len()];
    for &k in &scenario.users {
        log::info!("sum-rate: K = {k}, {} drops", scenario.drops);
        let results: Vec<Vec<SchemeResult>> = (0..scenario.drops)
            .into_par_iter()
            .map(|d| {
                let mut rng = drop_rng(seed, k as u64, d as u64);
                let ch = realize_channels(&dep, k, &mut rng)?;
                scenario
                    .schemes
                    .iter()
                    .map(|&s| {
                        let theta = scheme_reflection(s, &ch, &codebooks, &settings)?;
                        let budget = evaluate_with_rzf(&ch, &theta, eta, p, noise)?;
                        Ok(SchemeResult {
                            sum_rate: budget.sum_rate,
                            direct_fraction: budget.direct_power_fraction,
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (si, scheme) in scenario.schemes.iter().enumerate() {
            let name = scheme.to_string();
            let mut rates = Vec::with_capacity(results.len());
            for (d, res) in results.iter().enumerate() {
                let r = &res[si];
                rates.push(r.sum_rate);
                drops_t.push(vec![name.clone().into(), k.into(), seed.into(), d.into(), r.sum_rate.into()]);
                for (ue, f) in r.direct_fraction.iter().enumerate() {
                    frac_t.push(vec![name.clone().into(), k.into(), seed.into(), d.into(), ue.into(), (*f).into()]);
                }
            }
            per_scheme[si].insert(k, rates);
        }
    }
    for (si, scheme) in scenario.schemes.iter().enumerate() {
        for (&k, rates) in &per_scheme[si] {
            let s = summarize(rates);
            summary_t.push(vec![
                scheme.to_string().into(),
                k.into(),
                seed.into(),
                s.n.into(),
                s.mean.into(),
                s.std.into(),
                s.ci_low.into(),
                s.ci_high.into(),
            ]);
        }
    }
    Ok(RunReport {
        tables: vec![drops_t, summary_t, frac_t],
    })
}

/// Absorption and reflection state of the HRIS after probing on one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct DropEnergy {
    /// Harvester input while the BS transmits (W).
    pub p_abs_bs: f64,
    /// Harvester input while the UEs transmit (W).
    pub p_abs_ue: f64,
    pub reflection: HrisConfig,
    pub phi_b: HrisConfig,
    pub phi_u: HrisConfig,
}

impl DropEnergy {
    fn configs(&self) -> FrameConfigs<'_> {
        FrameConfigs {
            reflection: &self.reflection,
            absorption_dl: &self.phi_b,
            absorption_ul: &self.phi_u,
        }
    }
}

/// Probing, configuration and harvester inputs for `drops` seeded drops.
pub fn drop_energies(
    scenario: &Scenario,
    dep: &Deployment,
    codebook: &Codebook,
    users: usize,
    drops: usize,
) -> Result<Vec<DropEnergy>> {
    let settings = scenario.probe_settings();
    (0..drops)
        .into_par_iter()
        .map(|d| {
            let mut rng = drop_rng(scenario.seed, users as u64, d as u64);
            let ch = realize_channels(dep, users, &mut rng)?;
            let sc = self_configure(codebook, &ch, &settings)?;
            let p_abs_bs = sensed_power(&sc.bs.config, &bs_pilot_incident(&ch, settings.tx_power), settings.eta, settings.noise_var)?;
            let p_abs_ue = sensed_power(&sc.ue.config, &ue_pilot_incident(&ch, settings.tx_power), settings.eta, settings.noise_var)?;
            Ok(DropEnergy {
                p_abs_bs,
                p_abs_ue,
                reflection: sc.reflection,
                phi_b: sc.bs.config,
                phi_u: sc.ue.config,
            })
        })
        .collect()
}

fn drop_frame_energy(
    scenario: &Scenario,
    e: &DropEnergy,
    traffic: f64,
    pin_diode_power_w: f64,
    bits: u32,
    idle: bool,
    nu: f64,
) -> Result<FrameEnergy> {
    frame_energy(
        &scenario.frame_plan(traffic),
        &scenario.harvester_model(),
        &scenario.consumption_model(pin_diode_power_w, bits)?,
        e.p_abs_bs,
        e.p_abs_ue,
        &e.configs(),
        idle,
        nu,
    )
}

/// Harvested and consumed power against HRIS size, phase bits, traffic and
/// diode power, followed by the battery study.
///
/// Tables: `energy_drops`, `energy_summary` and the battery tables.
pub fn run_energy_experiment(scenario: &Scenario) -> Result<RunReport> {
    scenario.validate()?;
    let sweep = &scenario.energy;
    let seed = scenario.seed;
    let users = sweep.users;
    let mut drops_t = Table::new(
        "energy_drops",
        &[
            "scheme",
            "hris_elements",
            "hris_nx",
            "hris_nz",
            "phase_bits",
            "traffic",
            "pin_diode_power_w",
            "users",
            "seed",
            "drop",
            "harvested_w",
            "consumed_w",
        ],
    );
    let mut summary_t = Table::new(
        "energy_summary",
        &[
            "series",
            "scheme",
            "hris_elements",
            "hris_nx",
            "hris_nz",
            "phase_bits",
            "traffic",
            "pin_diode_power_w",
            "users",
            "seed",
            "drops",
            "harvested_mean_w",
            "harvested_ci95_low",
            "harvested_ci95_high",
            "consumed_mean_w",
            "consumed_ci95_low",
            "consumed_ci95_high",
        ],
    )
    .plotted_by("series");

    // rows are grouped per series so the plot file has one block per curve
    let mut series: BTreeMap<(u32, u64, u64), Vec<Vec<Value>>> = BTreeMap::new();
    for &[nx, nz] in &sweep.hris_sizes {
        let dep = scenario.deployment_with(nx, nz)?;
        for &q in &sweep.phase_bits {
            log::info!("energy: N = {nx}x{nz}, Q = {q}, {} drops", scenario.drops);
            let book = scenario.codebook(&dep, nx, nz, q)?;
            let energies = drop_energies(scenario, &dep, &book, users, scenario.drops)?;
            let scheme = Scheme::WAresQ(q).to_string();
            for &traffic in &sweep.traffic_levels {
                for &p_on in &sweep.pin_diode_powers_w {
                    let mut harvested = Vec::with_capacity(energies.len());
                    let mut consumed = Vec::with_capacity(energies.len());
                    for (d, e) in energies.iter().enumerate() {
                        let fe = drop_frame_energy(scenario, e, traffic, p_on, q, false, 1.0)?;
                        let (h, c) = (fe.harvested / scenario.period_s, fe.consumed / scenario.period_s);
                        harvested.push(h);
                        consumed.push(c);
                        drops_t.push(vec![
                            scheme.clone().into(),
                            (nx * nz).into(),
                            nx.into(),
                            nz.into(),
                            q.into(),
                            traffic.into(),
                            p_on.into(),
                            users.into(),
                            seed.into(),
                            d.into(),
                            h.into(),
                            c.into(),
                        ]);
                    }
                    let hs = summarize(&harvested);
                    let cs = summarize(&consumed);
                    let name = format!("Q{q}_traffic{traffic}_pon{p_on}");
                    series
                        .entry((q, traffic.to_bits(), p_on.to_bits()))
                        .or_default()
                        .push(vec![
                            name.into(),
                            scheme.clone().into(),
                            (nx * nz).into(),
                            nx.into(),
                            nz.into(),
                            q.into(),
                            traffic.into(),
                            p_on.into(),
                            users.into(),
                            seed.into(),
                            hs.n.into(),
                            hs.mean.into(),
                            hs.ci_low.into(),
                            hs.ci_high.into(),
                            cs.mean.into(),
                            cs.ci_low.into(),
                            cs.ci_high.into(),
                        ]);
                }
            }
        }
    }
    // BTreeMap over f64 bit patterns orders non-negative values numerically
    for rows in series.into_values() {
        for row in rows {
            summary_t.push(row);
        }
    }
    let mut report = RunReport {
        tables: vec![drops_t, summary_t],
    };
    report.extend(run_battery_experiment(scenario)?);
    Ok(report)
}

/// Net energy of one battery period (`epoch_frames` frames) for every drop
/// and traffic level.
fn epoch_samples(
    scenario: &Scenario,
    energies: &[DropEnergy],
    traffic_levels: &[f64],
    pin_diode_power_w: f64,
    idle: bool,
    nu: f64,
) -> Result<Vec<f64>> {
    let frames = scenario.battery.epoch_frames as f64;
    let mut out = Vec::with_capacity(energies.len() * traffic_levels.len());
    for e in energies {
        for &t in traffic_levels {
            let fe = drop_frame_energy(scenario, e, t, pin_diode_power_w, scenario.phase_bits, idle, nu)?;
            out.push(frames * fe.net());
        }
    }
    Ok(out)
}

// strips the round-trip residue of the J <-> mAh conversion
fn round_mah(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Battery study on the configured HRIS: fitted net-energy statistics,
/// theoretical and empirical `p_LoC` against capacity, capacity sizing, and
/// example state-of-charge traces.
///
/// Tables: `battery_energy`, `battery_ploc`, `battery_sizing`, `soc_traces`.
pub fn run_battery_experiment(scenario: &Scenario) -> Result<RunReport> {
    scenario.validate()?;
    let b = &scenario.battery;
    let seed = scenario.seed;
    let users = scenario.energy.users;
    let voltage = scenario.battery_voltage_v;
    let delta = scenario.step_joules();
    let dep = scenario.deployment()?;
    let book = scenario.codebook(&dep, scenario.hris_nx, scenario.hris_nz, scenario.phase_bits)?;
    log::info!("battery: probing {} drops with K = {users}", scenario.drops);
    let energies = drop_energies(scenario, &dep, &book, users, scenario.drops)?;
    let nu = idle_efficiency(scenario.hris_nx, scenario.hris_nz, scenario.element_spacing_wavelengths)?;

    let mut energy_t = Table::new(
        "battery_energy",
        &[
            "pin_diode_power_w",
            "users",
            "seed",
            "drops",
            "epoch_frames",
            "samples",
            "mean_j",
            "std_j",
            "mean_mah",
            "std_mah",
        ],
    );
    let mut dists = Vec::with_capacity(b.pin_diode_powers_w.len());
    for &p_on in &b.pin_diode_powers_w {
        let samples = epoch_samples(scenario, &energies, &scenario.energy.traffic_levels, p_on, false, nu)?;
        let dist = NetEnergyDist::fit(&samples)?;
        energy_t.push(vec![
            p_on.into(),
            users.into(),
            seed.into(),
            energies.len().into(),
            b.epoch_frames.into(),
            samples.len().into(),
            dist.mean().into(),
            dist.std().into(),
            joules_to_mah(dist.mean(), voltage).into(),
            joules_to_mah(dist.std(), voltage).into(),
        ]);
        dists.push(dist);
    }

    let mut ploc_t = Table::new(
        "battery_ploc",
        &[
            "pin_diode_power_w",
            "capacity_mah",
            "n_states",
            "step_mah",
            "guard_state",
            "users",
            "seed",
            "drop",
            "p_loc_theory",
            "p_loc_empirical",
            "std_error",
            "periods",
            "stationary_residual",
            "method_gap",
        ],
    )
    .plotted_by("pin_diode_power_w");
    let points: Vec<(usize, usize)> = (0..dists.len())
        .flat_map(|i| (0..b.capacities_mah.len()).map(move |j| (i, j)))
        .collect();
    log::info!("battery: {} theory-vs-trace points, {} periods each", points.len(), b.trace_periods);
    let rows: Vec<Vec<Value>> = points
        .par_iter()
        .map(|&(i, j)| {
            let cap = b.capacities_mah[j];
            let s = states_for_capacity(cap, scenario.battery_step_mah)?;
            let chain = build_chain(&dists[i], s, delta, scenario.guard_fraction)?;
            let (theory, residual, gap) = match stationary(&chain, StationaryMethod::LinearSolve) {
                Ok(pi) => {
                    let other = stationary(&chain, StationaryMethod::PowerIteration)?;
                    let gap = (&pi - &other).amax();
                    (crate::battery::loss_of_charge(&chain, &pi), stationary_residual(&chain, &pi), gap)
                }
                Err(Error::Reducible { states }) => {
                    log::warn!("battery: chain for {cap} mAh is reducible (closed class {states:?})");
                    (f64::NAN, f64::NAN, f64::NAN)
                }
                Err(e) => return Err(e),
            };
            let mut params = TraceParams::new(s, delta, chain.guard_state(), b.trace_periods);
            params.burn_in = b.trace_burn_in;
            params.model = SocModel::Quantized;
            let index = (i << 16 | j) as u64;
            let mut rng = drop_rng(seed, TAG_BATTERY_TRACE, index);
            let trace = simulate_trace(&mut dists[i].clone(), &params, &mut rng)?;
            Ok(vec![
                b.pin_diode_powers_w[i].into(),
                cap.into(),
                s.into(),
                scenario.battery_step_mah.into(),
                chain.guard_state().into(),
                users.into(),
                seed.into(),
                index.into(),
                theory.into(),
                trace.empirical_ploc.into(),
                trace.std_error.into(),
                b.trace_periods.into(),
                residual.into(),
                gap.into(),
            ])
        })
        .collect::<Result<_>>()?;
    for row in rows {
        ploc_t.push(row);
    }

    let mut sizing_t = Table::new(
        "battery_sizing",
        &[
            "pin_diode_power_w",
            "target_p_loc",
            "seed",
            "feasible",
            "n_states",
            "step_mah",
            "capacity_mah",
            "p_loc",
        ],
    );
    let deltas = [0.5 * scenario.battery_step_mah, scenario.battery_step_mah];
    let delta_grid: Vec<f64> = deltas.iter().map(|&m| mah_to_joules(m, voltage)).collect();
    for (i, dist) in dists.iter().enumerate() {
        for target in [0.1, 0.01, 0.001] {
            let row: Vec<Value> = match size_battery(dist, &delta_grid, target, scenario.guard_fraction, 101)? {
                Sizing::Feasible {
                    n_states,
                    delta,
                    capacity,
                    p_loc,
                } => vec![
                    b.pin_diode_powers_w[i].into(),
                    target.into(),
                    seed.into(),
                    true.into(),
                    n_states.into(),
                    round_mah(joules_to_mah(delta, voltage)).into(),
                    round_mah(joules_to_mah(capacity, voltage)).into(),
                    p_loc.into(),
                ],
                Sizing::Infeasible => vec![
                    b.pin_diode_powers_w[i].into(),
                    target.into(),
                    seed.into(),
                    false.into(),
                    0usize.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                ],
            };
            sizing_t.push(row);
        }
    }

    let mut soc_t = Table::new(
        "soc_traces",
        &["series", "traffic", "capacity_mah", "users", "seed", "drop", "period", "soc_mah"],
    )
    .plotted_by("series");
    for (ti, &traffic) in b.soc_traffic_levels.iter().enumerate() {
        let active = epoch_samples(scenario, &energies, &[traffic], scenario.pin_diode_power_w, false, nu)?;
        let idle = epoch_samples(scenario, &energies, &[traffic], scenario.pin_diode_power_w, true, nu)?;
        for (ci, &cap) in b.soc_capacities_mah.iter().enumerate() {
            let s = states_for_capacity(cap, scenario.battery_step_mah)?;
            let mut source = ModalEnergy {
                active: EmpiricalEnergy::new(active.clone())?,
                idle: EmpiricalEnergy::new(idle.clone())?,
            };
            let mut params = TraceParams::new(s, delta, crate::battery::guard_state(s, scenario.guard_fraction), b.soc_periods);
            params.model = SocModel::Continuous;
            params.initial_state = (s - 1) / 2;
            params.record_every = 1;
            let index = (ti << 16 | ci) as u64;
            let mut rng = drop_rng(seed, TAG_SOC_TRACE, index);
            let trace = simulate_trace(&mut source, &params, &mut rng)?;
            let name = format!("traffic{traffic}_C{cap}");
            for (t, soc) in trace.soc.iter().enumerate() {
                soc_t.push(vec![
                    name.clone().into(),
                    traffic.into(),
                    cap.into(),
                    users.into(),
                    seed.into(),
                    index.into(),
                    t.into(),
                    joules_to_mah(*soc, voltage).into(),
                ]);
            }
        }
    }

    Ok(RunReport {
        tables: vec![energy_t, ploc_t, sizing_t, soc_t],
    })
}
