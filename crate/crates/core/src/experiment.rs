//! Config-driven micro, macro, comparison and convergence runs.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::bridge::{fmt_sig, network_l1, psi_average, DensityProfile, L1Table, PiecewiseDensity, Segment};
use crate::config::{ExperimentConfig, Rung};
use crate::error::{Error, Result};
use crate::exec::{map_jobs, Execution};
use crate::macroscopic::{FundamentalDiagram, MacroState, TurningCoefficients};
use crate::micro::{seed_vehicles, MicroState, Overlap, SeedOptions, TRAJECTORY_HEADER};
use crate::network::{cells_on, Junction, Path, Road, RoadId, RoadNetwork};

/// A validated experiment: network, paths, turning data and initial densities.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    net: Arc<RoadNetwork>,
    paths: Arc<Vec<Path>>,
    turning: TurningCoefficients,
    initial: BTreeMap<RoadId, PiecewiseDensity>,
    dx: f64,
    exec: Execution,
}

#[derive(Debug, Clone, Serialize)]
pub struct MicroSummary {
    pub ell: f64,
    pub dt: f64,
    pub seed: u64,
    pub vehicles: usize,
    pub vehicles_per_road: Vec<(RoadId, usize)>,
    pub mass_adjustments: Vec<(RoadId, f64)>,
    pub active: usize,
    pub arrived: usize,
    pub entered: Vec<(RoadId, u64)>,
    pub steps: u64,
    pub time: f64,
    /// largest number of overlapped vehicles seen in any step
    pub max_overlaps: usize,
    /// overlapped vehicles found outside the junction zones, summed over steps
    pub stray_overlaps: usize,
    /// steps after which active + arrived differed from `vehicles`
    pub count_violations: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MacroSummary {
    pub dx: f64,
    pub dt: f64,
    pub steps: u64,
    pub time: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub outflow: f64,
    /// worst relative change of mass + outflow over one step
    pub max_step_drift: f64,
    pub max_total: f64,
    pub min_population: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub profiles: Vec<DensityProfile>,
}

#[derive(Debug, Clone)]
pub struct MicroOutcome {
    pub profiles: Vec<DensityProfile>,
    pub summary: MicroSummary,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone)]
pub struct MacroOutcome {
    pub profiles: Vec<DensityProfile>,
    pub summary: MacroSummary,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub table: L1Table,
    pub micro: MicroOutcome,
    pub macro_: MacroOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub ell_n: f64,
    pub dt: f64,
    pub seeds: usize,
    pub mean_l1: f64,
    pub std_l1: f64,
}

/// Micro run settings; `None` fields fall back to the config.
#[derive(Debug, Clone, Copy, Default)]
pub struct MicroRun {
    pub ell: Option<f64>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
}

/// Whether an overlapped vehicle sits where the junction rules allow it:
/// the last `ell` of a road entering a junction, or the first `dt * v_max`
/// of a road leaving one.
pub fn in_junction_zone(net: &RoadNetwork, o: &Overlap, ell: f64, dt: f64, v_max: f64) -> Result<bool> {
    let len = net.length(o.road)?;
    let feeds_junction = !net.head(o.road)?.is_destination();
    let fed_by_junction = !net.tail(o.road)?.is_origin();
    Ok((feeds_junction && o.local > len - ell && o.local <= len)
        || (fed_by_junction && o.local >= 0.0 && o.local < dt * v_max))
}

impl Experiment {
    pub fn from_config(config: ExperimentConfig) -> Result<Self> {
        config.check()?;
        let roads = config.network.roads.iter().map(|r| Road { id: r.id, length: r.length }).collect();
        let junctions = config
            .network
            .junctions
            .iter()
            .map(|j| Junction::new(j.id, j.inc.clone(), j.out.clone()))
            .collect();
        let net = RoadNetwork::with_terminals(roads, junctions)?;
        let paths = net.enumerate_paths()?;

        let mut turning = TurningCoefficients::default();
        for t in &config.turning {
            turning.set(t.from, t.to, t.p);
        }
        turning.validate(&net)?;

        let dx = match (config.macro_.dx, config.macro_.cells_per_road) {
            (Some(dx), _) => dx,
            (None, Some(n)) => {
                let shortest = net.roads().iter().map(|r| r.length).fold(f64::INFINITY, f64::min);
                shortest / n as f64
            }
            (None, None) => unreachable!("checked by config"),
        };
        for r in net.roads() {
            cells_on(r.id, r.length, dx)?;
        }

        let mut initial = BTreeMap::new();
        for init in &config.initial {
            let len = net.length(init.road)?;
            let density = match (&init.density, &init.segments) {
                (Some(v), None) => PiecewiseDensity::constant(0.0, len, *v),
                (None, Some(segs)) => PiecewiseDensity::new(
                    segs.iter().map(|s| Segment { start: s.start, end: s.end, value: s.density }).collect(),
                )?,
                _ => unreachable!("checked by config"),
            };
            let out_of_road = density.segments().iter().any(|s| s.start < 0.0 || s.end > len * (1.0 + 1e-12));
            if out_of_road {
                return Err(Error::Config(format!("initial density on road {} extends past the road", init.road)));
            }
            if let Some(s) = density.segments().iter().find(|s| !(0.0..=1.0).contains(&s.value)) {
                return Err(Error::DensityOutOfRange(s.value));
            }
            if initial.insert(init.road, density).is_some() {
                return Err(Error::Config(format!("initial density for road {} given twice", init.road)));
            }
        }

        let exec = config.execution;
        let exp = Experiment { config, net: Arc::new(net), paths: Arc::new(paths), turning, initial, dx, exec };
        // surface split errors (e.g. multi-origin roads) before any stepping
        exp.macro_state()?;
        Ok(exp)
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn diagram(&self) -> FundamentalDiagram {
        FundamentalDiagram::new(self.config.v_max)
    }

    /// True if some junction has several exits, so vehicle routes are random.
    pub fn is_stochastic(&self) -> bool {
        self.net.junctions().iter().any(|j| j.out.len() > 1)
    }

    /// Vehicle length from the config, either given or derived from a
    /// vehicle count and the total initial mass.
    pub fn default_ell(&self) -> Result<f64> {
        match (self.config.micro.ell_n, self.config.micro.vehicles) {
            (Some(ell), _) => Ok(ell),
            (None, Some(n)) => {
                let mass: f64 = self.initial.values().map(PiecewiseDensity::mass).sum();
                if mass <= 0.0 {
                    return Err(Error::Config("a vehicle count needs a non-empty initial density".into()));
                }
                Ok(mass / n as f64)
            }
            (None, None) => unreachable!("checked by config"),
        }
    }

    /// Cell averages of the initial densities on the macro grid.
    pub fn initial_profiles(&self) -> Vec<DensityProfile> {
        self.net
            .roads()
            .iter()
            .map(|r| {
                let n = (r.length / self.dx).round() as usize;
                let values = match self.initial.get(&r.id) {
                    Some(d) => d.cell_averages(n, self.dx),
                    None => vec![0.0; n],
                };
                DensityProfile { road: r.id, dx: self.dx, values }
            })
            .collect()
    }

    pub fn micro_state(&self, run: MicroRun) -> Result<(MicroState, crate::micro::SeedReport)> {
        let opts = SeedOptions {
            ell: match run.ell {
                Some(ell) => ell,
                None => self.default_ell()?,
            },
            v_max: self.config.v_max,
            dt: run.dt.unwrap_or(self.config.micro.dt),
            seed: run.seed.unwrap_or(self.config.micro.seed),
            adaptive_cfl: self.config.micro.adaptive_cfl,
            strict_mass: self.config.micro.strict_mass,
        };
        let (state, report) =
            seed_vehicles(self.net.clone(), self.paths.clone(), &self.initial, &self.turning, &opts)?;
        Ok((state.with_execution(self.exec), report))
    }

    pub fn macro_state(&self) -> Result<MacroState> {
        let state = MacroState::from_totals(
            self.net.clone(),
            self.paths.clone(),
            self.diagram(),
            self.dx,
            self.config.macro_.dt,
            &self.initial_profiles(),
            &self.turning,
        )?;
        Ok(state.with_execution(self.exec))
    }

    fn snapshot_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> =
            self.config.snapshots.iter().copied().filter(|&t| t < self.config.t_final).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// Seed, step to the final time and average onto the macro grid.
    ///
    /// Snapshots are taken at the first step reaching each requested time.
    /// When `trajectories` is given every step is appended to it as CSV.
    pub fn run_micro(&self, run: MicroRun, mut trajectories: Option<&mut dyn Write>) -> Result<MicroOutcome> {
        let started = Instant::now();
        let (mut state, report) = self.micro_state(run)?;
        let params = *state.params();
        let total = state.vehicles().len();
        let dx = self.dx;

        if let Some(w) = trajectories.as_deref_mut() {
            writeln!(w, "{TRAJECTORY_HEADER}")?;
            state.write_trajectory(&mut *w)?;
        }
        let pending = self.snapshot_times();
        let mut next_snap = 0;
        let mut snapshots = Vec::new();
        if pending.first() == Some(&0.0) {
            snapshots.push(Snapshot { time: 0.0, profiles: psi_average(&state, dx)? });
            next_snap = 1;
        }

        let mut max_overlaps = 0;
        let mut stray = 0;
        let mut count_violations = 0;
        let mut failure: Option<Error> = None;
        state.run_until(self.config.t_final, |s, step| {
            if failure.is_some() {
                return;
            }
            let mut check = || -> Result<()> {
                max_overlaps = max_overlaps.max(step.overlaps.len());
                for o in &step.overlaps {
                    if !in_junction_zone(s.network(), o, params.ell, step.dt, params.v_max)? {
                        stray += 1;
                    }
                }
                if s.active_count() + s.arrived() != total {
                    count_violations += 1;
                }
                if let Some(w) = trajectories.as_deref_mut() {
                    s.write_trajectory(&mut *w)?;
                }
                while next_snap < pending.len() && s.time() >= pending[next_snap] - 1e-9 * step.dt {
                    snapshots.push(Snapshot { time: s.time(), profiles: psi_average(s, dx)? });
                    next_snap += 1;
                }
                Ok(())
            };
            if let Err(e) = check() {
                failure = Some(e);
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        // overlaps present in the final state are not reported by any step
        let last = state.overlaps();
        max_overlaps = max_overlaps.max(last.len());
        for o in &last {
            if !in_junction_zone(&self.net, o, params.ell, params.dt, params.v_max)? {
                stray += 1;
            }
        }

        let profiles = psi_average(&state, dx)?;
        let entered = self
            .net
            .roads()
            .iter()
            .map(|r| Ok((r.id, state.entered(r.id)?)))
            .collect::<Result<Vec<_>>>()?;
        let summary = MicroSummary {
            ell: params.ell,
            dt: params.dt,
            seed: params.seed,
            vehicles: total,
            vehicles_per_road: report.vehicles_per_road,
            mass_adjustments: report.mass_adjustments,
            active: state.active_count(),
            arrived: state.arrived(),
            entered,
            steps: state.steps(),
            time: state.time(),
            max_overlaps,
            stray_overlaps: stray,
            count_violations,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        Ok(MicroOutcome { profiles, summary, snapshots })
    }

    pub fn run_macro(&self) -> Result<MacroOutcome> {
        let started = Instant::now();
        let mut state = self.macro_state()?;
        let initial_mass = state.mass();
        let pending = self.snapshot_times();
        let mut next_snap = 0;
        let mut snapshots = Vec::new();
        if pending.first() == Some(&0.0) {
            snapshots.push(Snapshot { time: 0.0, profiles: state.total_density_per_road() });
            next_snap = 1;
        }
        let mut before = initial_mass;
        let mut max_drift: f64 = 0.0;
        let mut max_total = state.max_total();
        let mut min_population = state.min_population();
        state.run_until(self.config.t_final, |s| {
            let now = s.mass() + s.outflow();
            if initial_mass > 0.0 {
                max_drift = max_drift.max((now - before).abs() / initial_mass);
            }
            before = now;
            max_total = max_total.max(s.max_total());
            min_population = min_population.min(s.min_population());
            while next_snap < pending.len() && s.time() >= pending[next_snap] - 1e-9 * s.dt() {
                snapshots.push(Snapshot { time: s.time(), profiles: s.total_density_per_road() });
                next_snap += 1;
            }
        });
        let summary = MacroSummary {
            dx: state.dx(),
            dt: state.dt(),
            steps: state.steps(),
            time: state.time(),
            initial_mass,
            final_mass: state.mass(),
            outflow: state.outflow(),
            max_step_drift: max_drift,
            max_total,
            min_population,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        Ok(MacroOutcome { profiles: state.total_density_per_road(), summary, snapshots })
    }

    pub fn run_compare(&self, run: MicroRun) -> Result<CompareOutcome> {
        let micro = self.run_micro(run, None)?;
        let macro_ = self.run_macro()?;
        let table = network_l1(&micro.profiles, &macro_.profiles)?;
        Ok(CompareOutcome { table, micro, macro_ })
    }

    /// Network L1 distance between micro and macro at each rung. Stochastic
    /// networks average over `seeds` replicas seeded `base, base+1, ...`;
    /// deterministic ones use a single run.
    pub fn run_convergence(&self, ladder: &[Rung], seeds: usize, base_seed: u64) -> Result<Vec<ConvergenceRow>> {
        if ladder.is_empty() {
            return Err(Error::Config("convergence ladder is empty".into()));
        }
        if ladder.windows(2).any(|w| w[1].ell_n >= w[0].ell_n) {
            return Err(Error::Config("convergence ladder must have decreasing ell_n".into()));
        }
        let seeds = if self.is_stochastic() { seeds.max(1) } else { 1 };
        let reference = self.run_macro()?.profiles;
        let jobs: Vec<(usize, u64)> =
            (0..ladder.len()).flat_map(|r| (0..seeds as u64).map(move |k| (r, base_seed.wrapping_add(k)))).collect();
        // each replica steps sequentially; the pool spreads replicas instead
        let serial = self.clone().with_execution(Execution::Sequential);
        let results = map_jobs(self.exec, jobs, |(r, seed)| -> Result<(usize, f64)> {
            let run = MicroRun { ell: Some(ladder[r].ell_n), dt: Some(ladder[r].dt), seed: Some(seed) };
            let micro = serial.run_micro(run, None)?;
            Ok((r, network_l1(&micro.profiles, &reference)?.total))
        });
        let mut per_rung = vec![Vec::new(); ladder.len()];
        for res in results {
            let (r, l1) = res?;
            per_rung[r].push(l1);
        }
        Ok(ladder
            .iter()
            .zip(per_rung)
            .map(|(rung, l1s)| {
                let n = l1s.len() as f64;
                let mean = l1s.iter().sum::<f64>() / n;
                let var = if l1s.len() > 1 { l1s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                ConvergenceRow { ell_n: rung.ell_n, dt: rung.dt, seeds: l1s.len(), mean_l1: mean, std_l1: var.sqrt() }
            })
            .collect())
    }
}

pub const L1_HEADER: &str = "road_id,L1";
pub const CONVERGENCE_HEADER: &str = "ell_n,dt,seeds,mean_L1,std_L1";

/// `road_id,L1` rows followed by a `total` row.
pub fn write_l1_csv<W: Write>(mut w: W, table: &L1Table) -> Result<()> {
    writeln!(w, "{L1_HEADER}")?;
    for (road, l1) in &table.per_road {
        writeln!(w, "{road},{}", fmt_sig(*l1))?;
    }
    writeln!(w, "total,{}", fmt_sig(table.total))?;
    Ok(())
}

pub fn write_convergence_csv<W: Write>(mut w: W, rows: &[ConvergenceRow]) -> Result<()> {
    writeln!(w, "{CONVERGENCE_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", fmt_sig(r.ell_n), fmt_sig(r.dt), r.seeds, fmt_sig(r.mean_l1), fmt_sig(r.std_l1))?;
    }
    Ok(())
}
