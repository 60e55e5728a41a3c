//! Follow-the-leader dynamics on a road network.
//!
//! Each vehicle owns a full origin-to-destination path and is stored by its
//! path coordinate. The vehicle in front is the nearest active vehicle, of
//! any population, found further along the vehicle's own remaining path; the
//! gap to it sums the rest of the current road, any empty roads in between and
//! the front vehicle's progress on its road. Vehicles whose gap drops to the
//! vehicle length or below stop until room opens up again.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bridge::{discretize_e, is_whole, vehicle_count, PiecewiseDensity};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::macroscopic::TurningCoefficients;
use crate::network::{Path, RoadId, RoadNetwork};

/// `v_max (1 - ell / gap)`, the Greenshields speed seen through the gap.
pub fn velocity_w(gap: f64, ell: f64, v_max: f64) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(Error::NonPositiveGap(gap));
    }
    Ok(v_max * (1.0 - ell / gap))
}

/// [`velocity_w`] extended by zero for gaps not exceeding the vehicle length.
pub fn velocity_w_star(gap: f64, ell: f64, v_max: f64) -> Result<f64> {
    if gap < 0.0 || gap.is_nan() {
        return Err(Error::NegativeGap(gap));
    }
    Ok(w_star(gap, ell, v_max))
}

#[inline]
fn w_star(gap: f64, ell: f64, v_max: f64) -> f64 {
    if gap <= ell {
        0.0
    } else {
        v_max * (1.0 - ell / gap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroParams {
    /// vehicle length
    pub ell: f64,
    /// number of vehicles seeded
    pub n: usize,
    pub v_max: f64,
    pub dt: f64,
    pub seed: u64,
    /// recompute the stable step every step and use 0.9 of it (capped by `dt`)
    pub adaptive_cfl: bool,
}

impl MicroParams {
    /// Total vehicle length, `ell * n`.
    pub fn total_length(&self) -> f64 {
        self.ell * self.n as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(Error::MicroParam(format!("vehicle length {} must be positive", self.ell)));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::MicroParam(format!("v_max {} must be positive", self.v_max)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::MicroParam(format!("dt {} must be positive", self.dt)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vehicle {
    /// unique, increasing front-to-back tie breaker: larger label is in front
    pub label: u64,
    pub path: usize,
    /// distance from the origin of `path`
    pub s: f64,
    /// index of the current road within the path
    pub leg: usize,
    pub active: bool,
}

/// A follower whose gap is below the vehicle length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub label: u64,
    pub road: RoadId,
    pub local: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub dt: f64,
    /// overlapped followers in the state the step started from
    pub overlaps: Vec<Overlap>,
    pub arrivals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Probe {
    next: u32,
    gap: f64,
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct MicroState {
    params: MicroParams,
    net: Arc<RoadNetwork>,
    paths: Arc<Vec<Path>>,
    vehicles: Vec<Vehicle>,
    time: f64,
    steps: u64,
    arrived: usize,
    /// vehicles that moved onto each road (dense index) since t = 0
    entered: Vec<u64>,
    exec: Execution,
    /// per road, active vehicle indices sorted rear to front
    buckets: Vec<VecDeque<u32>>,
    /// slot id of each bucket's rear element; slot ids survive push_front
    front_id: Vec<i64>,
    /// slot id of each vehicle within its bucket
    rank: Vec<i64>,
    /// per vehicle: road-local position, dense road index, and the path
    /// coordinates where the current road starts and ends
    locals: Vec<f64>,
    road_of: Vec<u32>,
    leg_start: Vec<f64>,
    leg_end: Vec<f64>,
    probes: Vec<Probe>,
    departures: Vec<u32>,
    entrants: Vec<u32>,
}

impl MicroState {
    /// State with vehicles at the given `(path, path coordinate)` pairs.
    /// Labels follow the order given.
    pub fn from_positions(
        net: Arc<RoadNetwork>,
        paths: Arc<Vec<Path>>,
        params: MicroParams,
        positions: &[(usize, f64)],
    ) -> Result<Self> {
        params.validate()?;
        let mut vehicles = Vec::with_capacity(positions.len());
        for (label, &(path, s)) in positions.iter().enumerate() {
            let p = paths
                .get(path)
                .ok_or_else(|| Error::MicroParam(format!("unknown path {path}")))?;
            if !(0.0..=p.total_length()).contains(&s) {
                return Err(Error::PositionOutOfRange { pos: s, max: p.total_length() });
            }
            let (leg, _) = p.locate(s);
            vehicles.push(Vehicle { label: label as u64, path, s, leg, active: true });
        }
        let roads = net.road_count();
        let mut state = MicroState {
            params,
            net,
            paths,
            rank: vec![0; vehicles.len()],
            locals: vec![0.0; vehicles.len()],
            road_of: vec![0; vehicles.len()],
            leg_start: vec![0.0; vehicles.len()],
            leg_end: vec![0.0; vehicles.len()],
            departures: vec![0; roads],
            entrants: Vec::new(),
            probes: vec![Probe { next: NONE, gap: f64::INFINITY }; vehicles.len()],
            vehicles,
            time: 0.0,
            steps: 0,
            arrived: 0,
            entered: vec![0; roads],
            exec: Execution::default(),
            buckets: vec![VecDeque::new(); roads],
            front_id: vec![0; roads],
        };
        state.rebuild_occupancy();
        Ok(state)
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn params(&self) -> &MicroParams {
        &self.params
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn active_count(&self) -> usize {
        self.vehicles.len() - self.arrived
    }

    pub fn arrived(&self) -> usize {
        self.arrived
    }

    /// Vehicles that crossed a junction onto `road` so far.
    pub fn entered(&self, road: RoadId) -> Result<u64> {
        Ok(self.entered[self.net.index_of(road)?])
    }

    /// Dense road index and road-local position of a vehicle.
    pub fn road_position(&self, v: &Vehicle) -> (usize, f64) {
        let p = &self.paths[v.path];
        (p.road_indices()[v.leg], v.s - p.offsets()[v.leg])
    }

    /// Road id and road-local position of a vehicle.
    pub fn location(&self, i: usize) -> (RoadId, f64) {
        let v = &self.vehicles[i];
        let p = &self.paths[v.path];
        (p.roads()[v.leg], v.s - p.offsets()[v.leg])
    }

    fn cache_leg(&mut self, i: usize) {
        let v = &self.vehicles[i];
        let p = &self.paths[v.path];
        self.leg_start[i] = p.offsets()[v.leg];
        self.leg_end[i] = p.offsets().get(v.leg + 1).copied().unwrap_or(p.total_length());
        self.road_of[i] = p.road_indices()[v.leg] as u32;
        self.locals[i] = v.s - self.leg_start[i];
    }

    /// Sort every road's vehicles from scratch.
    fn rebuild_occupancy(&mut self) {
        for b in self.buckets.iter_mut() {
            b.clear();
        }
        for i in 0..self.vehicles.len() {
            self.cache_leg(i);
            if self.vehicles[i].active {
                self.buckets[self.road_of[i] as usize].push_back(i as u32);
            }
        }
        for r in 0..self.buckets.len() {
            self.sort_bucket(r);
        }
    }

    // labels equal indices, so ties break on the index
    fn sort_bucket(&mut self, r: usize) {
        let locals = &self.locals;
        self.buckets[r]
            .make_contiguous()
            .sort_by(|&a, &b| locals[a as usize].total_cmp(&locals[b as usize]).then(a.cmp(&b)));
        self.front_id[r] = 0;
        for (k, &i) in self.buckets[r].iter().enumerate() {
            self.rank[i as usize] = k as i64;
        }
    }

    /// Drop departed vehicles from the front of their old roads and add
    /// entrants at the rear of their new ones. Falls back to sorting when
    /// vehicles did not keep their order.
    fn update_occupancy(&mut self) {
        for r in 0..self.buckets.len() {
            for _ in 0..std::mem::take(&mut self.departures[r]) {
                match self.buckets[r].pop_back() {
                    Some(i) if !self.vehicles[i as usize].active || self.road_of[i as usize] as usize != r => {}
                    _ => {
                        self.departures.fill(0);
                        self.entrants.clear();
                        return self.rebuild_occupancy();
                    }
                }
            }
        }
        let mut entrants = std::mem::take(&mut self.entrants);
        let (locals, road_of) = (&self.locals, &self.road_of);
        entrants.sort_by(|&a, &b| {
            let (a, b) = (a as usize, b as usize);
            road_of[a].cmp(&road_of[b]).then(locals[b].total_cmp(&locals[a])).then(b.cmp(&a))
        });
        for &i in &entrants {
            let r = self.road_of[i as usize] as usize;
            self.buckets[r].push_front(i);
            self.front_id[r] -= 1;
            self.rank[i as usize] = self.front_id[r];
        }
        entrants.clear();
        self.entrants = entrants;

        for r in 0..self.buckets.len() {
            let locals = &self.locals;
            let before = |x: u32, y: u32| {
                let (lx, ly) = (locals[x as usize], locals[y as usize]);
                lx < ly || (lx == ly && x < y)
            };
            let (a, b) = self.buckets[r].as_slices();
            let sorted = a.windows(2).all(|w| before(w[0], w[1]))
                && b.windows(2).all(|w| before(w[0], w[1]))
                && match (a.last(), b.first()) {
                    (Some(&x), Some(&y)) => before(x, y),
                    _ => true,
                };
            if !sorted {
                self.sort_bucket(r);
            }
        }
    }

    #[inline]
    fn probe(&self, i: usize) -> Probe {
        let v = &self.vehicles[i];
        if !v.active {
            return Probe { next: NONE, gap: f64::INFINITY };
        }
        let local = self.locals[i];
        let road = self.road_of[i] as usize;
        let bucket = &self.buckets[road];
        let k = (self.rank[i] - self.front_id[road]) as usize + 1;
        if let Some(&j) = bucket.get(k) {
            return Probe { next: j, gap: self.locals[j as usize] - local };
        }
        let p = &self.paths[v.path];
        let roads = p.road_indices();
        let mut acc = self.leg_end[i] - self.leg_start[i] - local;
        for leg in v.leg + 1..roads.len() {
            if let Some(&j) = self.buckets[roads[leg]].front() {
                return Probe { next: j, gap: acc + self.locals[j as usize] };
            }
            acc += p.lengths()[leg];
        }
        Probe { next: NONE, gap: f64::INFINITY }
    }

    fn check_active(&self, i: usize) -> Result<()> {
        match self.vehicles.get(i) {
            Some(v) if v.active => Ok(()),
            _ => Err(Error::InactiveVehicle(i)),
        }
    }

    /// Index of the vehicle in front of `i`, or `None` for a leader.
    pub fn find_next(&self, i: usize) -> Result<Option<usize>> {
        self.check_active(i)?;
        let pr = self.probe(i);
        Ok((pr.next != NONE).then_some(pr.next as usize))
    }

    /// Distance along `i`'s path to the vehicle in front.
    pub fn gap(&self, i: usize) -> Result<f64> {
        self.check_active(i)?;
        let pr = self.probe(i);
        if pr.next == NONE {
            return Err(Error::Leader(i));
        }
        Ok(pr.gap)
    }

    /// Largest step keeping followers from passing the vehicle in front:
    /// `min gap^2 / (gap - ell)` over followers with gap above `ell`.
    pub fn cfl_timestep(&self) -> f64 {
        let ell = self.params.ell;
        let v_max = self.params.v_max;
        (0..self.vehicles.len())
            .map(|i| self.probe(i))
            .filter(|p| p.next != NONE && p.gap > ell)
            .map(|p| p.gap * p.gap / (v_max * (p.gap - ell)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Followers currently closer than one vehicle length to the vehicle ahead.
    pub fn overlaps(&self) -> Vec<Overlap> {
        (0..self.vehicles.len())
            .filter_map(|i| {
                let pr = self.probe(i);
                (pr.next != NONE && pr.gap < self.params.ell).then(|| self.overlap_record(i, pr.gap))
            })
            .collect()
    }

    fn overlap_record(&self, i: usize, gap: f64) -> Overlap {
        let (road, local) = self.location(i);
        Overlap { label: self.vehicles[i].label, road, local, gap }
    }

    /// Advance one explicit Euler step with gaps frozen at the start of the step.
    pub fn step(&mut self) -> StepReport {
        self.step_capped(f64::INFINITY)
    }

    /// Like [`MicroState::step`], never stepping past `dt_cap`.
    pub fn step_capped(&mut self, dt_cap: f64) -> StepReport {
        let mut probes = std::mem::take(&mut self.probes);
        probes.resize(self.vehicles.len(), Probe { next: NONE, gap: f64::INFINITY });
        {
            let this = &*self;
            exec::fill_indexed(self.exec, &mut probes, |i| this.probe(i));
        }

        let MicroParams { ell, v_max, .. } = self.params;
        let mut dt = self.params.dt;
        if self.params.adaptive_cfl {
            let cfl = probes
                .iter()
                .filter(|p| p.next != NONE && p.gap > ell)
                .map(|p| p.gap * p.gap / (v_max * (p.gap - ell)))
                .fold(f64::INFINITY, f64::min);
            dt = dt.min(0.9 * cfl);
        }
        dt = dt.min(dt_cap);

        let mut report = StepReport { dt, ..Default::default() };
        for (i, pr) in probes.iter().enumerate() {
            if !self.vehicles[i].active {
                continue;
            }
            let speed = if pr.next == NONE {
                v_max
            } else if pr.gap > ell {
                v_max * (1.0 - ell / pr.gap)
            } else {
                if pr.gap < ell {
                    report.overlaps.push(self.overlap_record(i, pr.gap));
                }
                0.0
            };
            let v = &mut self.vehicles[i];
            v.s += dt * speed;
            if v.s < self.leg_end[i] {
                self.locals[i] = v.s - self.leg_start[i];
                continue;
            }
            self.departures[self.road_of[i] as usize] += 1;
            let p = &self.paths[v.path];
            if v.s >= p.total_length() {
                v.active = false;
                report.arrivals += 1;
                continue;
            }
            let offsets = p.offsets();
            while v.leg + 1 < offsets.len() && v.s >= offsets[v.leg + 1] {
                v.leg += 1;
                self.entered[p.road_indices()[v.leg]] += 1;
            }
            self.cache_leg(i);
            self.entrants.push(i as u32);
        }
        self.arrived += report.arrivals;
        self.probes = probes;
        self.time += dt;
        self.steps += 1;
        self.update_occupancy();
        report
    }

    /// Step until `t_final`, shortening the last step to land on it exactly.
    pub fn run_until(&mut self, t_final: f64, mut on_step: impl FnMut(&MicroState, &StepReport)) {
        // tolerate round-off in the accumulated time
        let eps = 1e-9 * self.params.dt;
        while self.time < t_final - eps {
            let report = self.step_capped(t_final - self.time);
            on_step(self, &report);
        }
    }

    /// Append one trajectory row per vehicle:
    /// `step,time,label,path_id,path_coordinate,active`.
    pub fn write_trajectory<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.vehicles {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.steps,
                crate::bridge::fmt_sig(self.time),
                v.label,
                v.path,
                crate::bridge::fmt_sig(v.s),
                u8::from(v.active)
            )?;
        }
        Ok(())
    }
}

pub const TRAJECTORY_HEADER: &str = "step,time,label,path_id,path_coordinate,active";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedOptions {
    pub ell: f64,
    pub v_max: f64,
    pub dt: f64,
    pub seed: u64,
    pub adaptive_cfl: bool,
    /// reject per-road masses that are not whole multiples of `ell`
    pub strict_mass: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeedReport {
    /// `(road, mass added)` for every road whose density was rescaled
    pub mass_adjustments: Vec<(RoadId, f64)>,
    pub vehicles_per_road: Vec<(RoadId, usize)>,
}

/// Seed vehicles from per-road densities and draw each vehicle's path by
/// chaining turning coefficients from its road to a destination.
pub fn seed_vehicles(
    net: Arc<RoadNetwork>,
    paths: Arc<Vec<Path>>,
    initial: &BTreeMap<RoadId, PiecewiseDensity>,
    turning: &TurningCoefficients,
    opts: &SeedOptions,
) -> Result<(MicroState, SeedReport)> {
    turning.validate(&net)?;
    let mut report = SeedReport::default();
    let mut placed: Vec<(RoadId, f64)> = Vec::new();
    for road in net.roads() {
        let Some(density) = initial.get(&road.id) else {
            report.vehicles_per_road.push((road.id, 0));
            continue;
        };
        let mass = density.mass();
        let mut density = density.clone();
        if !is_whole(mass, opts.ell) {
            let (count, remainder) = vehicle_count(mass, opts.ell);
            if opts.strict_mass {
                return Err(Error::MassNotMultiple { road: road.id, mass, remainder });
            }
            let target = count as f64 * opts.ell;
            density = density.scaled(target / mass);
            report.mass_adjustments.push((road.id, target - mass));
        }
        let ys = discretize_e(&density, opts.ell).map_err(|e| match e {
            Error::MassNotMultiple { mass, remainder, .. } => Error::MassNotMultiple { road: road.id, mass, remainder },
            e => e,
        })?;
        if let Some(&y) = ys.last() {
            if y > road.length || ys[0] < 0.0 {
                return Err(Error::Config(format!("initial density on road {} extends past the road", road.id)));
            }
        }
        report.vehicles_per_road.push((road.id, ys.len()));
        placed.extend(ys.into_iter().map(|y| (road.id, y)));
    }

    // a sampled route from a road onward identifies a unique path
    let mut by_suffix: HashMap<Vec<RoadId>, Vec<usize>> = HashMap::new();
    for p in paths.iter() {
        for k in 0..p.roads().len() {
            by_suffix.entry(p.roads()[k..].to_vec()).or_default().push(p.id);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut positions = Vec::with_capacity(placed.len());
    let mut route = Vec::new();
    for &(road, y) in &placed {
        route.clear();
        route.push(road);
        let mut cur = road;
        loop {
            let head = net.head(cur)?;
            if head.is_destination() {
                break;
            }
            cur = if head.out.len() == 1 {
                head.out[0]
            } else {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = *head.out.last().expect("non-destination junction");
                for &b in &head.out {
                    acc += turning.probability(&net, cur, b)?;
                    if u < acc {
                        pick = b;
                        break;
                    }
                }
                pick
            };
            route.push(cur);
        }
        let candidates = by_suffix.get(&route).map(Vec::as_slice).unwrap_or(&[]);
        let pid = match candidates {
            [p] => *p,
            [] => return Err(Error::RoadNotOnPath { path: usize::MAX, road }),
            _ => return Err(Error::AmbiguousPrefix(road)),
        };
        let p = &paths[pid];
        positions.push((pid, p.to_path_coordinate(road, y)?));
    }

    let params = MicroParams {
        ell: opts.ell,
        n: positions.len(),
        v_max: opts.v_max,
        dt: opts.dt,
        seed: opts.seed,
        adaptive_cfl: opts.adaptive_cfl,
    };
    let state = MicroState::from_positions(net, paths, params, &positions)?;
    let cfl = state.cfl_timestep();
    if !opts.adaptive_cfl && opts.dt >= cfl {
        log::warn!("micro dt {} is not below the initial stable step {cfl}", opts.dt);
    }
    Ok((state, report))
}
