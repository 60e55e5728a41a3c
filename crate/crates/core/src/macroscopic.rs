//! Multi-path LWR model solved with a Godunov-based finite-volume scheme.
//!
//! One density `mu[p]` per origin-destination path. Each path's cells are
//! the cells of its roads laid end to end. Populations interact only through
//! the total density `omega`, the sum of every population living in the same
//! physical cell:
//!
//! ```text
//! mu[k] -= dt/dx * ( mu[k]/omega[k] * g(omega[k], omega[k+1])
//!                  - mu[k-1]/omega[k-1] * g(omega[k-1], omega[k]) )
//! ```
//!
//! with zero ghost cells at both ends of every path.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::bridge::DensityProfile;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::network::{cells_on, Path, RoadId, RoadNetwork};

/// Greenshields diagram `v(rho) = v_max (1 - rho)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalDiagram {
    pub v_max: f64,
}

impl FundamentalDiagram {
    pub fn new(v_max: f64) -> Self {
        FundamentalDiagram { v_max }
    }

    #[inline]
    pub fn velocity(&self, rho: f64) -> f64 {
        self.v_max * (1.0 - rho)
    }

    /// Velocity extended by zero above the maximal density.
    #[inline]
    pub fn velocity_star(&self, rho: f64) -> f64 {
        if rho >= 1.0 {
            0.0
        } else {
            self.velocity(rho)
        }
    }

    #[inline]
    pub fn flux(&self, rho: f64) -> f64 {
        rho * self.velocity(rho)
    }

    /// Critical density, the argmax of the flux.
    #[inline]
    pub fn sigma(&self) -> f64 {
        0.5
    }

    pub fn max_flux(&self) -> f64 {
        self.flux(self.sigma())
    }

    /// Largest characteristic speed, `max |f'|` on `[0, 1]`.
    pub fn max_speed(&self) -> f64 {
        self.v_max
    }
}

/// Godunov flux for densities in `[0, 1]`.
pub fn godunov_flux(rho_minus: f64, rho_plus: f64, fd: &FundamentalDiagram) -> Result<f64> {
    for r in [rho_minus, rho_plus] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::DensityOutOfRange(r));
        }
    }
    Ok(godunov(rho_minus, rho_plus, fd))
}

#[inline]
fn godunov(rm: f64, rp: f64, fd: &FundamentalDiagram) -> f64 {
    let sigma = fd.sigma();
    if rm <= rp {
        fd.flux(rm).min(fd.flux(rp))
    } else if rm < sigma {
        fd.flux(rm)
    } else if rp > sigma {
        fd.flux(rp)
    } else {
        fd.flux(sigma)
    }
}

/// Turning probabilities `P[a -> b]` from incoming road `a` to outgoing road `b`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TurningCoefficients {
    map: BTreeMap<(RoadId, RoadId), f64>,
}

impl TurningCoefficients {
    pub fn set(&mut self, from: RoadId, to: RoadId, p: f64) -> &mut Self {
        self.map.insert((from, to), p);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (RoadId, RoadId, f64)> + '_ {
        self.map.iter().map(|(&(a, b), &p)| (a, b, p))
    }

    /// Probability of turning from `from` onto `to`. A junction with a single
    /// outgoing road needs no coefficient.
    pub fn probability(&self, net: &RoadNetwork, from: RoadId, to: RoadId) -> Result<f64> {
        if let Some(&p) = self.map.get(&(from, to)) {
            return Ok(p);
        }
        let head = net.head(from)?;
        if !head.out.contains(&to) {
            return Err(Error::TurningNotATurn { from, to });
        }
        Ok(if head.out.len() == 1 { 1.0 } else { 0.0 })
    }

    pub fn validate(&self, net: &RoadNetwork) -> Result<()> {
        for (&(a, b), &p) in &self.map {
            if !net.head(a).map(|j| j.out.contains(&b)).unwrap_or(false) {
                return Err(Error::TurningNotATurn { from: a, to: b });
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::TurningRange { from: a, to: b, p });
            }
        }
        for j in net.junctions().iter().filter(|j| !j.is_destination()) {
            for &a in &j.inc {
                let sum = j
                    .out
                    .iter()
                    .map(|&b| self.probability(net, a, b))
                    .sum::<Result<f64>>()?;
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::TurningSum { road: a, sum });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Leg {
    road: usize,
    start: usize,
    cells: usize,
}

/// Per-path densities on a grid shared by all roads.
#[derive(Debug, Clone)]
pub struct MacroState {
    fd: FundamentalDiagram,
    dx: f64,
    dt: f64,
    time: f64,
    steps: u64,
    net: Arc<RoadNetwork>,
    paths: Arc<Vec<Path>>,
    layout: Vec<Vec<Leg>>,
    mu: Vec<Vec<f64>>,
    next: Vec<Vec<f64>>,
    /// total density per road, consistent with `mu`
    totals: Vec<Vec<f64>>,
    outflow: f64,
    exec: Execution,
}

/// Largest stable macro step: `min(0.9, 1/N_inc) dx / v_max`.
pub fn macro_dt_bound(net: &RoadNetwork, fd: &FundamentalDiagram, dx: f64) -> f64 {
    let inc = net.max_incoming().max(1) as f64;
    0.9f64.min(1.0 / inc) * dx / fd.max_speed()
}

impl MacroState {
    /// State from explicit per-path cell densities.
    pub fn new(
        net: Arc<RoadNetwork>,
        paths: Arc<Vec<Path>>,
        fd: FundamentalDiagram,
        dx: f64,
        dt: f64,
        mu: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::MacroParam(format!("dt {dt} must be positive")));
        }
        if !(fd.v_max > 0.0) {
            return Err(Error::MacroParam(format!("v_max {} must be positive", fd.v_max)));
        }
        let bound = macro_dt_bound(&net, &fd, dx);
        if dt > bound * (1.0 + 1e-12) {
            return Err(Error::MacroCfl { dt, bound });
        }
        let road_cells = net
            .roads()
            .iter()
            .map(|r| cells_on(r.id, r.length, dx))
            .collect::<Result<Vec<_>>>()?;
        let layout: Vec<Vec<Leg>> = paths
            .iter()
            .map(|p| {
                let mut start = 0;
                p.road_indices()
                    .iter()
                    .map(|&road| {
                        let leg = Leg { road, start, cells: road_cells[road] };
                        start += leg.cells;
                        leg
                    })
                    .collect()
            })
            .collect();
        if mu.len() != paths.len() {
            return Err(Error::MacroParam(format!("{} density arrays for {} paths", mu.len(), paths.len())));
        }
        for (p, m) in mu.iter().enumerate() {
            let cells: usize = layout[p].iter().map(|l| l.cells).sum();
            if m.len() != cells {
                return Err(Error::MacroParam(format!("path {p} has {cells} cells, got {}", m.len())));
            }
            if let Some(&bad) = m.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::DensityOutOfRange(bad));
            }
        }
        let next = mu.clone();
        let totals = road_cells.iter().map(|&n| vec![0.0; n]).collect();
        let mut state = MacroState {
            fd,
            dx,
            dt,
            time: 0.0,
            steps: 0,
            net,
            paths,
            layout,
            mu,
            next,
            totals,
            outflow: 0.0,
            exec: Execution::default(),
        };
        state.assemble_totals();
        if let Some(&bad) = state.totals.iter().flatten().find(|&&w| w > 1.0 + 1e-12) {
            return Err(Error::DensityOutOfRange(bad));
        }
        Ok(state)
    }

    /// Split per-road total densities into path populations with the turning
    /// coefficients, then build the state.
    pub fn from_totals(
        net: Arc<RoadNetwork>,
        paths: Arc<Vec<Path>>,
        fd: FundamentalDiagram,
        dx: f64,
        dt: f64,
        totals: &[DensityProfile],
        turning: &TurningCoefficients,
    ) -> Result<Self> {
        let mu = split_initial(&net, &paths, totals, turning, dx)?;
        Self::new(net, paths, fd, dx, dt, mu)
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn diagram(&self) -> &FundamentalDiagram {
        &self.fd
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    /// Density of population `p` on its path grid.
    pub fn population(&self, p: usize) -> &[f64] {
        &self.mu[p]
    }

    /// Total mass still on the network.
    pub fn mass(&self) -> f64 {
        self.mu.iter().flatten().sum::<f64>() * self.dx
    }

    /// Mass that has left through destinations.
    pub fn outflow(&self) -> f64 {
        self.outflow
    }

    /// Largest total density over all cells.
    pub fn max_total(&self) -> f64 {
        self.totals.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn min_population(&self) -> f64 {
        self.mu.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    fn assemble_totals(&mut self) {
        for t in &mut self.totals {
            t.fill(0.0);
        }
        for (legs, m) in self.layout.iter().zip(&self.mu) {
            for leg in legs {
                let t = &mut self.totals[leg.road];
                for (w, &x) in t.iter_mut().zip(&m[leg.start..leg.start + leg.cells]) {
                    *w += x;
                }
            }
        }
    }

    /// Total density along path `p`.
    fn omega(&self, p: usize, out: &mut Vec<f64>) {
        out.clear();
        for leg in &self.layout[p] {
            out.extend_from_slice(&self.totals[leg.road]);
        }
    }

    #[inline]
    fn interface_flux(&self, mu: f64, w_left: f64, w_right: f64) -> f64 {
        if w_left > 0.0 {
            mu / w_left * godunov(w_left, w_right, &self.fd)
        } else {
            0.0
        }
    }

    /// Flux leaving path `p` through its destination.
    fn exit_flux(&self, p: usize) -> f64 {
        let last = self.layout[p].last().expect("paths are non-empty");
        let m = &self.mu[p];
        self.interface_flux(m[m.len() - 1], self.totals[last.road][last.cells - 1], 0.0)
    }

    fn update_path(&self, p: usize, out: &mut Vec<f64>) {
        let mu = &self.mu[p];
        let n = mu.len();
        let mut omega = Vec::with_capacity(n);
        self.omega(p, &mut omega);
        let lambda = self.dt / self.dx;
        out.clear();
        out.reserve(n);
        // flux through the left face of cell k; zero ghost upstream
        let mut left = 0.0;
        for k in 0..n {
            let w_next = if k + 1 < n { omega[k + 1] } else { 0.0 };
            let right = self.interface_flux(mu[k], omega[k], w_next);
            out.push(mu[k] - lambda * (right - left));
            left = right;
        }
    }

    /// One step of the multi-path scheme.
    pub fn step(&mut self) {
        let mut next = std::mem::take(&mut self.next);
        {
            let this = &*self;
            exec::for_each_mut(self.exec, &mut next, |p, out| {
                this.update_path(p, out);
            });
        }
        let exit_flux: f64 = (0..self.mu.len()).map(|p| self.exit_flux(p)).sum();
        self.outflow += self.dt * exit_flux;
        self.next = std::mem::replace(&mut self.mu, next);
        self.assemble_totals();
        self.time += self.dt;
        self.steps += 1;
    }

    /// Step until `t_final`; the last step is shortened to land on it.
    pub fn run_until(&mut self, t_final: f64, mut on_step: impl FnMut(&MacroState)) {
        let eps = 1e-9 * self.dt;
        let dt = self.dt;
        while self.time < t_final - eps {
            self.dt = dt.min(t_final - self.time);
            self.step();
            on_step(self);
        }
        self.dt = dt;
    }

    /// Total density on each road, in network order.
    pub fn total_density_per_road(&self) -> Vec<DensityProfile> {
        self.net
            .roads()
            .iter()
            .zip(&self.totals)
            .map(|(r, t)| DensityProfile { road: r.id, dx: self.dx, values: t.clone() })
            .collect()
    }
}

/// Weights of each path on each of its roads: the product of the turning
/// probabilities at the junctions still ahead along the path.
fn path_weights(net: &RoadNetwork, paths: &[Path], turning: &TurningCoefficients) -> Result<Vec<Vec<f64>>> {
    paths
        .iter()
        .map(|p| {
            let roads = p.roads();
            let mut w = vec![1.0; roads.len()];
            for k in (0..roads.len().saturating_sub(1)).rev() {
                w[k] = w[k + 1] * turning.probability(net, roads[k], roads[k + 1])?;
            }
            Ok(w)
        })
        .collect()
}

/// Split per-road total densities into per-path densities.
///
/// Fails on any road carrying density whose path weights do not sum to one,
/// e.g. a road fed by several origins, where turning coefficients alone do
/// not say who is who.
pub fn split_initial(
    net: &RoadNetwork,
    paths: &[Path],
    totals: &[DensityProfile],
    turning: &TurningCoefficients,
    dx: f64,
) -> Result<Vec<Vec<f64>>> {
    turning.validate(net)?;
    let weights = path_weights(net, paths, turning)?;
    let mut by_road: BTreeMap<RoadId, &DensityProfile> = BTreeMap::new();
    for t in totals {
        let n = cells_on(t.road, net.length(t.road)?, dx)?;
        if t.values.len() != n || (t.dx - dx).abs() > 1e-12 * dx {
            return Err(Error::ProfileMismatch(format!("initial density on road {}", t.road)));
        }
        if let Some(&bad) = t.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::DensityOutOfRange(bad));
        }
        by_road.insert(t.road, t);
    }

    for (&road, t) in &by_road {
        if t.values.iter().all(|&v| v == 0.0) {
            continue;
        }
        let sum: f64 = paths
            .iter()
            .zip(&weights)
            .filter_map(|(p, w)| p.leg_of(road).map(|k| w[k]))
            .sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::IllPosedSplit { road, sum });
        }
    }

    paths
        .iter()
        .zip(&weights)
        .map(|(p, w)| {
            let mut mu = Vec::new();
            for (k, (&road, &len)) in p.roads().iter().zip(p.lengths()).enumerate() {
                let n = cells_on(road, len, dx)?;
                match by_road.get(&road) {
                    Some(t) => mu.extend(t.values.iter().map(|&v| v * w[k])),
                    None => mu.extend(std::iter::repeat_n(0.0, n)),
                }
            }
            Ok(mu)
        })
        .collect()
}
