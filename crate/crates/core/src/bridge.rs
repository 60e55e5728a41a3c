//! Conversions between vehicle positions and densities, and profile distances.
//!
//! * [`discretize_e`] places vehicles so that consecutive vehicles enclose
//!   exactly one vehicle length of mass.
//! * [`antidiscretize_c`] turns ordered positions into the piecewise-constant
//!   density `ell / gap` between consecutive vehicles.
//! * [`psi_average`] counts vehicles per grid cell, `ell / dx` each.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::micro::MicroState;
use crate::network::{cells_on, RoadId, RoadNetwork};

/// Constant density `value` on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

impl Segment {
    pub fn mass(&self) -> f64 {
        self.value * (self.end - self.start)
    }
}

/// Piecewise-constant density made of sorted, non-overlapping segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PiecewiseDensity {
    segments: Vec<Segment>,
}

impl PiecewiseDensity {
    pub fn new(mut segments: Vec<Segment>) -> Result<Self> {
        segments.sort_by(|a, b| a.start.total_cmp(&b.start));
        for (k, s) in segments.iter().enumerate() {
            if !(s.start.is_finite() && s.end.is_finite() && s.start < s.end) {
                return Err(Error::Config(format!("segment [{}, {}) is empty or not finite", s.start, s.end)));
            }
            if !(s.value >= 0.0 && s.value.is_finite()) {
                return Err(Error::Config(format!("segment density {} is negative", s.value)));
            }
            if k > 0 && segments[k - 1].end > s.start {
                return Err(Error::Config(format!("segments overlap at {}", s.start)));
            }
        }
        Ok(PiecewiseDensity { segments })
    }

    pub fn constant(start: f64, end: f64, value: f64) -> Self {
        Self::new(vec![Segment { start, end, value }]).expect("valid constant segment")
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn mass(&self) -> f64 {
        self.segments.iter().map(Segment::mass).sum()
    }

    pub fn max_value(&self) -> f64 {
        self.segments.iter().map(|s| s.value).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment { value: s.value * factor, ..*s })
            .collect();
        PiecewiseDensity { segments }
    }

    /// Value at `x` (right-continuous).
    pub fn value_at(&self, x: f64) -> f64 {
        self.segments
            .iter()
            .find(|s| s.start <= x && x < s.end)
            .map_or(0.0, |s| s.value)
    }

    /// Exact cell averages over `n` cells of width `dx` starting at 0.
    pub fn cell_averages(&self, n: usize, dx: f64) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for s in &self.segments {
            if s.value == 0.0 {
                continue;
            }
            let first = ((s.start / dx).floor().max(0.0)) as usize;
            let last = ((s.end / dx).ceil() as usize).min(n);
            for (k, cell) in out.iter_mut().enumerate().take(last).skip(first) {
                let lo = (k as f64 * dx).max(s.start);
                let hi = ((k + 1) as f64 * dx).min(s.end);
                if hi > lo {
                    *cell += s.value * (hi - lo) / dx;
                }
            }
        }
        out
    }
}

/// Grid density on one road: `values[k]` is the average over `[k dx, (k+1) dx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub road: RoadId,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl DensityProfile {
    pub fn zeros(road: RoadId, cells: usize, dx: f64) -> Self {
        DensityProfile { road, dx, values: vec![0.0; cells] }
    }

    pub fn length(&self) -> f64 {
        self.values.len() as f64 * self.dx
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx
    }

    pub fn to_piecewise(&self) -> PiecewiseDensity {
        let segments = self
            .values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(k, &v)| Segment { start: k as f64 * self.dx, end: (k + 1) as f64 * self.dx, value: v })
            .collect();
        PiecewiseDensity { segments }
    }
}

/// Zero profiles for every road of `net`, in network order.
pub fn zero_profiles(net: &RoadNetwork, dx: f64) -> Result<Vec<DensityProfile>> {
    net.roads()
        .iter()
        .map(|r| Ok(DensityProfile::zeros(r.id, cells_on(r.id, r.length, dx)?, dx)))
        .collect()
}

/// Number of vehicles of length `ell` carried by `mass`, with the remainder.
pub(crate) fn vehicle_count(mass: f64, ell: f64) -> (usize, f64) {
    let q = mass / ell;
    let n = q.round();
    let remainder = (q - n) * ell;
    (n.max(0.0) as usize, remainder)
}

pub(crate) fn is_whole(mass: f64, ell: f64) -> bool {
    let q = mass / ell;
    (q - q.round()).abs() <= 1e-9 * q.abs().max(1.0)
}

/// Vehicle positions for a density whose mass is a whole number of vehicle
/// lengths. The front vehicle sits at the right end of the support; each
/// vehicle behind it is at the largest `z` leaving mass `ell` on `[z, next)`.
/// Positions are returned in increasing order.
pub fn discretize_e(density: &PiecewiseDensity, ell: f64) -> Result<Vec<f64>> {
    if !(ell > 0.0) {
        return Err(Error::MicroParam(format!("vehicle length {ell} must be positive")));
    }
    let mass = density.mass();
    if !is_whole(mass, ell) {
        let (_, remainder) = vehicle_count(mass, ell);
        return Err(Error::MassNotMultiple { road: 0, mass, remainder });
    }
    let (count, _) = vehicle_count(mass, ell);
    let segs: Vec<&Segment> = density.segments.iter().filter(|s| s.value > 0.0).collect();
    let mut positions = Vec::with_capacity(count);
    if count == 0 {
        return Ok(positions);
    }

    // walk segments right to left; `right_mass` is the mass right of segs[k].end
    let mut k = segs.len() - 1;
    let mut right_mass = 0.0;
    for j in 0..count {
        let target = j as f64 * ell;
        loop {
            let m = segs[k].mass();
            let slack = 1e-12 * (right_mass + m).max(ell);
            if target <= right_mass + m + slack || k == 0 {
                break;
            }
            right_mass += m;
            k -= 1;
        }
        let s = segs[k];
        let z = s.end - (target - right_mass) / s.value;
        positions.push(z.max(s.start));
    }
    positions.reverse();
    Ok(positions)
}

/// Piecewise-constant density `ell / (y[i+1] - y[i])` on each `[y[i], y[i+1])`.
pub fn antidiscretize_c(positions: &[f64], ell: f64) -> Result<PiecewiseDensity> {
    let mut segments = Vec::with_capacity(positions.len().saturating_sub(1));
    for (i, w) in positions.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NotIncreasing(i + 1));
        }
        segments.push(Segment { start: w[0], end: w[1], value: ell / (w[1] - w[0]) });
    }
    Ok(PiecewiseDensity { segments })
}

/// Grid density of the active vehicles: `ell / dx` times the number of
/// vehicles whose road-local position lies in the half-open cell.
pub fn psi_average(state: &MicroState, dx: f64) -> Result<Vec<DensityProfile>> {
    let net = state.network();
    let mut profiles = zero_profiles(net, dx)?;
    let weight = state.params().ell / dx;
    for v in state.vehicles().iter().filter(|v| v.active) {
        let (road_idx, local) = state.road_position(v);
        let profile = &mut profiles[road_idx];
        let cell = (local / dx).floor() as usize;
        if let Some(c) = profile.values.get_mut(cell) {
            *c += weight;
        }
    }
    Ok(profiles)
}

/// `sum_k |a_k - b_k| dx`.
pub fn l1_distance(a: &DensityProfile, b: &DensityProfile) -> Result<f64> {
    if a.road != b.road || a.values.len() != b.values.len() || (a.dx - b.dx).abs() > 1e-12 * a.dx {
        return Err(Error::ProfileMismatch(format!(
            "road {} ({} cells, dx {}) vs road {} ({} cells, dx {})",
            a.road,
            a.values.len(),
            a.dx,
            b.road,
            b.values.len(),
            b.dx
        )));
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() * a.dx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Table {
    pub per_road: Vec<(RoadId, f64)>,
    pub total: f64,
}

/// Per-road and network-summed L1 distance between matching profile sets.
pub fn network_l1(a: &[DensityProfile], b: &[DensityProfile]) -> Result<L1Table> {
    if a.len() != b.len() {
        return Err(Error::ProfileMismatch(format!("{} roads vs {} roads", a.len(), b.len())));
    }
    let per_road = a
        .iter()
        .zip(b)
        .map(|(x, y)| Ok((x.road, l1_distance(x, y)?)))
        .collect::<Result<Vec<_>>>()?;
    let total = per_road.iter().map(|(_, d)| d).sum();
    Ok(L1Table { per_road, total })
}

/// Format with 12 significant digits, `%.12g` style.
pub fn fmt_sig(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= DIGITS {
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{exp}")
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const PROFILE_HEADER: &str = "road_id,cell_index,x_left,density";

pub fn write_profiles_csv<W: Write>(mut w: W, profiles: &[DensityProfile]) -> Result<()> {
    writeln!(w, "{PROFILE_HEADER}")?;
    for p in profiles {
        for (k, v) in p.values.iter().enumerate() {
            writeln!(w, "{},{},{},{}", p.road, k, fmt_sig(k as f64 * p.dx), fmt_sig(*v))?;
        }
    }
    Ok(())
}

/// Inverse of [`write_profiles_csv`]; roads appear in first-seen order.
pub fn read_profiles_csv<R: BufRead>(r: R) -> Result<Vec<DensityProfile>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some(PROFILE_HEADER) {
        return Err(Error::Config("missing profile CSV header".into()));
    }
    let mut out: Vec<DensityProfile> = Vec::new();
    let mut lefts: Vec<Vec<f64>> = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Config(format!("malformed profile row `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let road: RoadId = f[0].parse().map_err(|_| bad())?;
        let cell: usize = f[1].parse().map_err(|_| bad())?;
        let x: f64 = f[2].parse().map_err(|_| bad())?;
        let v: f64 = f[3].parse().map_err(|_| bad())?;
        let idx = match out.iter().position(|p| p.road == road) {
            Some(i) => i,
            None => {
                out.push(DensityProfile { road, dx: 0.0, values: Vec::new() });
                lefts.push(Vec::new());
                out.len() - 1
            }
        };
        if cell != out[idx].values.len() {
            return Err(bad());
        }
        out[idx].values.push(v);
        lefts[idx].push(x);
    }
    for (p, xs) in out.iter_mut().zip(&lefts) {
        p.dx = if xs.len() > 1 { xs[1] - xs[0] } else { 0.0 };
    }
    Ok(out)
}
