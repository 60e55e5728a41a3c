//! Road networks, origin-destination paths and path coordinates.
//!
//! A path is an origin-to-destination sequence of roads that the models treat
//! as one uninterrupted road. Every position on the network can be expressed
//! either road-locally, as `(road, distance from the road origin)`, or as a
//! path coordinate, the distance from the origin of a given path.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub type RoadId = u32;
pub type JunctionId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Road {
    pub id: RoadId,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: JunctionId,
    pub inc: Vec<RoadId>,
    pub out: Vec<RoadId>,
}

impl Junction {
    pub fn new(id: JunctionId, inc: Vec<RoadId>, out: Vec<RoadId>) -> Self {
        Junction { id, inc, out }
    }

    pub fn is_origin(&self) -> bool {
        self.inc.is_empty()
    }

    pub fn is_destination(&self) -> bool {
        self.out.is_empty()
    }
}

/// Directed graph of roads (arcs) and junctions (nodes).
///
/// Immutable once built; share it behind an `Arc` between simulations.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    roads: Vec<Road>,
    junctions: Vec<Junction>,
    road_index: HashMap<RoadId, usize>,
    /// junction index each road leaves from
    tail: Vec<usize>,
    /// junction index each road flows into
    head: Vec<usize>,
}

impl RoadNetwork {
    /// Build a network where every road already has exactly one tail and one
    /// head junction (origins and destinations listed explicitly).
    pub fn new(roads: Vec<Road>, junctions: Vec<Junction>) -> Result<Self> {
        let mut road_index = HashMap::with_capacity(roads.len());
        for (i, r) in roads.iter().enumerate() {
            if !(r.length.is_finite() && r.length > 0.0) {
                return Err(Error::BadRoadLength(r.id, r.length));
            }
            if road_index.insert(r.id, i).is_some() {
                return Err(Error::DuplicateRoad(r.id));
            }
        }

        let mut seen = BTreeSet::new();
        let mut tails: Vec<Vec<usize>> = vec![Vec::new(); roads.len()];
        let mut heads: Vec<Vec<usize>> = vec![Vec::new(); roads.len()];
        for (j, junction) in junctions.iter().enumerate() {
            if !seen.insert(junction.id) {
                return Err(Error::DuplicateJunction(junction.id));
            }
            for &r in &junction.inc {
                if junction.out.contains(&r) {
                    return Err(Error::JunctionNotDisjoint { junction: junction.id, road: r });
                }
            }
            let lookup = |r: RoadId| {
                road_index
                    .get(&r)
                    .copied()
                    .ok_or(Error::UnknownRoadInJunction { junction: junction.id, road: r })
            };
            for &r in &junction.inc {
                heads[lookup(r)?].push(j);
            }
            for &r in &junction.out {
                tails[lookup(r)?].push(j);
            }
        }

        let mut tail = Vec::with_capacity(roads.len());
        let mut head = Vec::with_capacity(roads.len());
        for (i, r) in roads.iter().enumerate() {
            if tails[i].len() != 1 {
                return Err(Error::RoadTail { road: r.id, count: tails[i].len() });
            }
            if heads[i].len() != 1 {
                return Err(Error::RoadHead { road: r.id, count: heads[i].len() });
            }
            tail.push(tails[i][0]);
            head.push(heads[i][0]);
        }

        Ok(RoadNetwork { roads, junctions, road_index, tail, head })
    }

    /// Like [`RoadNetwork::new`], but roads that leave no listed junction get a
    /// fresh origin, and roads that enter none get a fresh destination.
    pub fn with_terminals(roads: Vec<Road>, mut junctions: Vec<Junction>) -> Result<Self> {
        let mut has_tail = BTreeSet::new();
        let mut has_head = BTreeSet::new();
        for j in &junctions {
            has_head.extend(j.inc.iter().copied());
            has_tail.extend(j.out.iter().copied());
        }
        let mut next_id = junctions.iter().map(|j| j.id).max().map_or(0, |m| m + 1);
        for r in &roads {
            if !has_tail.contains(&r.id) {
                junctions.push(Junction::new(next_id, vec![], vec![r.id]));
                next_id += 1;
            }
        }
        for r in &roads {
            if !has_head.contains(&r.id) {
                junctions.push(Junction::new(next_id, vec![r.id], vec![]));
                next_id += 1;
            }
        }
        Self::new(roads, junctions)
    }

    pub fn roads(&self) -> &[Road] {
        &self.roads
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn road_count(&self) -> usize {
        self.roads.len()
    }

    /// Dense index of a road id (position in [`RoadNetwork::roads`]).
    pub fn index_of(&self, road: RoadId) -> Result<usize> {
        self.road_index.get(&road).copied().ok_or(Error::UnknownRoad(road))
    }

    pub fn length(&self, road: RoadId) -> Result<f64> {
        Ok(self.roads[self.index_of(road)?].length)
    }

    /// Junction the road flows into.
    pub fn head(&self, road: RoadId) -> Result<&Junction> {
        Ok(&self.junctions[self.head[self.index_of(road)?]])
    }

    /// Junction the road leaves from.
    pub fn tail(&self, road: RoadId) -> Result<&Junction> {
        Ok(&self.junctions[self.tail[self.index_of(road)?]])
    }

    pub fn origins(&self) -> impl Iterator<Item = &Junction> {
        self.junctions.iter().filter(|j| j.is_origin())
    }

    pub fn destinations(&self) -> impl Iterator<Item = &Junction> {
        self.junctions.iter().filter(|j| j.is_destination())
    }

    /// Largest number of incoming roads at any junction that has outgoing roads.
    pub fn max_incoming(&self) -> usize {
        self.junctions
            .iter()
            .filter(|j| !j.is_destination())
            .map(|j| j.inc.len())
            .max()
            .unwrap_or(0)
    }

    /// Every simple origin-to-destination path, sorted lexicographically by
    /// road sequence and numbered from zero in that order.
    pub fn enumerate_paths(&self) -> Result<Vec<Path>> {
        if self.origins().next().is_none() {
            return Err(Error::NoOrigins);
        }
        if self.destinations().next().is_none() {
            return Err(Error::NoDestinations);
        }
        self.check_acyclic()?;

        let mut sequences = Vec::new();
        let mut stack = Vec::new();
        for origin in self.origins() {
            for &r in &origin.out {
                self.extend_paths(r, &mut stack, &mut sequences);
            }
        }
        sequences.sort();
        sequences
            .into_iter()
            .enumerate()
            .map(|(id, seq)| Path::new(self, id, seq))
            .collect()
    }

    fn extend_paths(&self, road: RoadId, stack: &mut Vec<RoadId>, out: &mut Vec<Vec<RoadId>>) {
        stack.push(road);
        let head = &self.junctions[self.head[self.road_index[&road]]];
        if head.is_destination() {
            out.push(stack.clone());
        } else {
            for &next in &head.out {
                self.extend_paths(next, stack, out);
            }
        }
        stack.pop();
    }

    fn check_acyclic(&self) -> Result<()> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let mut mark = vec![Mark::New; self.roads.len()];
        // iterative DFS over roads, successor = out roads of the head junction
        for start in 0..self.roads.len() {
            if mark[start] != Mark::New {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            mark[start] = Mark::Open;
            while let Some((r, k)) = stack.pop() {
                let succ = &self.junctions[self.head[r]].out;
                if k < succ.len() {
                    stack.push((r, k + 1));
                    let s = self.road_index[&succ[k]];
                    match mark[s] {
                        Mark::Open => return Err(Error::Cycle(self.roads[s].id)),
                        Mark::New => {
                            mark[s] = Mark::Open;
                            stack.push((s, 0));
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[r] = Mark::Done;
                }
            }
        }
        Ok(())
    }
}

/// An origin-to-destination road sequence with cumulative offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub id: usize,
    roads: Vec<RoadId>,
    /// dense network index of each road
    road_index: Vec<usize>,
    lengths: Vec<f64>,
    offsets: Vec<f64>,
    total_length: f64,
}

impl Path {
    /// Build a path from consecutive roads of `net`.
    pub fn new(net: &RoadNetwork, id: usize, roads: Vec<RoadId>) -> Result<Self> {
        let mut road_index = Vec::with_capacity(roads.len());
        let mut lengths = Vec::with_capacity(roads.len());
        let mut offsets = Vec::with_capacity(roads.len());
        let mut acc = 0.0;
        for (k, &r) in roads.iter().enumerate() {
            let i = net.index_of(r)?;
            if k > 0 {
                let prev = roads[k - 1];
                if !net.head(prev)?.out.contains(&r) {
                    return Err(Error::Config(format!("roads {prev} and {r} are not consecutive")));
                }
                if roads[..k].contains(&r) {
                    return Err(Error::Config(format!("road {r} repeats within a path")));
                }
            }
            road_index.push(i);
            lengths.push(net.roads[i].length);
            offsets.push(acc);
            acc += net.roads[i].length;
        }
        Ok(Path { id, roads, road_index, lengths, offsets, total_length: acc })
    }

    pub fn roads(&self) -> &[RoadId] {
        &self.roads
    }

    pub fn road_indices(&self) -> &[usize] {
        &self.road_index
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    /// Position of `road` in the road sequence.
    pub fn leg_of(&self, road: RoadId) -> Option<usize> {
        self.roads.iter().position(|&r| r == road)
    }

    pub fn contains(&self, road: RoadId) -> bool {
        self.leg_of(road).is_some()
    }

    /// Road-local position to path coordinate.
    pub fn to_path_coordinate(&self, road: RoadId, local: f64) -> Result<f64> {
        let leg = self.leg_of(road).ok_or(Error::RoadNotOnPath { path: self.id, road })?;
        let len = self.lengths[leg];
        if !(0.0..=len).contains(&local) {
            return Err(Error::PositionOutOfRange { pos: local, max: len });
        }
        Ok(self.offsets[leg] + local)
    }

    /// Path coordinate to `(road, local position)`. A coordinate on a road
    /// boundary belongs to the next road, except the path end.
    pub fn from_path_coordinate(&self, s: f64) -> Result<(RoadId, f64)> {
        if !(0.0..=self.total_length).contains(&s) {
            return Err(Error::PositionOutOfRange { pos: s, max: self.total_length });
        }
        let (leg, local) = self.locate(s);
        Ok((self.roads[leg], local))
    }

    /// Leg index and local position for `s`, without range checks.
    pub(crate) fn locate(&self, s: f64) -> (usize, f64) {
        let last = self.roads.len() - 1;
        if s >= self.total_length {
            return (last, self.lengths[last]);
        }
        let leg = self.offsets.partition_point(|&o| o <= s).saturating_sub(1);
        (leg, s - self.offsets[leg])
    }
}

/// Number of grid cells of width `dx` on a road, if `dx` divides its length.
pub fn cells_on(road: RoadId, length: f64, dx: f64) -> Result<usize> {
    let n = (length / dx).round();
    if !(dx > 0.0) || n < 1.0 || (n * dx - length).abs() > 1e-9 * length {
        return Err(Error::GridMismatch { road, length, dx });
    }
    Ok(n as usize)
}

/// Index pairs of path-grid cells lying on roads common to both paths.
pub fn shared_cells(a: &Path, b: &Path, dx: f64) -> Result<Vec<(usize, usize)>> {
    let starts = |p: &Path| -> Result<Vec<usize>> {
        let mut acc = 0;
        let mut v = Vec::with_capacity(p.roads.len());
        for (&r, &len) in p.roads.iter().zip(&p.lengths) {
            v.push(acc);
            acc += cells_on(r, len, dx)?;
        }
        Ok(v)
    };
    let sa = starts(a)?;
    let sb = starts(b)?;
    let mut pairs = Vec::new();
    for (la, &r) in a.roads.iter().enumerate() {
        if let Some(lb) = b.leg_of(r) {
            let n = cells_on(r, a.lengths[la], dx)?;
            pairs.extend((0..n).map(|k| (sa[la] + k, sb[lb] + k)));
        }
    }
    Ok(pairs)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    fn seqs(paths: &[Path]) -> Vec<Vec<RoadId>> {
        paths.iter().map(|p| p.roads().to_vec()).collect()
    }

    #[test]
    fn merge_has_two_paths() {
        let paths = merge(4000.0).enumerate_paths().unwrap();
        assert_eq!(seqs(&paths), vec![vec![1, 3], vec![2, 3]]);
        assert_eq!(paths[1].id, 1);
    }

    #[test]
    fn cross_has_four_paths() {
        let paths = cross(4000.0).enumerate_paths().unwrap();
        assert_eq!(seqs(&paths), vec![vec![1, 3], vec![1, 4], vec![2, 3], vec![2, 4]]);
    }

    #[test]
    fn single_road_has_one_path() {
        let paths = single(10.0).enumerate_paths().unwrap();
        assert_eq!(seqs(&paths), vec![vec![1]]);
        assert_eq!(paths[0].total_length(), 10.0);
    }

    #[test]
    fn cycle_is_rejected() {
        let net = RoadNetwork::new(
            (1..=4).map(|id| Road { id, length: 1.0 }).collect(),
            vec![
                Junction::new(0, vec![], vec![1]),
                Junction::new(1, vec![1, 3], vec![2]),
                Junction::new(2, vec![2], vec![3, 4]),
                Junction::new(3, vec![4], vec![]),
            ],
        );
        // 2 -> 3 -> 2
        let net = net.unwrap();
        assert!(matches!(net.enumerate_paths(), Err(Error::Cycle(_))));
    }

    #[test]
    fn missing_terminals_are_errors() {
        // a closed ring has neither origins nor destinations
        let ring = RoadNetwork::new(
            vec![Road { id: 1, length: 1.0 }, Road { id: 2, length: 1.0 }],
            vec![Junction::new(0, vec![2], vec![1]), Junction::new(1, vec![1], vec![2])],
        )
        .unwrap();
        assert!(matches!(ring.enumerate_paths(), Err(Error::NoOrigins)));
    }

    #[test]
    fn construction_validates() {
        let r = |id, length| Road { id, length };
        assert!(matches!(
            RoadNetwork::with_terminals(vec![r(1, 0.0)], vec![]),
            Err(Error::BadRoadLength(1, _))
        ));
        assert!(matches!(
            RoadNetwork::with_terminals(vec![r(1, 1.0), r(1, 2.0)], vec![]),
            Err(Error::DuplicateRoad(1))
        ));
        assert!(matches!(
            RoadNetwork::with_terminals(vec![r(1, 1.0)], vec![Junction::new(0, vec![1], vec![1])]),
            Err(Error::JunctionNotDisjoint { .. })
        ));
        assert!(matches!(
            RoadNetwork::with_terminals(vec![r(1, 1.0)], vec![Junction::new(0, vec![7], vec![])]),
            Err(Error::UnknownRoadInJunction { road: 7, .. })
        ));
        assert!(matches!(
            RoadNetwork::new(vec![r(1, 1.0)], vec![Junction::new(0, vec![1], vec![])]),
            Err(Error::RoadTail { road: 1, count: 0 })
        ));
    }

    #[test]
    fn path_coordinates() {
        let paths = merge(4000.0).enumerate_paths().unwrap();
        let p = &paths[0];
        assert_eq!(p.to_path_coordinate(3, 100.0).unwrap(), 4100.0);
        assert_eq!(p.to_path_coordinate(1, 0.0).unwrap(), 0.0);
        assert_eq!(p.to_path_coordinate(3, 4000.0).unwrap(), 8000.0);
        assert_eq!(p.to_path_coordinate(3, 4000.0).unwrap(), p.total_length());
        assert!(matches!(p.to_path_coordinate(2, 1.0), Err(Error::RoadNotOnPath { road: 2, .. })));
        assert!(p.to_path_coordinate(1, 4000.5).is_err());

        assert_eq!(p.from_path_coordinate(4000.0).unwrap(), (3, 0.0));
        assert_eq!(p.from_path_coordinate(0.0).unwrap(), (1, 0.0));
        assert_eq!(p.from_path_coordinate(6000.0).unwrap(), (3, 2000.0));
        assert_eq!(p.from_path_coordinate(8000.0).unwrap(), (3, 4000.0));
        assert!(p.from_path_coordinate(-1.0).is_err());
        assert!(p.from_path_coordinate(8000.1).is_err());
    }

    #[test]
    fn shared_cells_merge() {
        let paths = merge(4000.0).enumerate_paths().unwrap();
        let pairs = shared_cells(&paths[0], &paths[1], 40.0).unwrap();
        let expected: Vec<_> = (0..100).map(|k| (100 + k, 100 + k)).collect();
        assert_eq!(pairs, expected);

        let own = shared_cells(&paths[0], &paths[0], 40.0).unwrap();
        assert_eq!(own, (0..200).map(|k| (k, k)).collect::<Vec<_>>());

        assert!(matches!(shared_cells(&paths[0], &paths[1], 30.0), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn shared_cells_disjoint() {
        let paths = cross(400.0).enumerate_paths().unwrap();
        // [1,3] and [2,4] share nothing
        assert!(shared_cells(&paths[0], &paths[3], 40.0).unwrap().is_empty());
    }

    #[test]
    fn shared_cells_symmetric() {
        let paths = cross(400.0).enumerate_paths().unwrap();
        for a in &paths {
            for b in &paths {
                let ab = shared_cells(a, b, 40.0).unwrap();
                let mut ba: Vec<_> =
                    shared_cells(b, a, 40.0).unwrap().into_iter().map(|(x, y)| (y, x)).collect();
                ba.sort();
                let mut ab_sorted = ab.clone();
                ab_sorted.sort();
                assert_eq!(ab_sorted, ba);
            }
        }
    }

    #[test]
    fn line_path_offsets() {
        let paths = line3(10.0).enumerate_paths().unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].offsets(), &[0.0, 10.0, 20.0]);
    }

    fn star(a: u32, b: u32) -> RoadNetwork {
        let inc: Vec<RoadId> = (1..=a).collect();
        let out: Vec<RoadId> = (a + 1..=a + b).collect();
        let roads = (1..=a + b).map(|id| Road { id, length: 5.0 }).collect();
        RoadNetwork::with_terminals(roads, vec![Junction::new(0, inc, out)]).unwrap()
    }

    proptest! {
        #[test]
        fn star_junction_has_product_paths(a in 1u32..6, b in 1u32..6) {
            prop_assert_eq!(star(a, b).enumerate_paths().unwrap().len(), (a * b) as usize);
        }

        #[test]
        fn coordinate_round_trip(s in 0.0f64..12000.0) {
            let paths = line3(4000.0).enumerate_paths().unwrap();
            let p = &paths[0];
            let (road, local) = p.from_path_coordinate(s).unwrap();
            prop_assert_eq!(p.to_path_coordinate(road, local).unwrap(), s);
        }
    }
}
