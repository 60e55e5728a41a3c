use crate::network::{JunctionId, RoadId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // network
    #[error("road {0} has non-positive or non-finite length {1}")]
    BadRoadLength(RoadId, f64),
    #[error("duplicate road id {0}")]
    DuplicateRoad(RoadId),
    #[error("duplicate junction id {0}")]
    DuplicateJunction(JunctionId),
    #[error("junction {junction} references unknown road {road}")]
    UnknownRoadInJunction { junction: JunctionId, road: RoadId },
    #[error("unknown road {0}")]
    UnknownRoad(RoadId),
    #[error("junction {junction}: road {road} is both incoming and outgoing")]
    JunctionNotDisjoint { junction: JunctionId, road: RoadId },
    #[error("road {road} leaves {count} junctions, expected exactly one")]
    RoadTail { road: RoadId, count: usize },
    #[error("road {road} enters {count} junctions, expected exactly one")]
    RoadHead { road: RoadId, count: usize },
    #[error("network has no origin junction")]
    NoOrigins,
    #[error("network has no destination junction")]
    NoDestinations,
    #[error("network contains a directed cycle through road {0}")]
    Cycle(RoadId),
    #[error("road {road} is not on path {path}")]
    RoadNotOnPath { path: usize, road: RoadId },
    #[error("position {pos} outside [0, {max}]")]
    PositionOutOfRange { pos: f64, max: f64 },
    #[error("grid spacing {dx} does not divide the length {length} of road {road}")]
    GridMismatch { road: RoadId, length: f64, dx: f64 },

    // micro
    #[error("gap must be positive, got {0}")]
    NonPositiveGap(f64),
    #[error("negative gap {0}")]
    NegativeGap(f64),
    #[error("vehicle {0} is a leader and has no gap")]
    Leader(usize),
    #[error("vehicle index {0} is inactive or out of range")]
    InactiveVehicle(usize),
    #[error("mass {mass} on road {road} is not a multiple of the vehicle length (remainder {remainder})")]
    MassNotMultiple { road: RoadId, mass: f64, remainder: f64 },
    #[error("positions must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("road {0}: several paths share the sampled route, cannot assign an origin")]
    AmbiguousPrefix(RoadId),
    #[error("invalid micro parameter: {0}")]
    MicroParam(String),

    // macro
    #[error("density {0} outside [0, 1]")]
    DensityOutOfRange(f64),
    #[error("turning coefficients from road {road} sum to {sum}, expected 1")]
    TurningSum { road: RoadId, sum: f64 },
    #[error("turning coefficient {from} -> {to} is not a turn of the network")]
    TurningNotATurn { from: RoadId, to: RoadId },
    #[error("turning coefficient {from} -> {to} = {p} outside [0, 1]")]
    TurningRange { from: RoadId, to: RoadId, p: f64 },
    #[error("initial density on road {road} cannot be split into populations (weights sum to {sum})")]
    IllPosedSplit { road: RoadId, sum: f64 },
    #[error("macro time step {dt} exceeds the stability bound {bound}")]
    MacroCfl { dt: f64, bound: f64 },
    #[error("invalid macro parameter: {0}")]
    MacroParam(String),

    // bridge / config
    #[error("profiles are not on the same grid ({0})")]
    ProfileMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
