//! Coloured stochastic Petri nets with spatial annotations: enabling and
//! firing, unfolding, reachability and CTMC analysis, stochastic simulation,
//! and statistical checking of time- and space-bounded temporal formulas.

pub mod colour;
pub mod ctmc;
pub mod deadspot;
pub mod error;
pub mod expr;
pub mod logic;
pub mod net;
pub mod scalar;
pub mod semantics;
pub mod sim;
pub mod spatial;
pub mod stats;

pub use colour::{ColourDomain, DomainSpec, Sym, Value};
pub use error::{Error, Result};
pub use expr::Functions;
pub use net::{add_bound_place, Binding, Marking, Net, NetDoc, PlaceId, TransitionId};
pub use scalar::Scalar;
pub use semantics::{
    detect_conflicts, enabled_firings, fire, fire_in_place, firing_effects, reachability, spatial_weight, unfold,
    unfold_with_limit, unfolding_equivalence, ConflictSet, Effects, EnabledFiring, EnabledSet, ReachGraph,
};
pub use logic::{exact_check, parse_formula, smc_check, CheckResult, StateFormula, Verdict};

/// Double-precision instantiations of the generic numerical types.
pub type Ctmc = ctmc::Ctmc<f64>;
pub type JumpChain = ctmc::JumpChain<f64>;
pub type RoadNetwork = spatial::RoadNetwork<f64>;
pub type ProximityGraph = spatial::ProximityGraph<f64>;
pub type Interval = stats::Interval<f64>;
pub type LineFit = stats::LineFit<f64>;
