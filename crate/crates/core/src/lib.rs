//! Budget-constrained tier-partition selection for two-tier stacked designs.
//!
//! The flow: a simulated-annealing search over macro tier assignments keeps a
//! grid-shaped archive of proxy-diverse candidates; a continuous D-optimal
//! design over the candidate features picks a small coreset worth sending to
//! the expensive evaluator; a weighted least-squares surrogate trained on the
//! coreset ranks everything else; the top predictions get verified and the
//! best evaluated candidate under the active preference wins.

pub mod anneal;
pub mod design;
pub mod eval;
pub mod features;
pub mod netlist;
pub mod pipeline;
pub mod surrogate;
pub mod synth;

pub use anneal::{Candidate, GridArchive, SaConfig};
pub use design::{CoresetSelection, DesignWeights};
pub use eval::{EvalBackend, MetricSchema, Orientation, PpaRecord, Preference};
pub use features::{FeatureVector, ProxyPoint};
pub use netlist::{CellKind, Netlist, Partition, Tier};
pub use pipeline::{run_dopp, run_dopp_with, PipelineConfig, PipelineError, RunReport};
pub use surrogate::SurrogateModel;
