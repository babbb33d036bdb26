//! Deep logic models: fuzzy first-order rules grounded over finite domains,
//! coupled with a neural network through MAP inference and trained end to end.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod countries;
pub mod error;
pub mod fuzzy;
pub mod grounding;
pub mod logic;
pub mod map;
pub mod network;
pub mod pairs;
pub mod train;

pub use error::{Error, Result};
pub use fuzzy::{Connective, FuzzyValue, TNorm};
pub use grounding::{build_atom_index, AtomIndex, Batch, GroundedPotential, RuleBatch};
pub use logic::{parse_kb, Formula, GroundAtom, KnowledgeBase};
pub use map::{map_infer, MapConfig, MapResult};
pub use network::Network;
pub use train::{train, TrainConfig, TrainMode, TrainTargets, TrainTrace};
