//! Dynamic sparse federated feature selection.
//!
//! Sparse multilayer perceptrons are trained across simulated clients. While
//! they train, the input layer drops weak input units and regrows promising
//! ones until only `K` remain connected; those are the selected features.
//! The total number of connections never changes.
//!
//! ```
//! use dsffs::data::{generate_synthetic, PartitionedDataset, SyntheticSpec, stratified_split, NormalizeMode};
//! use dsffs::fed_core::{run_training, FedConfig, SelectionConfig};
//!
//! let ds = generate_synthetic(&SyntheticSpec { n_noise: 40, n_samples: 200, ..Default::default() }).unwrap();
//! let (train, test) = stratified_split(&ds.labels, ds.n_classes, 0.2, 0).unwrap();
//! let mut data = PartitionedDataset::new(ds, &train, test, 2, 0.5, 0).unwrap();
//! data.normalize(NormalizeMode::Minmax);
//! let config = FedConfig {
//!     clients: 2,
//!     clients_per_round: 2,
//!     rounds: 3,
//!     local_epochs: 1,
//!     hidden: vec![16],
//!     selection: Some(SelectionConfig { k: 10, beta: 0.65 }),
//!     ..Default::default()
//! };
//! let outcome = run_training(&config, &data).unwrap();
//! assert_eq!(outcome.metrics.len(), 3);
//! assert_eq!(outcome.selection.unwrap().features.len(), 10);
//! ```

pub mod cli;
pub mod config;
pub mod data;
pub mod dst_update;
mod error;
pub mod fed_core;
pub mod input_selector;
pub mod metrics;
pub mod sparse_net;

pub use error::{DsffsError, Result};
pub use fed_core::{run_training, FedConfig, SelectionConfig, TrainingOutcome};
pub use sparse_net::{SparseLayer, SparseNetwork};

// Runs the guide's code blocks as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sparse-networks.md")]
    mod sparse_networks {}
    #[doc = include_str!("../../../book/src/topology-updates.md")]
    mod topology_updates {}
    #[doc = include_str!("../../../book/src/input-selection.md")]
    mod input_selection {}
    #[doc = include_str!("../../../book/src/federated-rounds.md")]
    mod federated_rounds {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/costs.md")]
    mod costs {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
}
