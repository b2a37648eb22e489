//! Asynchronous federated SGD, SVRG and SAGA over vertically partitioned data.
//!
//! Each worker owns a disjoint block of feature columns and the matching block of
//! model coordinates. Workers only ever export scalar local products, which are
//! summed over a binary reduction tree, optionally hidden behind additive masks
//! that are removed through a second, structurally different tree.
//!
//! * [`data`]: LIBSVM parsing, standardization, vertical partitions, synthetic data.
//! * [`losses`]: regularized logistic and ridge objectives with block gradients.
//! * [`treecomm`]: plain and masked tree aggregation.
//! * [`estimators`]: SGD, SVRG and SAGA gradient estimates.
//! * [`engine`]: virtual-clock and wall-clock runtimes with event logging.
//! * [`analysis`]: reference optima, convergence curves, trace statistics and
//!   step-size/feasibility calculators.

pub mod analysis;
pub mod data;
pub mod engine;
pub mod estimators;
pub mod losses;
pub mod treecomm;
