//! Robust zero-shot classification over precomputed embeddings.
//!
//! Image views are projected onto the subspace spanned by the class-description
//! embeddings, each image and each class is modelled as an entropy-weighted
//! discrete distribution, and the predicted class is the one with the smallest
//! optimal-transport distance.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`bundle`] | on-disk embedding bundles, synthetic generation |
//! | [`subspace`] | truncated SVD via Jacobi, projector, perturbation split |
//! | [`distributions`] | class posteriors, entropy, view/description weights |
//! | [`ot`] | log-domain Sinkhorn and an exact transportation simplex |
//! | [`classifier`] | cost matrices, the four classifiers, evaluation |
//! | [`attack`] | embedding-space PGD and structured perturbations |
//! | [`verify`] | Monte-Carlo property suites for the projection/margin theory |
//! | [`pipeline`] | the end-to-end benchmark chain |

pub mod attack;
pub mod bundle;
pub mod classifier;
pub mod distributions;
mod error;
pub mod linalg;
pub mod ot;
pub mod pipeline;
pub mod rng;
pub mod subspace;
pub mod verify;

pub use attack::{AttackConfig, AttackMode, AttackNorm, StructuredNoiseSpec};
pub use bundle::{EmbeddingBundle, Manifest, Normalization, SyntheticParams};
pub use classifier::{ClassifierConfig, EvaluationReport, Method, Prediction};
pub use distributions::{EntropySign, TextBank, ViewSet, WeightingConfig};
pub use error::{Error, ErrorKind, Result};
pub use linalg::Matrix;
pub use ot::{SinkhornParams, TransportProblem, TransportSolution};
pub use subspace::{PerturbationSplit, SubspaceProjector};
