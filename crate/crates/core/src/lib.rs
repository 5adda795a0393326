//! Adversarial knowledge-graph embedding.
//!
//! A generator maps a `(head, relation)` pair to the vector of a plausible
//! tail; a discriminator scores triples (lower means more plausible). Both
//! share one entity table and one relation table and are trained against
//! each other with critic iterations and weight clipping. The generator is
//! evaluated on filtered link prediction, the discriminator on triple
//! classification with per-relation thresholds.
//!
//! Module map:
//!
//! - [`kgdata`]: triple files, vocabularies, reverse relations, negative sampling
//! - [`numcore`]: parameter store, reverse-mode tape, RMSProp, clipping, checkpoints
//! - [`scorers`]: TransE/TransH/TransD, MLP and CNN in generator or discriminator role
//! - [`advtrain`]: the four losses and the alternating training loop
//! - [`evalkit`]: filtered ranking metrics and threshold classification

pub mod numcore;
pub mod kgdata;
pub mod scorers;
pub mod advtrain;
pub mod evalkit;
