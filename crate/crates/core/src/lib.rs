//! Generative model recommendation.
//!
//! The engine works over a catalog of images generated by many text-to-image
//! models for a fixed set of prompts, and recommends models in two stages:
//!
//! 1. **Prompt-model retrieval** ([`retrieval`]): images are filtered by NSFW
//!    score and pre-ranked by the GRE-Score ([`metrics`]), a weighted sum of
//!    normalized prompt relevance, distinctiveness and popularity. A t-SNE
//!    gallery layout ([`layout`]) places visually similar images together.
//!    Users select models they like.
//! 2. **Generative model ranking** ([`elicitation`]): the selected models,
//!    complemented with the best unselected ones, are ranked in battle or
//!    drag-and-sort sessions that yield pairwise preferences. Preferences feed
//!    a dashboard summary and Bayesian Personalized Ranking ([`ltr`]).
//!
//! [`simuser`] provides simulated users for exercising both stages, and
//! [`server`] exposes everything over a JSON HTTP API. Runnable walkthroughs
//! of each capability live in the crate's `examples/` directory.

pub mod catalog;
pub mod cli;
pub mod elicitation;
pub mod error;
pub mod jsonl;
pub mod layout;
pub mod ltr;
pub mod metrics;
pub mod retrieval;
pub mod server;
pub mod simuser;
pub mod synthetic;

pub use catalog::{load_catalog, Catalog, LoadOptions, ModelId, PromptId};
pub use error::{Error, Result};
pub use metrics::GreWeights;
