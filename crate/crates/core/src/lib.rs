//! Offline A/B testing with traffic-grounded synthetic buyers.
//!
//! Clickstream sessions are clustered into behavioral archetypes, turned
//! into intent + persona agent profiles, simulated against control and
//! treatment storefront variants, and scored against human outcome deltas.

pub mod clustering;
pub mod ingest;
pub mod seed;
pub mod storefront;
pub mod agent;
pub mod llm;
pub mod persona;
pub mod eval;
pub mod synth;
pub mod pipeline;
pub(crate) mod text;
#[cfg(test)]
pub(crate) mod testutil;
