//! Knapsack mass-feasibility table, beam search with and without mass
//! constraints, and the precursor delta-mass filter.

mod beam;
mod knapsack;

pub use beam::{
    beam_search, delta_mass_filter, greedy_decode, knapsack_beam_search, mass_budget, passes_delta_mass,
    ArScorer, DeltaMassSplit, Hypothesis, KnapsackOptions, KnapsackOutcome, StepScorer, TraceScorer,
};
pub use knapsack::KnapsackTable;
