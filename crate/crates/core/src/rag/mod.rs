//! Geo-diversification: retrieval-augmented prompts, LMM clients and the
//! candidate pool.

mod candidates;
mod client;
#[cfg(feature = "http")]
mod http;
mod parse;
mod prompt;

pub use candidates::{
    generate_candidates, select_references, Candidate, CandidatePool, DroppedGeneration,
    GenerationConfig, IndexRetrieval, Provenance, RetrievedRef, Retrieval, NEGATIVE_SAMPLE_SIZE,
};
pub use client::{
    default_landmark, spherical_centroid, ImagePayload, LmmClient, LmmRequest, LmmResponse,
    MockBehavior, MockLmm,
};
#[cfg(feature = "http")]
pub use http::{extract_content, HttpLmmClient, HttpLmmConfig, DEFAULT_API_KEY_ENV};
pub use parse::{parse_coordinates, CoordinateError};
pub use prompt::{render_prompt, PromptSet, PromptSpec, DEFAULT_TEMPERATURE, PROMPT_TEMPLATE_VERSION};
