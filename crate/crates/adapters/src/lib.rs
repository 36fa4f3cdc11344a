//! Backends behind the black boxes: target models over HTTP, subprocess or
//! in-process, chat clients for concept extraction and generation, a
//! persistent prediction cache, and replay fixtures for offline runs.

pub mod cache;
pub mod chat;
pub mod digest;
pub mod fixtures;
mod http;
pub mod model;
pub mod retry;
pub mod templates;
pub mod testing;
pub mod wire;

pub use cache::{CachedModel, PredictionCache};
pub use chat::{ChatModel, HttpChat, RecordingChat, ReplayChat};
pub use digest::{canonical_json, digest, request_digest};
pub use fixtures::FixtureStore;
pub use model::{
    dominant_color_backend, Backend, HttpBackend, InProcessBackend, LexiconSentiment, ModelHandle, RecordingBackend, ReplayBackend,
    SubprocessBackend, Task, WireOutput,
};
pub use retry::{network_calls, RetryPolicy};
pub use wire::WireInput;
