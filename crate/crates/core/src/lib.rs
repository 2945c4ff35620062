pub mod text;
pub mod extract;
pub mod prompts;
pub mod reasoning;
pub mod scenario;
pub mod gateway;
pub mod persona;
pub mod dialogue;
pub mod qc;
pub mod embeddings;
pub mod metrics;
pub mod analytics;
pub mod sft;
pub mod storage;
pub mod simulate;
