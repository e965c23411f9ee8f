pub mod analytics;
pub mod config;
pub mod domain;
pub mod engine;
pub mod error;
pub mod expand;
pub mod export;
pub mod gateway;
#[doc(hidden)]
pub mod guide;
pub mod plot;
pub mod prompts;
pub mod replay;
pub mod store;
pub mod text;
pub mod variation;
