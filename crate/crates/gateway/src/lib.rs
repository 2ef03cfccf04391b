//! Prompt templates, a chat-completion client and resumable remote
//! evaluation against the reward verifier.

pub mod client;
pub mod remote;
pub mod stub;
pub mod templates;

pub use client::{query_model, EndpointConfig, GatewayError};
pub use remote::{evaluate_remote, GatewayForecaster, RemoteResult, RemoteSummary};
pub use templates::{parse_action_list, PromptKind, PromptRenderer, PromptTooLong, TemplateSet};
