//! Forecasting engine for social-media sentiment: predicts a user's future
//! sentiment toward an ongoing event by orchestrating a subjective
//! role-playing agent and an objective consistency reviewer over a
//! chat-completion gateway, with opinion-dynamics baselines and a
//! micro/macro evaluation suite.

pub mod baselines;
pub mod corpus;
pub mod domain;
pub mod features;
pub mod finetune;
pub mod gateway;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod sentiment;
pub mod synth;
