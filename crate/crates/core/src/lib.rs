pub mod analytics;
pub mod cache;
pub mod dialogue;
pub mod domain;
pub mod econ;
pub mod extraction;
pub mod lexicon;
pub mod scheduler;
pub mod service;
