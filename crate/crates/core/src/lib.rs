pub mod audit;
pub mod cli;
pub mod cognition;
pub mod control;
pub mod domain;
pub mod memory;
pub mod metaprompt;
pub mod orchestrator;
pub mod tools;
