pub mod corpus;
pub mod hash;
pub mod plan;
pub mod providers;
pub mod registry;
pub mod text;
pub mod tokens;
pub mod retrieval;
pub mod templates;
pub mod planner;
pub mod labels;
pub mod reader;
pub mod refine;
pub mod evalkit;
pub mod cli;
