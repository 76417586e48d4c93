pub mod model;
pub mod uql;
pub mod oracle;
pub mod embedding;
pub mod sampler;
pub mod learner;
pub mod compiler;
pub mod exec;
pub mod engine;
pub mod eval;
