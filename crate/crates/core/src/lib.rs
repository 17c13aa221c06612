pub mod assess;
pub mod cli;
pub mod protocols;
pub mod report;
pub mod seeds;
pub mod simengine;
pub mod topology;
pub mod workflow;
