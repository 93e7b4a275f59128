pub mod bench;
pub mod evo;
pub mod orchestrator;
pub mod principle;
pub mod reasoner;
pub mod report;
pub mod space;
