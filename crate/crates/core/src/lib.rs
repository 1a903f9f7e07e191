//! Planning, simulation and a toy execution engine for transformer inference
//! with weights offloaded to host memory and linear layers split by column
//! between the CPU and the GPU.

pub mod artifact;
pub mod costmodel;
pub mod engine;
pub mod model;
pub mod paramstore;
pub mod pipeline;
pub mod planner;
pub mod simulator;
pub mod trace;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Cost(#[from] costmodel::CostError),
    #[error(transparent)]
    Plan(#[from] planner::PlanError),
    #[error(transparent)]
    Param(#[from] paramstore::ParamError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Sim(simulator::SimError),
}
