pub mod cli;
pub mod config;
pub mod gradcheck;
pub mod jet;
pub mod network;
pub mod symmetry;
pub mod systems;
pub mod real;
pub mod tape;
pub mod tensor_calc;
pub mod trainer;
