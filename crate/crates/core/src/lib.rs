pub mod collision;
pub mod config;
pub mod fixtures;
pub mod io;
pub mod kinematics;
pub mod model;
pub mod motion;
pub mod search;
pub mod skeleton;
pub mod stiffness;
