//! Trajectory planning for autonomous parking: a Hybrid A* coarse search,
//! speed-profile smoothing, a dual warm start from relaxed QPs and an
//! optimization-based collision avoidance MPC solved by an interior-point
//! method.

pub mod dual_warm_start;
pub mod geometry;
pub mod grid_search;
pub mod nlp_mpc;
pub mod pipeline;
pub mod qp_solver;
pub mod sparse;
pub mod speed_profile;
pub mod vehicle;
