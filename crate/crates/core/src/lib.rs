#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod base_to;
pub mod gait;
pub mod planner;
pub mod qp;
pub mod robot;
pub mod scenario;
pub mod sim;
pub mod spline;
pub mod terrain;
pub mod wheel_to;
