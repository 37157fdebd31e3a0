//! Builtin benchmark problems.

mod quartic;
mod random_qp;
mod robot;

pub use quartic::{make_quartic_toy, QuarticAgent, QuarticConfig};
pub use random_qp::{make_random_consensus_qp, QuadraticAgent, RandomQp, RandomQpConfig};
pub use robot::{make_robot_ocp, RobotOcpConfig, RobotSolution};
