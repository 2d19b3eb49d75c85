//! Hierarchical model-predictive control for a planar hopping robot with a
//! unidirectional parallel spring (UPS) at the knee.
//!
//! The stack runs from the least to the most detailed model:
//!
//! * [`slip`] synthesizes an offline gait library of periodic SLIP hops with
//!   deadbeat touchdown-angle feedback and turns it into motion sketches.
//! * [`srb_mpc`] tracks the sketch with a convex single-rigid-body MPC.
//! * [`kino_mpc`] refines that solution with joint angles, joint torques and
//!   the spring torque, solved by a fixed-iteration SQP.
//! * [`controller`] sequences the layers together with swing-leg control.
//!
//! [`plant`] is a planar massless-leg simulator used for closed-loop
//! verification and [`energy`] meters positive actuator energy.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]
#![cfg_attr(test, allow(unused_imports))]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

pub mod controller;
pub mod energy;
pub mod kinematics;
pub mod kino_mpc;
pub mod plant;
pub mod qp;
pub mod slip;
pub mod srb_mpc;
pub mod state;

pub use kinematics::{LegGeometry, UpsModel};
pub use state::{RobotConstants, RobotState, Vec2};
