#![allow(dead_code)]

pub mod compose_check;
pub mod workflow_ops;
