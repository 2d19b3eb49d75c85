pub mod active_set;
pub mod random_qp;
