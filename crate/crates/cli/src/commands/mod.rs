pub mod eval;
pub mod field;
pub mod gendata;
pub mod train;
pub mod verify;
