pub mod eval;
pub mod extract;
pub mod toygen;
pub mod train;
