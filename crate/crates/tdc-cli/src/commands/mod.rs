pub mod admm_train;
pub mod conv_bench;
pub mod decompose;
pub mod rank_select;
pub mod reconstruct;
pub mod report;
pub mod tile_select;
