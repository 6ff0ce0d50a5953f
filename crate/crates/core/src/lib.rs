pub mod imaging;
pub mod numcore;
pub mod seed;
pub mod shapegen;
pub mod generator;
pub mod train;
pub mod partvae;
pub mod mapping;
pub mod manipulate;
pub mod pipeline;
pub mod texture;
