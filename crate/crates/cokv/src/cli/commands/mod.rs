pub mod allocate;
pub mod estimate;
pub mod evict;
pub mod mask;
pub mod report;
pub mod verify;
