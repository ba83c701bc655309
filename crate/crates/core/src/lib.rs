pub mod analysis;
pub mod driver;
pub mod globalization;
pub mod library;
pub mod problem;
pub mod qp;
pub mod trace;
