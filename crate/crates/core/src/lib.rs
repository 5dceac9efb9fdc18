pub mod sel;
pub mod registry;
pub mod prompt;
pub mod align;
pub mod export;
pub mod gateway;
pub mod session;
pub mod eval;
