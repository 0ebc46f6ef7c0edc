//! Optimal power flow as a time-varying conic program.

pub mod baseline;
pub mod case;
pub mod encoding;
pub mod matpower;
pub mod stream;

pub use case::NetworkCase;
pub use encoding::{build_encoding, OpfEncoding};
pub use stream::{generate_loads, LoadRule, LoadStream};
