//! Multi-period spatio-temporal forecaster for subway station passenger flows.
//!
//! Each station's recent history is folded into a `periods x intervals`
//! matrix per flow direction, encoded by a small CNN, mixed across stations
//! by graph message passing over the physical network and decoded into the
//! next four intervals of inflow and outflow.

pub mod tensor;
pub mod folding;
pub mod synthgen;
pub mod model;
pub mod trainer;
pub mod io;
pub mod reference;
