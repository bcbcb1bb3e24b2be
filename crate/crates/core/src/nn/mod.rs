//! Parameterised layers built on the autodiff graph.

mod conv;
mod dropout;
mod linear;
mod lstm;

pub use conv::Conv3d;
pub use dropout::{dropout, graph_dropout, DropoutSpec};
pub use linear::{Linear, LinearInit};
pub use lstm::{Lstm, LstmLayer, LstmOutput};
