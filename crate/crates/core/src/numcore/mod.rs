//! Vector arithmetic, seeded randomness and the reverse-mode tape.

mod rng;
mod tape;
mod vector;

pub use rng::Rng;
pub use tape::{Adjoints, NodeId, Tape};
pub use vector::DenseVector;

pub(crate) use vector::{axpy, dot, norm2};
