//! Dense tensors, the reverse-mode tape, finite-difference checking and the
//! seeded random source that every other module builds on.

mod dd;
mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use dd::{Dd, Real};
pub use gradcheck::{
    finite_difference_check, relative_error, GradCheckReport, ParamCheck, RELATIVE_ERROR_FLOOR,
};
pub use params::{Binder, ParamStore};
pub use rng::Rng;
pub use tape::{Adjoints, Gradients, Tape, Var, ROW_NORM_FLOOR};
pub use tensor::{relu, sigmoid, Tensor};
