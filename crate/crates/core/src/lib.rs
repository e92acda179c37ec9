//! One-sided Stieltjes calculus on the torus with a càdlàg profile W and a
//! càglàd profile V.

pub mod calculus;
pub mod error;
pub mod grid;
pub mod gridop;
pub mod measure;
pub mod numerics;
pub mod piecewise;
pub mod quadrature;
pub mod sobolev;
pub mod spde;
pub mod spectral;
pub mod stochastic;
pub mod tensor;
pub mod trig;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{FnSide, Grid, GridFunction, Interval, Orientation};
pub use measure::{EvalMode, MeasureFunction, MeasureSpec, Side};
