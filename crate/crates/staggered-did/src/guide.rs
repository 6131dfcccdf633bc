//! Doc-test anchors for the guide under `book/`: every Rust snippet in the
//! chapters compiles and runs as part of `cargo test --doc`, so the book
//! cannot drift from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub struct Introduction;

#[doc = include_str!("../../../book/src/data-model.md")]
pub struct DataModel;

#[doc = include_str!("../../../book/src/estimator.md")]
pub struct Estimator;

#[doc = include_str!("../../../book/src/variance.md")]
pub struct Variance;

#[doc = include_str!("../../../book/src/oracle.md")]
pub struct Oracle;

#[doc = include_str!("../../../book/src/simulation.md")]
pub struct Simulation;

#[doc = include_str!("../../../book/src/cli.md")]
pub struct CliReference;
