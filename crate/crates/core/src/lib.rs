pub mod backtest;
pub mod calendar;
pub mod econometrics;
pub mod error;
pub mod evaluation;
pub mod features;
mod io;
pub mod labels;
pub mod learners;
pub mod panel;
pub mod rng;
pub mod sim;

pub use error::{ErrorClass, MspiError, Result};
pub use io::{config_hash, read_json, write_json};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/labels.md")]
    mod labels {}
    #[doc = include_str!("../../../book/src/forecasting.md")]
    mod forecasting {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/econometrics.md")]
    mod econometrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
