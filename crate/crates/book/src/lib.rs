#![doc = include_str!("../../../book/src/intro.md")]

#[doc = include_str!("../../../book/src/schedule.md")]
pub mod schedule {}

#[doc = include_str!("../../../book/src/search_model.md")]
pub mod search_model {}

#[doc = include_str!("../../../book/src/synth.md")]
pub mod synth {}

#[doc = include_str!("../../../book/src/rkd.md")]
pub mod rkd {}

#[doc = include_str!("../../../book/src/welfare.md")]
pub mod welfare {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
