// Each chapter of the guide becomes the doc comment of an empty module, so
// `cargo test --doc` compiles and runs every listing in the book. One module
// per chapter keeps failures traceable to their page.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/protocol.md")]
pub mod protocol {}
#[doc = include_str!("../../../book/src/pairing.md")]
pub mod pairing {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/storage.md")]
pub mod storage {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/providers.md")]
pub mod providers {}
#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
#[doc = include_str!("../../../book/src/api.md")]
pub mod api {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
