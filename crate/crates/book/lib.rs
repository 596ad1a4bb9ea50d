// mdbook cannot run snippets that depend on a workspace crate, so every
// chapter is pulled in here as the doc comment of an empty module and
// `cargo test` runs its code blocks as doc-tests. One module per chapter
// keeps failures traceable to a file.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/frames.md")]
pub mod frames {}
#[doc = include_str!("../../book/src/schedule.md")]
pub mod schedule {}
#[doc = include_str!("../../book/src/binary.md")]
pub mod binary {}
#[doc = include_str!("../../book/src/trees.md")]
pub mod trees {}
#[doc = include_str!("../../book/src/sessions.md")]
pub mod sessions {}
#[doc = include_str!("../../book/src/transcripts.md")]
pub mod transcripts {}
#[doc = include_str!("../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../book/src/cli.md")]
pub mod cli {}
