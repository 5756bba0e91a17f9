//! Multi-turn video reasoning with frame-inspection tools, trained with
//! group-relative policy optimisation over a dynamic-resolution sampling
//! ladder.

pub mod drfs;
pub mod grpo;
pub mod protocol;
pub mod reward;
pub mod rollout;
pub mod run;
pub mod toyworld;
pub mod videotool;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/tools.md")]
    mod tools {}
    #[doc = include_str!("../../../book/src/ladder.md")]
    mod ladder {}
    #[doc = include_str!("../../../book/src/reward.md")]
    mod reward {}
    #[doc = include_str!("../../../book/src/rollout.md")]
    mod rollout {}
    #[doc = include_str!("../../../book/src/grpo.md")]
    mod grpo {}
    #[doc = include_str!("../../../book/src/toyworld.md")]
    mod toyworld {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
