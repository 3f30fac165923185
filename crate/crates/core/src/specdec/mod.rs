//! Speculative decoding: drafting, parallel target scoring, and the
//! verification policies (rejection sampling, strict greedy match, top-k, and
//! judge-then-alignment two-stage verification).

mod decode;
mod trace;
mod verify;

pub use decode::{draft, target_scores, DecodeConfig, DecodeMetrics, DecodeOutput, Decoder, Policy, TargetScores};
pub use trace::{CorrectionSource, Decision, PositionRecord, TraceRecord, VerificationTrace};
pub use verify::{verify_greedy, verify_judge_two_stage, verify_rejection, verify_topk, DraftProposal};
