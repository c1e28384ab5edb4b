//! Numerical back ends: symmetric eigendecomposition, nonlinear least squares
//! and a small dense SDP interior-point method.

mod eig;
mod lm;
mod sdp;

pub use eig::{eig_sym, EigenPairs};
pub use lm::{lm_minimize, LmOptions, LmResult, LmStatus};
pub use sdp::{sdp_solve, SdpOptions, SdpSolution, SdpStandardForm, SdpStatus, SolveDiagnostics};
