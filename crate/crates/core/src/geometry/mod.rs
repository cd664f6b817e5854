//! Local geometry of a ReLU network around an anchor input.
//!
//! With the activation pattern of an anchor frozen, every layer of a
//! piecewise-linear network is affine, so the whole network collapses to
//! `f(x') = K x' + c` on the anchor's linear region. [`extract_affine`]
//! builds `K` and `c` by composing the layers with the ReLU masks
//! `D_l = diag(act_l)` (batch norm folded with running stats, convolutions
//! materialized through their unfolded form, max-pool selections frozen).
//!
//! The stability probes measure how far parameters or inputs can move along
//! random directions before the anchor's pattern changes.

mod affine;
mod stability;

pub use affine::{extract_affine, first_layer_hyperplane_bound, region_radius, AffineMap};
pub use stability::{
    input_flip_radius, param_flip_radius, probe_anchor, ParamDigest, ProbeConfig, RadiusDetail, StabilityReport,
    DEGENERATE_THRESHOLD,
};
