//! Softmax dispersion toolkit.
//!
//! * [`softmax`]: temperature softmax, entropy, and the entropy-adaptive
//!   softmax that lowers the temperature of diffuse rows.
//! * [`dispersion`]: spread-based coefficient bounds, dispersion thresholds,
//!   the spectral bound on logit spread, and the vanishing-coefficient demo.
//! * [`streaming`]: constant-memory entropy and attention for one query row.
//! * [`retrieval`]: the max-retrieval set classifier, trained with
//!   hand-written gradients and Adam.
//! * [`theta_fit`]: fitting the entropy → inverse temperature polynomial.
//! * [`report`]: statistics, CSV/SVG emission and experiment drivers.

// `!(x > 0.0)` is used on purpose so NaN fails validation; index loops
// follow the linear algebra they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod alloc_probe;
pub mod dispersion;
pub mod error;
pub mod num;
pub mod par;
pub mod report;
pub mod retrieval;
pub mod softmax;
pub mod streaming;
pub mod theta_fit;

pub use error::{Error, Result};
pub use num::Scalar;
pub use par::Execution;
