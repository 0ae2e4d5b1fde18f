//! Domain-alignment layers for unsupervised domain adaptation.
//!
//! A shared-weight network is trained on labeled source samples and
//! unlabeled target samples at once. DA-layers normalize each domain with
//! statistics mixed across domains by a learnable factor `alpha`, and an
//! entropy term on the target predictions regularizes training.

pub mod dal;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod net;
pub mod oracle;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
