//! Small dense networks with hand-written backpropagation and Adam.

mod adam;
mod io;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use io::{NetworkManifest, NETWORK_FORMAT_VERSION};
pub(crate) use io::suffixed;
pub use mlp::{log_softmax, softmax, Activation, Mlp, Tape};
