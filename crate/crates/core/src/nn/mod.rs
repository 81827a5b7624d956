//! Layer graphs, their executor and the translator/discriminator builders.

pub mod arch;
pub mod exec;
pub mod graph;
pub mod init;
pub mod ops;

pub use arch::{build_discriminator, build_translator, ArchitectureSpec, DiscriminatorSpec, Variant};
pub use exec::{Network, ParamVec, Tape};
pub use graph::{GraphBuilder, NetRole, NetworkDescription, Node, NodeId, NodeKind, ParamRole, ParamSpec};
pub use init::init_parameters;
