//! Incremental externalization of situated-dialogue state into a versioned
//! artifact memory, and planned retrieval-augmented question answering over it.

pub mod constructor;
pub mod domain;
pub mod eval;
pub mod gateway;
pub mod linker;
pub mod memory;
pub mod observer;
pub mod pipeline;
pub mod prompts;
pub mod raster;
pub mod reasoner;
pub mod scene;
