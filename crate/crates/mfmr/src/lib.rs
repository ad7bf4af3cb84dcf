//! Structure-aware formula representations: LaTeX math tokenization,
//! operator trees, corpus extraction, a small bidirectional transformer
//! pre-trained with masked-token, context-correspondence and masked-edge
//! objectives, and retrieval/classification evaluation on top of it.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod inputs;
pub mod model;
pub mod opt;
pub mod token;
pub mod train;
pub mod vocab;
