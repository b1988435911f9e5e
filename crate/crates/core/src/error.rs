use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine { line: usize, found: usize },
    #[error("input contains no triples")]
    EmptyInput,
    #[error("graph has no triples")]
    EmptyGraph,
    #[error("entity id {0} is out of range")]
    UnknownEntity(usize),
    #[error("relation id {0} is out of range")]
    UnknownRelation(usize),
    #[error("target nodes must differ (both are {0})")]
    SameTargets(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("no auxiliary feature vector for entity {0}")]
    MissingFeatures(usize),
    #[error("at least two entities are needed to sample corruptions")]
    TooFewEntities,
    #[error("all rules in a set must share the head relation")]
    MixedHeads,
    #[error("rule body of length {len} exceeds the maximum of {max}")]
    RuleTooLong { len: usize, max: usize },
    #[error("relations missing from the model vocabulary: {}", .0.join(", "))]
    UnknownRelations(Vec<String>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("misaligned score keys: {0}")]
    Misaligned(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
}

pub type Result<T> = core::result::Result<T, Error>;
