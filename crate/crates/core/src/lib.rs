pub mod call_filter;
pub mod eval;
pub mod executor;
pub mod matcher;
pub mod pipeline;
pub mod registry;
pub mod slots;
pub mod template;
pub mod vectorizer;
