//! Test support: proptest generators for structures, alignment cases and
//! annotation documents, plus a minimal brat standoff reader.

pub mod gen;
pub mod standoff;
