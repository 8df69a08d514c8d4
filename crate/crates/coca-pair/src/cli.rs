//! CLI (to be filled in).
