//! Acceptance experiments; see `tests/acceptance.rs`.
