//! Holds the `acceptance` integration test; the crate itself is empty.
