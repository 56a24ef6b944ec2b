//! The acceptance checks: each returns a pass/fail verdict with a
//! human-readable detail line, and the `acceptance` integration test runs
//! them all.
