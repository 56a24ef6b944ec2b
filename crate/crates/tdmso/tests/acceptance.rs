//! Acceptance gate: runs every acceptance check at its stated tolerance and
//! prints one pass/fail line per criterion.
