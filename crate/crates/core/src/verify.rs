//! Verification utilities.
