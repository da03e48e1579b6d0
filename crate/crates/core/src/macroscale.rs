//! Macroscale problems and the two-scale pipeline.
