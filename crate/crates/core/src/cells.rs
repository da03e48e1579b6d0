//! Cell problems and effective tensor extraction.
