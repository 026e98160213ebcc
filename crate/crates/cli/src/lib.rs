//! Experiment drivers for the STAR-RIS NOMA simulator (placeholder).
