//! Unsupervised correction of speech-recognizer output, end to end at desk
//! scale: a pair of simulated recognition channels produces pseudo
//! correction pairs from unlabeled text, a multi-source encoder-decoder
//! learns to map inferior transcripts (plus dialogue context and acoustic
//! features) to superior ones, and an experiment harness measures the
//! resulting WER movements.

pub mod channel;
pub mod dataset;
pub mod harness;
pub mod model;
pub mod rngstream;
pub mod textops;
pub mod training;
