//! Signal processing and evaluation toolkit for multichannel EMG recordings
//! of handwritten letters.

pub mod evalkit;
pub mod features_tf;
pub mod features_time;
pub mod pipeline;
pub mod resample;
pub mod tensor;
pub mod trial_store;
