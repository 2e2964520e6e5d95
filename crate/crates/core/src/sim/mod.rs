//! Paired-data simulation: SNR-exact background mixing, synthetic room
//! impulse responses, synthetic corpora and dataset manifests.

mod corpus;
mod dataset;
mod mix;
mod rir;

pub use corpus::{label_of_file, synth_clean, synth_noise, write_clean_corpus, write_noise_corpus, CLEAN_LEN, NOISE_LABELS};
pub use dataset::{build_dataset, entry_path, load_manifest, regenerate_entry, write_manifest, DatasetManifest, ManifestEntry, TaskMix};
pub use mix::{align_lengths, mix_at_snr, peak_limit, Alignment};
pub use rir::{apply_rir, convolve, synth_rir, RirSpec};
