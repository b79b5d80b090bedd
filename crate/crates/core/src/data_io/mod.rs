//! Corpus generation, WAV ingestion and manifests.

mod corpus;
mod synth;
mod wav;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::audio::AudioError;

pub use corpus::{build_corpus, load_clip, load_clips, write_corpus, ClipSource, CorpusManifest, ManifestEntry, Split, MIN_DURATION_S};
pub use synth::{synth_clip, DEFAULT_SYNTH_DURATION_S};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("malformed WAV at byte {offset}: {detail}")]
    Malformed { offset: usize, detail: String },
    #[error("unsupported WAV encoding: format code {format_code}, {channels} channel(s), {bits} bits (need PCM mono 16-bit)")]
    Unsupported { format_code: u16, channels: u16, bits: u16 },
    #[error("truncated WAV: {what} declares an end at byte {declared_end}, payload ends at byte {actual_end}")]
    Truncated { what: &'static str, declared_end: usize, actual_end: usize },
    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}
