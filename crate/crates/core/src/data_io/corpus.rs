//! Corpus manifests: one tab-separated line per clip.
//!
//! ```text
//! # tcanlab corpus manifest v1
//! # id<TAB>split<TAB>source<TAB>duration_s<TAB>sample_rate
//! train-00000	train	synth:1234	3	16000
//! test-00000	test	file:clips/a.wav	3.2	16000
//! ```
//!
//! Relative file paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{io_err, read_wav, synth_clip, write_wav, DataError, Result, DEFAULT_SYNTH_DURATION_S};
use crate::audio::{AudioClip, DEFAULT_SAMPLE_RATE};
use crate::seed::{derive_seed, STREAM_CORPUS};

/// Clips shorter than this are not admitted to a corpus.
pub const MIN_DURATION_S: f64 = 2.5;
const HEADER: &str = "# tcanlab corpus manifest v1";
const COLUMNS: &str = "# id\tsplit\tsource\tduration_s\tsample_rate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClipSource {
    Synthetic { seed: u64 },
    File { path: PathBuf },
}

impl fmt::Display for ClipSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClipSource::Synthetic { seed } => write!(f, "synth:{seed}"),
            ClipSource::File { path } => write!(f, "file:{}", path.display()),
        }
    }
}

impl FromStr for ClipSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(seed) = s.strip_prefix("synth:") {
            return seed
                .parse()
                .map(|seed| ClipSource::Synthetic { seed })
                .map_err(|_| format!("bad synthetic seed {seed:?}"));
        }
        match s.strip_prefix("file:") {
            Some(p) if !p.is_empty() => Ok(ClipSource::File { path: PathBuf::from(p) }),
            _ => Err(format!("source {s:?} is neither synth:<seed> nor file:<path>")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub source: ClipSource,
    pub duration_s: f64,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut sources: [HashSet<String>; 2] = Default::default();
        for (i, e) in self.entries.iter().enumerate() {
            let line = i + 3;
            let fail = |detail: String| Err(DataError::Manifest { line, detail });
            if e.id.is_empty() || e.id.contains(char::is_whitespace) {
                return fail(format!("id {:?} is empty or contains whitespace", e.id));
            }
            if !ids.insert(e.id.as_str()) {
                return fail(format!("duplicate id {}", e.id));
            }
            if !(e.duration_s >= MIN_DURATION_S) {
                return fail(format!("{} lasts {} s, shorter than {MIN_DURATION_S} s", e.id, e.duration_s));
            }
            if e.sample_rate == 0 {
                return fail(format!("{} has sample rate 0", e.id));
            }
            let key = e.source.to_string();
            let (mine, other) = match e.split {
                Split::Train => (0, 1),
                Split::Test => (1, 0),
            };
            if sources[other].contains(&key) {
                return fail(format!("{} shares source {key} with the other split", e.id));
            }
            sources[mine].insert(key);
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER}\n{COLUMNS}\n");
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", e.id, e.split, e.source, e.duration_s, e.sample_rate));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == HEADER => {}
            _ => {
                return Err(DataError::Manifest {
                    line: 1,
                    detail: format!("expected header {HEADER:?}"),
                })
            }
        }
        let mut entries = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let l = raw.trim_end_matches('\r');
            if l.trim().is_empty() || l.starts_with('#') {
                continue;
            }
            let fail = |detail: String| DataError::Manifest { line, detail };
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 5 {
                return Err(fail(format!("expected 5 tab-separated fields, got {}", f.len())));
            }
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                split: f[1].parse().map_err(fail)?,
                source: f[2].parse().map_err(fail)?,
                duration_s: f[3].parse().map_err(|_| fail(format!("bad duration {:?}", f[3])))?,
                sample_rate: f[4].parse().map_err(|_| fail(format!("bad sample rate {:?}", f[4])))?,
            });
        }
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(io_err(path))
    }
}

/// Synthetic corpus manifest. Train clips use seeds `b, b+1, …` and test
/// clips continue the same run, so the two splits never share a seed.
pub fn build_corpus(n_train: usize, n_test: usize, seed: u64) -> Result<CorpusManifest> {
    if n_train == 0 || n_test == 0 {
        return Err(DataError::InvalidArgument(format!(
            "both splits need clips (n_train = {n_train}, n_test = {n_test})"
        )));
    }
    let base = derive_seed(seed, STREAM_CORPUS, 0);
    let entry = |split: Split, i: usize, offset: usize| ManifestEntry {
        id: format!("{split}-{i:05}"),
        split,
        source: ClipSource::Synthetic {
            seed: base.wrapping_add((offset + i) as u64),
        },
        duration_s: DEFAULT_SYNTH_DURATION_S,
        sample_rate: DEFAULT_SAMPLE_RATE,
    };
    let entries = (0..n_train)
        .map(|i| entry(Split::Train, i, 0))
        .chain((0..n_test).map(|i| entry(Split::Test, i, n_train)))
        .collect();
    Ok(CorpusManifest { entries })
}

/// Regenerates or reads one clip. `root` anchors relative file paths.
pub fn load_clip(entry: &ManifestEntry, root: &Path) -> Result<AudioClip> {
    match &entry.source {
        ClipSource::Synthetic { seed } => synth_clip(*seed, entry.duration_s, entry.sample_rate),
        ClipSource::File { path } => {
            let clip = read_wav(&root.join(path))?;
            if clip.duration_s() < MIN_DURATION_S {
                return Err(DataError::InvalidArgument(format!(
                    "{}: clip lasts {:.3} s, shorter than {MIN_DURATION_S} s",
                    entry.id,
                    clip.duration_s()
                )));
            }
            Ok(clip)
        }
    }
}

pub fn load_clips(manifest: &CorpusManifest, split: Split, root: &Path) -> Result<Vec<AudioClip>> {
    manifest.split(split).map(|e| load_clip(e, root)).collect()
}

/// Writes `clips/<id>.wav` for every entry and `manifest.tsv` under `out`.
pub fn write_corpus(manifest: &CorpusManifest, out: &Path) -> Result<PathBuf> {
    let clip_dir = out.join("clips");
    fs::create_dir_all(&clip_dir).map_err(io_err(&clip_dir))?;
    for e in &manifest.entries {
        write_wav(&load_clip(e, out)?, &clip_dir.join(format!("{}.wav", e.id)))?;
    }
    let path = out.join("manifest.tsv");
    manifest.save(&path)?;
    Ok(path)
}
