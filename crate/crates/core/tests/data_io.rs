use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use tcan_core::audio::AudioClip;
use tcan_core::data_io::{
    build_corpus, decode_wav, encode_wav, load_clip, load_clips, read_wav, synth_clip, write_corpus, write_wav,
    ClipSource, CorpusManifest, DataError, ManifestEntry, Split,
};

#[test]
fn synth_is_deterministic_and_peak_normalized() {
    for seed in [0, 1, 99, u64::MAX] {
        let a = synth_clip(seed, 3.0, 16_000).unwrap();
        let b = synth_clip(seed, 3.0, 16_000).unwrap();
        let bits = |c: &AudioClip| c.samples().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let peak = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
        assert_eq!(a.len(), 48_000);
    }
}

#[test]
fn synth_energy_stays_below_6khz() {
    let n = 48_000;
    let fft: Arc<dyn rustfft::Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    let cutoff = 6_000 * n / 16_000;
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let clip = synth_clip(seed, 3.0, 16_000).unwrap();
        let mut buf: Vec<Complex<f64>> = clip.samples().iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect();
        let total: f64 = power.iter().sum();
        let high: f64 = power[cutoff..].iter().sum();
        worst = worst.max(high / total);
    }
    assert!(worst < 0.05, "worst high-band share {worst}");
}

#[test]
fn wav_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let clip = synth_clip(5, 2.5, 16_000).unwrap();
    write_wav(&clip, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate_hz(), 16_000);
    for (a, b) in clip.samples().iter().zip(back.samples()) {
        assert!((a - b).abs() <= 0.5 / 32768.0);
    }
    write_wav(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert_eq!(read_wav(&path).unwrap(), back);
}

fn patch_u16(b: &mut [u8], at: usize, v: u16) {
    b[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

#[test]
fn unsupported_encodings_are_named() {
    let good = encode_wav(&AudioClip::new(vec![0.1; 10], 16_000).unwrap());
    let mut stereo = good.clone();
    patch_u16(&mut stereo, 22, 2);
    assert!(matches!(decode_wav(&stereo), Err(DataError::Unsupported { channels: 2, .. })));
    let mut float = good.clone();
    patch_u16(&mut float, 20, 3);
    assert!(matches!(decode_wav(&float), Err(DataError::Unsupported { format_code: 3, .. })));
    let mut eight_bit = good.clone();
    patch_u16(&mut eight_bit, 34, 8);
    assert!(matches!(decode_wav(&eight_bit), Err(DataError::Unsupported { bits: 8, .. })));
}

#[test]
fn truncation_errors_name_offsets() {
    let good = encode_wav(&AudioClip::new(vec![0.1; 10], 16_000).unwrap());
    assert_eq!(good.len(), 64);

    // File cut short: the RIFF size promises 64 bytes.
    let err = decode_wav(&good[..50]).unwrap_err();
    assert!(matches!(err, DataError::Truncated { declared_end: 64, actual_end: 50, .. }), "{err}");
    assert!(err.to_string().contains("64") && err.to_string().contains("50"));

    // Data chunk claims more samples than the file holds.
    let mut long_data = good.clone();
    long_data[40..44].copy_from_slice(&40u32.to_le_bytes());
    assert!(matches!(
        decode_wav(&long_data),
        Err(DataError::Truncated { what: "data chunk", declared_end: 84, actual_end: 64 })
    ));

    // Header-declared RIFF length shorter than the payload.
    let mut short_riff = good.clone();
    short_riff[4..8].copy_from_slice(&46u32.to_le_bytes());
    assert!(matches!(
        decode_wav(&short_riff),
        Err(DataError::Truncated { what: "RIFF header", declared_end: 54, actual_end: 64 })
    ));
}

#[test]
fn malformed_headers() {
    assert!(matches!(decode_wav(b"RIFX\0\0\0\0WAVE"), Err(DataError::Malformed { .. })));
    assert!(matches!(decode_wav(b""), Err(DataError::Malformed { .. })));
    let good = encode_wav(&AudioClip::new(vec![0.1; 10], 16_000).unwrap());
    let mut no_fmt = good.clone();
    no_fmt[12..16].copy_from_slice(b"junk");
    assert!(matches!(decode_wav(&no_fmt), Err(DataError::Malformed { .. })));
}

#[test]
fn default_corpus_layout() {
    let m = build_corpus(500, 100, 42).unwrap();
    assert_eq!(m.split(Split::Train).count(), 500);
    assert_eq!(m.split(Split::Test).count(), 100);
    assert!(m.entries.iter().all(|e| e.duration_s == 3.0 && e.sample_rate == 16_000));
    m.validate().unwrap();
    let seed = |e: &ManifestEntry| match e.source {
        ClipSource::Synthetic { seed } => seed,
        _ => unreachable!(),
    };
    let train: Vec<u64> = m.split(Split::Train).map(seed).collect();
    let test: Vec<u64> = m.split(Split::Test).map(seed).collect();
    assert!(train.iter().all(|s| !test.contains(s)));
    assert!(build_corpus(0, 1, 0).is_err() && build_corpus(1, 0, 0).is_err());
}

#[test]
fn manifest_replay_regenerates_identical_clips() {
    let m = build_corpus(4, 2, 8).unwrap();
    let replayed = CorpusManifest::parse(&m.to_text()).unwrap();
    let root = std::path::Path::new(".");
    for split in [Split::Train, Split::Test] {
        assert_eq!(load_clips(&m, split, root).unwrap(), load_clips(&replayed, split, root).unwrap());
    }
    let train = load_clips(&m, Split::Train, root).unwrap();
    let test = load_clips(&m, Split::Test, root).unwrap();
    assert!(train.iter().all(|a| !test.contains(a)));
}

#[test]
fn written_corpus_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_corpus(2, 1, 3).unwrap();
    let path = write_corpus(&m, dir.path()).unwrap();
    assert_eq!(CorpusManifest::load(&path).unwrap(), m);
    let files: Vec<_> = std::fs::read_dir(dir.path().join("clips")).unwrap().collect();
    assert_eq!(files.len(), 3);

    // A manifest that points at the written files loads them as audio.
    let as_files = CorpusManifest {
        entries: m
            .entries
            .iter()
            .map(|e| ManifestEntry {
                source: ClipSource::File { path: format!("clips/{}.wav", e.id).into() },
                ..e.clone()
            })
            .collect(),
    };
    for (a, b) in m.entries.iter().zip(&as_files.entries) {
        let synth = load_clip(a, dir.path()).unwrap();
        let wav = load_clip(b, dir.path()).unwrap();
        assert!(synth.samples().iter().zip(wav.samples()).all(|(x, y)| (x - y).abs() <= 0.5 / 32768.0));
    }
}

#[test]
fn short_wav_entries_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_wav(&AudioClip::new(vec![0.1; 16_000], 16_000).unwrap(), &dir.path().join("s.wav")).unwrap();
    let e = ManifestEntry {
        id: "s".into(),
        split: Split::Train,
        source: ClipSource::File { path: "s.wav".into() },
        duration_s: 3.0,
        sample_rate: 16_000,
    };
    assert!(matches!(load_clip(&e, dir.path()), Err(DataError::InvalidArgument(_))));
}
