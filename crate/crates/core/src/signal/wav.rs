//! 16-bit PCM WAV export and the plain-text corpus manifest.

use super::{MatrixCorpus, MaskerGenerator, MaskerSpec, WordClass, Waveform, TOKENS_PER_CLASS};
use crate::error::Result;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub fn write_wav(path: &Path, waveform: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: waveform.num_channels() as u16,
        sample_rate: waveform.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for i in 0..waveform.len() {
        for ch in waveform.channels() {
            let v = (ch[i] * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn read_wav(path: &Path, calibration_db: f64) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
    };
    let channels = (0..nch)
        .map(|c| samples.iter().skip(c).step_by(nch).copied().collect())
        .collect();
    Waveform::new(channels, spec.sample_rate, calibration_db)
}

/// Write every token as a WAV file plus `manifest.tsv`.
pub fn export_corpus(corpus: &MatrixCorpus, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    writeln!(
        manifest,
        "# calibration_db={} sample_rate={}",
        corpus.calibration_db(),
        corpus.sample_rate()
    )
    .unwrap();
    manifest.push_str("token_id\tclass\tfile\tduration_s\n");
    for class in WordClass::ALL {
        for i in 0..TOKENS_PER_CLASS {
            let (w, t) = corpus.render_token(class, i)?;
            let id = t.words()[0];
            let file = format!("{:02}_{}.wav", id.0, id);
            write_wav(&dir.join(&file), &w)?;
            writeln!(
                manifest,
                "{}\t{}\t{}\t{:.4}",
                id.0,
                class.as_str(),
                file,
                w.duration_s()
            )
            .unwrap();
        }
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest)?;
    Ok(path)
}

pub fn export_masker(
    corpus: &MatrixCorpus,
    spec: &MaskerSpec,
    duration_s: f64,
    path: &Path,
) -> Result<()> {
    let w = MaskerGenerator::new(corpus).generate(spec, duration_s, spec.seed)?;
    write_wav(path, &w)
}
