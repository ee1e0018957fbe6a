//! Multichannel WAV files. Written as 32-bit float PCM; integer and float
//! inputs are both accepted on read.

use std::io::{Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::scene::MultichannelAudio;

fn spec(audio: &MultichannelAudio) -> WavSpec {
    WavSpec {
        channels: audio.channel_count() as u16,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    }
}

pub fn write_wav_to<W: Write + Seek>(w: W, audio: &MultichannelAudio) -> Result<()> {
    if audio.channel_count() > u16::MAX as usize {
        return Err(Error::param("channels", "too many channels for a WAV file"));
    }
    let mut writer = WavWriter::new(w, spec(audio))?;
    for i in 0..audio.len() {
        for ch in audio.channels() {
            writer.write_sample(ch[i] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_wav(path: impl AsRef<Path>, audio: &MultichannelAudio) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_wav_to(file, audio)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelAudio> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    if n_ch == 0 {
        return Err(Error::ShapeMismatch("WAV file has no channels".into()));
    }
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 2f64.powi(i32::from(spec.bits_per_sample) - 1);
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let len = samples.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(len); n_ch];
    for frame in samples.chunks_exact(n_ch) {
        for (ch, &s) in channels.iter_mut().zip(frame) {
            ch.push(s);
        }
    }
    MultichannelAudio::new(channels, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        let audio =
            MultichannelAudio::new(vec![vec![0.5, -0.25, 0.125], vec![0.0, 1.0, -1.0]], 24_000)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &audio).unwrap();
        assert_eq!(read_wav(&p).unwrap(), audio);
    }

    #[test]
    fn reads_int16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [16384i16, -32768, 0] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let a = read_wav(&p).unwrap();
        assert_eq!(a.channels()[0], vec![0.5, -1.0, 0.0]);
        assert_eq!(a.sample_rate(), 8000);
    }
}
