//! Files: atomic writes, WAV audio and line-delimited `key=value` records.

use std::fmt::{self, Display};
use std::fs;
use std::io::{BufRead, Cursor, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleFormat {
    #[default]
    Pcm16,
    Float32,
}

impl FromStr for SampleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcm16" => Ok(SampleFormat::Pcm16),
            "float32" => Ok(SampleFormat::Float32),
            other => Err(Error::InvalidConfig(format!(
                "unknown sample format `{other}` (expected pcm16 | float32)"
            ))),
        }
    }
}

/// Deinterleaved multichannel audio with samples nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Audio {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        let audio = Audio {
            sample_rate,
            channels,
        };
        audio.validate()?;
        Ok(audio)
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Self {
        Audio {
            sample_rate,
            channels: vec![samples],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::EmptySignal);
        }
        if self.channels.len() > u16::MAX as usize {
            return Err(Error::InvalidConfig("too many channels".into()));
        }
        let expected = self.len();
        for (channel, c) in self.channels.iter().enumerate() {
            if c.len() != expected {
                return Err(Error::ChannelLengthMismatch {
                    channel,
                    len: c.len(),
                    expected,
                });
            }
        }
        Ok(())
    }
}

pub fn read_wav(path: &Path) -> Result<Audio> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let frames = interleaved.len() / n_ch.max(1);
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, &v) in channels.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    Audio::new(spec.sample_rate, channels)
}

/// Reads per-microphone mono files, in order, as one multichannel signal.
pub fn read_wav_channels(paths: &[PathBuf]) -> Result<Audio> {
    let mut channels = Vec::with_capacity(paths.len());
    let mut rate = None;
    for p in paths {
        let a = read_wav(p)?;
        if a.num_channels() != 1 {
            return Err(Error::InvalidConfig(format!(
                "{} has {} channels; per-microphone files must be mono",
                p.display(),
                a.num_channels()
            )));
        }
        if *rate.get_or_insert(a.sample_rate) != a.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "{} has sample rate {}, expected {}",
                p.display(),
                a.sample_rate,
                rate.unwrap()
            )));
        }
        channels.extend(a.channels);
    }
    Audio::new(rate.ok_or(Error::EmptySignal)?, channels)
}

pub fn encode_wav(audio: &Audio, format: SampleFormat) -> Result<Vec<u8>> {
    audio.validate()?;
    let spec = hound::WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => hound::SampleFormat::Int,
            SampleFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let wav_err = |source| Error::Wav {
        path: PathBuf::from("<memory>"),
        source,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, spec).map_err(wav_err)?;
        for i in 0..audio.len() {
            for c in &audio.channels {
                match format {
                    SampleFormat::Pcm16 => {
                        let v = (c[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                        w.write_sample(v).map_err(wav_err)?;
                    }
                    SampleFormat::Float32 => w.write_sample(c[i] as f32).map_err(wav_err)?,
                }
            }
        }
        w.finalize().map_err(wav_err)?;
    }
    Ok(buf.into_inner())
}

/// Encodes and writes atomically. PCM16 clips samples outside `[-1, 1)`.
pub fn write_wav(path: &Path, audio: &Audio, format: SampleFormat) -> Result<()> {
    let peak = audio
        .channels
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if format == SampleFormat::Pcm16 && peak > 1.0 {
        log::warn!("{}: peak {peak:.3} clips in PCM16", path.display());
    }
    write_atomic(path, &encode_wav(audio, format)?)
}

/// One line of whitespace-separated `key=value` fields, in insertion order.
///
/// Values containing whitespace, quotes, `=` or nothing at all are written
/// double-quoted with backslash escapes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record {
    fields: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Record::default()
    }

    pub fn with(mut self, key: &str, value: impl Display) -> Self {
        self.set(key, value);
        self
    }

    /// Sets `key`, replacing an earlier value.
    pub fn set(&mut self, key: &str, value: impl Display) {
        assert!(
            !key.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)),
            "invalid record key `{key}`"
        );
        let value = value.to_string();
        match self.fields.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.fields.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parse_field<T: FromStr>(&self, key: &str) -> Option<T> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn fields(&self) -> &[(String, String)] {
        &self.fields
    }

    pub fn parse_line(line: &str) -> std::result::Result<Record, String> {
        let mut rec = Record::new();
        let mut chars = line.trim().chars().peekable();
        loop {
            while chars.peek().is_some_and(|c| c.is_whitespace()) {
                chars.next();
            }
            if chars.peek().is_none() {
                break;
            }
            let mut key = String::new();
            loop {
                match chars.next() {
                    Some('=') => break,
                    Some(c) if c.is_whitespace() => return Err(format!("field `{key}` lacks `=`")),
                    Some(c) => key.push(c),
                    None => return Err(format!("field `{key}` lacks `=`")),
                }
            }
            let mut value = String::new();
            if chars.peek() == Some(&'"') {
                chars.next();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some('n') => value.push('\n'),
                            Some(c) => value.push(c),
                            None => return Err("dangling escape".into()),
                        },
                        Some(c) => value.push(c),
                        None => return Err(format!("unterminated quote in `{key}`")),
                    }
                }
            } else {
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() {
                        break;
                    }
                    value.push(c);
                    chars.next();
                }
            }
            if key.is_empty() {
                return Err("empty key".into());
            }
            rec.fields.push((key, value));
        }
        Ok(rec)
    }
}

impl Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            let plain = !v.is_empty()
                && !v
                    .chars()
                    .any(|c| c.is_whitespace() || c == '"' || c == '\\' || c == '=');
            if plain {
                write!(f, "{k}={v}")?;
            } else {
                let escaped = v
                    .replace('\\', "\\\\")
                    .replace('"', "\\\"")
                    .replace('\n', "\\n");
                write!(f, "{k}=\"{escaped}\"")?;
            }
        }
        Ok(())
    }
}

pub fn format_records(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    write_atomic(path, format_records(records).as_bytes())
}

/// Parses a record file; blank lines and `#` comments are skipped.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(Record::parse_line(t).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {message}", i + 1),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip_with_quoting() {
        let r = Record::new()
            .with("kind", "utterance")
            .with("path", "a dir/x=1.wav")
            .with("note", "say \"hi\"\\")
            .with("empty", "")
            .with("fwsnr_db", 12.5);
        let line = r.to_string();
        assert_eq!(Record::parse_line(&line).unwrap(), r);
        assert_eq!(r.parse_field::<f64>("fwsnr_db"), Some(12.5));
        assert!(Record::parse_line("novalue").is_err());
        assert!(Record::parse_line("a=\"open").is_err());
    }

    #[test]
    fn set_replaces() {
        let mut r = Record::new().with("a", 1);
        r.set("a", 2);
        assert_eq!(r.to_string(), "a=2");
    }

    #[test]
    fn wav_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let audio = Audio::new(
            16000,
            vec![vec![0.0, 0.5, -0.25, 0.999], vec![-1.0, 0.125, 0.0, 0.3]],
        )
        .unwrap();
        let p = dir.path().join("f.wav");
        write_wav(&p, &audio, SampleFormat::Float32).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.sample_rate, 16000);
        for (a, b) in audio.channels.iter().flatten().zip(back.channels.iter().flatten()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        let p16 = dir.path().join("g.wav");
        write_wav(&p16, &audio, SampleFormat::Pcm16).unwrap();
        let back = read_wav(&p16).unwrap();
        for (a, b) in audio.channels.iter().flatten().zip(back.channels.iter().flatten()) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
    }

    #[test]
    fn per_mic_files_combine() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.wav");
        let b = dir.path().join("b.wav");
        write_wav(&a, &Audio::mono(8000, vec![0.5; 3]), SampleFormat::Float32).unwrap();
        write_wav(&b, &Audio::mono(8000, vec![-0.5; 3]), SampleFormat::Float32).unwrap();
        let both = read_wav_channels(&[a.clone(), b]).unwrap();
        assert_eq!(both.channels, vec![vec![0.5; 3], vec![-0.5; 3]]);
        let c = dir.path().join("c.wav");
        write_wav(&c, &Audio::mono(16000, vec![0.0; 3]), SampleFormat::Float32).unwrap();
        assert!(read_wav_channels(&[a, c]).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn mismatched_channels_rejected() {
        assert!(matches!(
            Audio::new(16000, vec![vec![0.0; 3], vec![0.0; 2]]),
            Err(Error::ChannelLengthMismatch { channel: 1, .. })
        ));
    }
}
