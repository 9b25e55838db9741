//! Model files: everything a tracking run learned, in one versioned binary.
//!
//! Layout, little-endian throughout:
//!
//! | field            | encoding                                   |
//! |------------------|--------------------------------------------|
//! | magic            | `RNNTMODL`                                 |
//! | version          | `u32`                                      |
//! | config echo      | `u64` length + UTF-8 TOML                  |
//! | parameters       | parameter binary (own magic and version)   |
//! | descriptor trees | `u64` count, then `u64` length + text each |
//! | raw dictionaries | holistic then local dictionary             |
//! | feature flag     | `u8`, followed by two dictionaries if 1    |

use std::io::{Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::rnn::Theta;
use crate::sparse::{Dictionary, DictionaryPair};
use crate::tracker::TrackerModel;
use crate::tree::MergeTree;

const MODEL_MAGIC: &[u8; 8] = b"RNNTMODL";
const MODEL_VERSION: u32 = 1;
const MAX_SECTION: u64 = 1 << 24;

fn write_text<W: Write>(out: &mut W, text: &str) -> Result<()> {
    out.write_all(&(text.len() as u64).to_le_bytes())?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(src: &mut R) -> Result<u64> {
    let mut word = [0u8; 8];
    src.read_exact(&mut word)?;
    Ok(u64::from_le_bytes(word))
}

fn read_text<R: Read>(src: &mut R) -> Result<String> {
    let len = read_u64(src)?;
    if len > MAX_SECTION {
        return Err(Error::Model(format!("text section of {len} bytes")));
    }
    let mut buf = vec![0u8; len as usize];
    src.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Model("text section is not UTF-8".into()))
}

fn write_pair<W: Write>(out: &mut W, pair: &DictionaryPair) -> Result<()> {
    pair.holistic.write_binary(&mut *out)?;
    pair.local.write_binary(&mut *out)
}

fn read_pair<R: Read>(src: &mut R) -> Result<DictionaryPair> {
    let holistic = Dictionary::read_binary(&mut *src)?;
    let local = Dictionary::read_binary(&mut *src)?;
    Ok(DictionaryPair { holistic, local })
}

/// Writes `model`, echoing `run` as the effective configuration. The echo's
/// tracker settings are taken from the model so the two cannot disagree.
pub fn write_model<W: Write>(mut out: W, model: &TrackerModel, run: &RunConfig) -> Result<()> {
    let mut echo = RunConfig::from_tracker(&model.config);
    echo.verbosity = run.verbosity;
    echo.paths = run.paths.clone();
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&MODEL_VERSION.to_le_bytes())?;
    write_text(&mut out, &echo.to_toml())?;
    model.theta.write_binary(&mut out)?;
    out.write_all(&(model.trees.len() as u64).to_le_bytes())?;
    for t in &model.trees {
        write_text(&mut out, &t.to_text())?;
    }
    write_pair(&mut out, &model.raw)?;
    match &model.features {
        Some(f) => {
            out.write_all(&[1])?;
            write_pair(&mut out, f)?;
        }
        None => out.write_all(&[0])?,
    }
    Ok(())
}

pub fn read_model<R: Read>(mut src: R) -> Result<(TrackerModel, RunConfig)> {
    let mut magic = [0u8; 8];
    src.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Model("not a model file".into()));
    }
    let mut word = [0u8; 4];
    src.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != MODEL_VERSION {
        return Err(Error::Model(format!("unsupported model version {version}")));
    }
    let run = RunConfig::parse(&read_text(&mut src)?)?;
    let config = run.tracker()?;
    let theta = Theta::read_binary(&mut src)?;
    if theta.n() != config.n {
        return Err(Error::Model(format!(
            "parameters have n = {} but the config says {}",
            theta.n(),
            config.n
        )));
    }
    let count = read_u64(&mut src)?;
    if count > MAX_SECTION {
        return Err(Error::Model(format!("{count} trees")));
    }
    let trees = (0..count)
        .map(|_| MergeTree::from_text(&read_text(&mut src)?))
        .collect::<Result<Vec<_>>>()?;
    let raw = read_pair(&mut src)?;
    let mut flag = [0u8; 1];
    src.read_exact(&mut flag)?;
    let features = match flag[0] {
        0 => None,
        1 => Some(read_pair(&mut src)?),
        other => return Err(Error::Model(format!("bad feature flag {other}"))),
    };
    Ok((TrackerModel { config, theta, trees, raw, features }, run))
}

pub fn save_model(path: &Path, model: &TrackerModel, run: &RunConfig) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, model, run)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(TrackerModel, RunConfig)> {
    read_model(std::fs::read(path)?.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::FrameFeatures;
    use crate::tracker::{descriptor_trees, TrackerConfig};

    fn small_model() -> TrackerModel {
        let config = TrackerConfig { n: 3, trees: 2, ..Default::default() };
        let frame = |f: usize| {
            FrameFeatures::new(f, vec![f as f64, 1.0], (0..9).map(|p| vec![p as f64, 1.0, 0.5]).collect()).unwrap()
        };
        let raw = DictionaryPair::from_frames(&[frame(1), frame(2)]).unwrap();
        TrackerModel {
            theta: Theta::init(3, 5).unwrap(),
            trees: descriptor_trees(&config).unwrap(),
            raw: raw.clone(),
            features: Some(raw),
            config,
        }
    }

    #[test]
    fn round_trip() {
        let model = small_model();
        let mut buf = Vec::new();
        write_model(&mut buf, &model, &RunConfig::default()).unwrap();
        let (back, run) = read_model(buf.as_slice()).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.theta, model.theta);
        assert_eq!(back.trees, model.trees);
        assert_eq!(back.raw, model.raw);
        assert_eq!(back.features, model.features);
        assert_eq!(run.network.n, 3);
    }

    #[test]
    fn truncated_or_foreign_files_fail() {
        let mut buf = Vec::new();
        write_model(&mut buf, &small_model(), &RunConfig::default()).unwrap();
        assert!(read_model(&buf[..buf.len() - 3]).is_err());
        assert!(read_model(&b"NOTAMODELFILE..."[..]).is_err());
    }
}
