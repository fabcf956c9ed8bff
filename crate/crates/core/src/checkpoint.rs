//! Binary checkpoint format and on-disk model directories.
//!
//! ```text
//! "PASIA1"  u16 version  u32 count
//! count × { u16 name_len, name (UTF-8), u8 rank, rank × u32 dim, f32 data }
//! ```
//! All integers and floats are little-endian; data is row-major.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::corpus::Vocabulary;
use crate::decoder::ThresholdSet;
use crate::error::{Error, Result};
use crate::model::{params, Model, Params};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"PASIA1";
pub const VERSION: u16 = 1;

pub fn save_checkpoint(p: &Params<Tensor<f32>>) -> Vec<u8> {
    let named = p.named();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Decodes every tensor in file order.
pub fn load_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::format("not a checkpoint (bad magic)"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::format("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8(&name)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&name)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= (bytes.len() - r.pos) / 4)
            .ok_or_else(|| Error::format(format!("checkpoint truncated in tensor {name}")))?;
        let raw = r.take(4 * n, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after the last tensor"));
    }
    Ok(out)
}

/// Loads a checkpoint into the layout of `template`, requiring identical
/// names, order and shapes.
pub fn load_into(template: &Params<Tensor<f32>>, bytes: &[u8]) -> Result<Params<Tensor<f32>>> {
    let loaded = load_checkpoint(bytes)?;
    let expected = template.named();
    for (i, (name, _)) in expected.iter().enumerate() {
        match loaded.get(i) {
            None => return Err(Error::format(format!("checkpoint lacks tensor {name}"))),
            Some((got, _)) if got != name => {
                return Err(Error::format(format!("expected tensor {name}, found {got}")))
            }
            Some(_) => {}
        }
    }
    if let Some((extra, _)) = loaded.get(expected.len()) {
        return Err(Error::format(format!("checkpoint has unexpected tensor {extra}")));
    }
    let mut it = loaded.into_iter();
    template.try_map(|name, t| {
        let (_, got) = it.next().expect("names checked");
        if got.shape() != t.shape() {
            return Err(Error::format(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                got.shape(),
                t.shape()
            )));
        }
        Ok(got)
    })
}

/// A trained model with everything needed to decode.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub config: Config,
    pub model: Model<f32>,
    pub vocab: Vocabulary,
    pub thresholds: ThresholdSet,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const THRESHOLD_FILE: &str = "thresholds.txt";
pub const CONFIG_FILE: &str = "config.cfg";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

impl SavedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join(CHECKPOINT_FILE), save_checkpoint(&self.model.params))?;
        write_file(&dir.join(VOCAB_FILE), self.vocab.to_text())?;
        write_file(&dir.join(THRESHOLD_FILE), self.thresholds.to_text())?;
        write_file(&dir.join(CONFIG_FILE), self.config.to_text())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = |f: &str| -> PathBuf { dir.join(f) };
        let config = Config::parse(&read_text(&path(CONFIG_FILE))?)?;
        let vocab = Vocabulary::from_text(&read_text(&path(VOCAB_FILE))?)?;
        let thresholds = ThresholdSet::from_text(&read_text(&path(THRESHOLD_FILE))?)?;
        let ckpt = path(CHECKPOINT_FILE);
        let bytes = fs::read(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        let template = params::shapes(&config.hyper, vocab.len()).into_map(|_, s| Tensor::<f32>::zeros(&s));
        let params = load_into(&template, &bytes)?;
        Ok(SavedModel {
            model: Model {
                hyper: config.hyper.clone(),
                params,
            },
            config,
            vocab,
            thresholds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{HyperConfig, Interaction};

    fn model(i: Interaction) -> Model<f32> {
        let h = HyperConfig {
            d_w: 4,
            d_r: 3,
            layers: 2,
            d_f: 5,
            interaction: i,
            ..HyperConfig::default()
        };
        Model::new(h, 7, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model(Interaction::PoolSelfAtt);
        let bytes = save_checkpoint(&m.params);
        let back = load_into(&m.params.zeros_like(), &bytes).unwrap();
        for ((_, a), (_, b)) in m.params.named().iter().zip(back.named()) {
            let a: Vec<u32> = a.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = b.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(save_checkpoint(&back), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let m = model(Interaction::Pool);
        let bytes = save_checkpoint(&m.params);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load_checkpoint(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(matches!(load_checkpoint(&bad), Err(Error::Format(_))));
        assert!(matches!(load_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(load_checkpoint(&long), Err(Error::Format(_))));
    }

    #[test]
    fn cross_variant_load_names_the_tensor() {
        let a = model(Interaction::Pool);
        let b = model(Interaction::SelfAtt);
        match load_into(&b.params, &save_checkpoint(&a.params)) {
            Err(Error::Format(m)) => assert!(m.contains("interaction."), "{m}"),
            other => panic!("expected format error, got {other:?}"),
        }
        let base = model(Interaction::Base);
        let mut wide = base.clone();
        wide.hyper.d_r = 4;
        let wide = Model::<f32>::new(wide.hyper, 7, 1).unwrap();
        match load_into(&wide.params, &save_checkpoint(&base.params)) {
            Err(Error::Format(m)) => assert!(m.contains("gru.0.w_z"), "{m}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
