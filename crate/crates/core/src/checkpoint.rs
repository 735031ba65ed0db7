//! On-disk parameter container shared by classifiers and the learned
//! codec: magic "RPRS", u16 format version, architecture tag, metadata,
//! then per-parameter records with little-endian 32-bit floats.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::learned::LearnedCodec;
use crate::nn::{Arch, Model};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RPRS";
pub const VERSION: u16 = 1;
const CODEC_TAG: &str = "learned_codec";

fn io_err(path: &Path, source: std::io::Error) -> CoreError {
    CoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(tag: &str) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.buf.extend_from_slice(&VERSION.to_le_bytes());
        w.str16(tag);
        w
    }

    fn str16(&mut self, s: &str) {
        self.buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn params(&mut self, params: &[(String, Tensor)]) {
        self.u32(params.len() as u32);
        for (name, t) in params {
            self.str16(name);
            self.buf.push(t.shape().len() as u8);
            for &d in t.shape() {
                self.u32(d as u32);
            }
            for &v in t.data() {
                self.buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }

    fn finish(self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(&self.buf).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    }
}

struct Reader {
    buf: Vec<u8>,
    pos: usize,
    path: String,
}

impl Reader {
    fn open(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| io_err(path, e))?;
        Ok(Reader {
            buf,
            pos: 0,
            path: path.display().to_string(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CoreError::Format(format!(
                "{}: truncated checkpoint (wanted {n} bytes at offset {})",
                self.path, self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CoreError::Format(format!("{}: non-UTF8 name", self.path)))
    }

    /// Validate magic and version, return the architecture tag.
    fn header(&mut self) -> Result<String> {
        let magic: [u8; 4] = self.take(4)?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(CoreError::Format(format!(
                "{}: bad magic {:02x?}, expected {:02x?}",
                self.path, magic, MAGIC
            )));
        }
        let version = self.u16()?;
        if version != VERSION {
            return Err(CoreError::Format(format!(
                "{}: unsupported checkpoint version {version}, this build reads {VERSION}",
                self.path
            )));
        }
        self.str16()
    }

    fn params(&mut self) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name = self.str16()?;
            let ndim = self.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(self.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let bytes = self.take(4)?;
                data.push(f32::from_le_bytes(bytes.try_into().unwrap()) as f64);
            }
            params.push((name, Tensor::new(data, shape)?));
        }
        if self.pos != self.buf.len() {
            return Err(CoreError::Format(format!(
                "{}: {} trailing bytes after parameters",
                self.path,
                self.buf.len() - self.pos
            )));
        }
        Ok(params)
    }

    fn spec(&mut self) -> Result<(usize, usize, usize)> {
        Ok((
            self.u32()? as usize,
            self.u32()? as usize,
            self.u32()? as usize,
        ))
    }
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let mut w = Writer::new(model.arch.tag());
    w.u32(model.num_classes as u32);
    let (c, h, wd) = model.input_spec;
    w.u32(c as u32);
    w.u32(h as u32);
    w.u32(wd as u32);
    w.params(&model.params);
    w.finish(path)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut r = Reader::open(path)?;
    let tag = r.header()?;
    if tag == CODEC_TAG {
        return Err(CoreError::Format(format!(
            "{}: checkpoint holds a {CODEC_TAG:?}, expected a classifier",
            path.display()
        )));
    }
    let arch = Arch::from_tag(&tag)?;
    let num_classes = r.u32()? as usize;
    let input_spec = r.spec()?;
    let params = r.params()?;
    Ok(Model {
        arch,
        params,
        num_classes,
        input_spec,
    })
}

/// Load a classifier and reject the wrong architecture, naming both the
/// stored and expected tags.
pub fn load_model_as(path: &Path, expected: Arch) -> Result<Model> {
    let model = load_model(path)?;
    if model.arch != expected {
        return Err(CoreError::Format(format!(
            "{}: checkpoint architecture {:?} does not match requested {:?}",
            path.display(),
            model.arch.tag(),
            expected.tag()
        )));
    }
    Ok(model)
}

pub fn save_codec(path: &Path, codec: &LearnedCodec) -> Result<()> {
    let mut w = Writer::new(CODEC_TAG);
    w.f64(codec.lambda);
    w.buf.push(codec.trained as u8);
    let (c, h, wd) = codec.input_spec;
    w.u32(c as u32);
    w.u32(h as u32);
    w.u32(wd as u32);
    w.params(&codec.params);
    w.finish(path)
}

pub fn load_codec(path: &Path) -> Result<LearnedCodec> {
    let mut r = Reader::open(path)?;
    let tag = r.header()?;
    if tag != CODEC_TAG {
        return Err(CoreError::Format(format!(
            "{}: checkpoint architecture {tag:?} does not match requested {CODEC_TAG:?}",
            path.display()
        )));
    }
    let lambda = r.f64()?;
    let trained = r.take(1)?[0] != 0;
    let input_spec = r.spec()?;
    let params = r.params()?;
    Ok(LearnedCodec {
        params,
        lambda,
        input_spec,
        trained,
    })
}
