//! Shared binary container: `BXM1`, u32 version, u32 kind, then a payload of
//! little-endian scalars. Matrices are u32 rows, u32 cols and row-major f32.

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"BXM1";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum FileKind {
    Checkpoint = 1,
    Embeddings = 2,
    Index = 3,
}

impl FileKind {
    fn name(self) -> &'static str {
        match self {
            FileKind::Checkpoint => "checkpoint",
            FileKind::Embeddings => "embeddings",
            FileKind::Index => "index",
        }
    }
}

fn dim(n: usize) -> u32 {
    u32::try_from(n).expect("dimension exceeds u32")
}

pub struct Encoder {
    buf: Vec<u8>,
}

// Writes into a Vec<u8> cannot fail.
impl Encoder {
    pub fn new(kind: FileKind) -> Self {
        let mut e = Self { buf: Vec::new() };
        e.buf.extend_from_slice(MAGIC);
        e.u32(VERSION);
        e.u32(kind as u32);
        e
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LE>(v).unwrap();
    }

    pub fn len(&mut self, n: usize) {
        self.u32(dim(n));
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LE>(v).unwrap();
    }

    pub fn u128(&mut self, v: u128) {
        self.buf.write_u128::<LE>(v).unwrap();
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.write_f32::<LE>(v).unwrap();
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn f32s(&mut self, v: &[f32]) {
        self.len(v.len());
        for &x in v {
            self.f32(x);
        }
    }

    pub fn matrix(&mut self, m: &Matrix<f32>) {
        self.len(m.rows());
        self.len(m.cols());
        for &x in m.as_slice() {
            self.f32(x);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    rest: &'a [u8],
}

fn truncated(what: &str) -> Error {
    Error::CorruptFile(format!("truncated while reading {what}"))
}

impl<'a> Decoder<'a> {
    /// Checks magic, version and kind.
    pub fn new(data: &'a [u8], kind: FileKind) -> Result<Self> {
        if data.len() < 4 || &data[..4] != MAGIC {
            let found = String::from_utf8_lossy(&data[..data.len().min(4)]).into_owned();
            return Err(Error::CorruptFile(format!(
                "bad magic {found:?}, expected {:?}",
                std::str::from_utf8(MAGIC).unwrap()
            )));
        }
        let mut d = Self { rest: &data[4..] };
        let version = d.u32("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: VERSION,
            });
        }
        let found = d.u32("file kind")?;
        if found != kind as u32 {
            return Err(Error::CorruptFile(format!(
                "file kind {found} is not a {} file",
                kind.name()
            )));
        }
        Ok(d)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        self.rest.read_u8().map_err(|_| truncated(what))
    }

    pub fn bool(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::CorruptFile(format!("{what}: invalid flag byte {b}"))),
        }
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        self.rest.read_u32::<LE>().map_err(|_| truncated(what))
    }

    pub fn len(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        self.rest.read_u64::<LE>().map_err(|_| truncated(what))
    }

    pub fn u128(&mut self, what: &str) -> Result<u128> {
        self.rest.read_u128::<LE>().map_err(|_| truncated(what))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        self.rest.read_f32::<LE>().map_err(|_| truncated(what))
    }

    pub fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        std::io::Read::read_exact(&mut self.rest, &mut out).map_err(|_| truncated(what))?;
        Ok(out)
    }

    fn f32_run(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        if n.checked_mul(4).map_or(true, |b| b > self.rest.len()) {
            return Err(truncated(what));
        }
        let mut out = vec![0f32; n];
        self.rest.read_f32_into::<LE>(&mut out).map_err(|_| truncated(what))?;
        Ok(out)
    }

    pub fn f32s(&mut self, what: &str) -> Result<Vec<f32>> {
        let n = self.len(what)?;
        self.f32_run(n, what)
    }

    pub fn matrix(&mut self, what: &str) -> Result<Matrix<f32>> {
        let rows = self.len(what)?;
        let cols = self.len(what)?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::CorruptFile(format!("{what}: shape overflows")))?;
        let data = self.f32_run(n, what)?;
        Matrix::from_vec(rows, cols, data)
    }

    pub fn finish(self) -> Result<()> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(Error::CorruptFile(format!("{} trailing bytes", self.rest.len())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let bytes = Encoder::new(FileKind::Embeddings).finish();
        assert_eq!(bytes, b"BXM1\x01\x00\x00\x00\x02\x00\x00\x00");
    }

    #[test]
    fn scalars_and_matrices() {
        let m = Matrix::from_vec(2, 3, vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, f32::MAX, -7.25]).unwrap();
        let mut e = Encoder::new(FileKind::Index);
        e.bool(true);
        e.u64(u64::MAX - 3);
        e.u128(1 << 100);
        e.matrix(&m);
        e.f32s(&[]);
        let bytes = e.finish();
        let mut d = Decoder::new(&bytes, FileKind::Index).unwrap();
        assert!(d.bool("b").unwrap());
        assert_eq!(d.u64("u").unwrap(), u64::MAX - 3);
        assert_eq!(d.u128("w").unwrap(), 1 << 100);
        let back = d.matrix("m").unwrap();
        let bits = |m: &Matrix<f32>| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert!(d.f32s("empty").unwrap().is_empty());
        d.finish().unwrap();
    }

    #[test]
    fn rejects_bad_headers() {
        let err = |r: Result<Decoder<'_>>| r.err().unwrap().to_string();
        assert!(err(Decoder::new(b"XXXX\x01\0\0\0\x01\0\0\0", FileKind::Checkpoint)).contains("magic"));
        assert!(err(Decoder::new(b"BX", FileKind::Checkpoint)).contains("magic"));
        assert!(matches!(
            Decoder::new(b"BXM1\x02\0\0\0\x01\0\0\0", FileKind::Checkpoint).err().unwrap(),
            Error::VersionMismatch { found: 2, supported: 1 }
        ));
        assert!(err(Decoder::new(b"BXM1\x01\0\0\0\x02\0\0\0", FileKind::Checkpoint)).contains("kind"));
    }

    #[test]
    fn huge_shape_is_truncation_not_allocation() {
        let mut e = Encoder::new(FileKind::Embeddings);
        e.u32(u32::MAX);
        e.u32(u32::MAX);
        let bytes = e.finish();
        let mut d = Decoder::new(&bytes, FileKind::Embeddings).unwrap();
        assert!(matches!(d.matrix("m"), Err(Error::CorruptFile(_))));
    }
}
