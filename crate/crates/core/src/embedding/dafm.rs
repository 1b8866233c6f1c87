//! DAFM feature record files.
//!
//! Layout (little-endian): magic `b"DAFM"`, version `u16`, then records
//! until end of file, each `frame_id u32, width u16, height u16,
//! channels u16` followed by `width * height * channels` `f32` values,
//! row-major with channels innermost.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corr::FeatureMap;
use crate::error::{Result, TrackError};

pub const DAFM_MAGIC: &[u8; 4] = b"DAFM";
pub const DAFM_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DafmRecord {
    pub frame_id: u32,
    pub map: FeatureMap,
}

pub fn write_dafm(path: impl AsRef<Path>, records: &[DafmRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| TrackError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dafm_to(&mut w, records).map_err(|e| match e {
        TrackError::Io { source, .. } => TrackError::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| TrackError::io(path, e))
}

pub fn write_dafm_to<W: Write>(w: &mut W, records: &[DafmRecord]) -> Result<()> {
    let io = |e| TrackError::io("<writer>", e);
    w.write_all(DAFM_MAGIC).map_err(io)?;
    w.write_all(&DAFM_VERSION.to_le_bytes()).map_err(io)?;
    for rec in records {
        let (width, height, channels) = rec.map.dims();
        let narrow = |v: usize, what: &str| {
            u16::try_from(v).map_err(|_| TrackError::dim(format!("{what} {v} exceeds u16")))
        };
        let (width, height, channels) = (
            narrow(width, "width")?,
            narrow(height, "height")?,
            narrow(channels, "channels")?,
        );
        w.write_all(&rec.frame_id.to_le_bytes()).map_err(io)?;
        w.write_all(&width.to_le_bytes()).map_err(io)?;
        w.write_all(&height.to_le_bytes()).map_err(io)?;
        w.write_all(&channels.to_le_bytes()).map_err(io)?;
        for v in rec.map.data() {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_dafm(path: impl AsRef<Path>) -> Result<Vec<DafmRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TrackError::io(path, e))?;
    read_dafm_from(BufReader::new(file)).map_err(|e| match e {
        TrackError::Io { source, .. } => TrackError::io(path, source),
        other => other,
    })
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    /// Fills `buf`; `Ok(false)` on clean EOF before the first byte.
    fn fill(&mut self, buf: &mut [u8], what: &str, eof_ok: bool) -> Result<bool> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    if got == 0 && eof_ok {
                        return Ok(false);
                    }
                    return Err(TrackError::format(
                        self.offset + got as u64,
                        format!("truncated {what}: needed {} bytes, got {got}", buf.len()),
                    ));
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(TrackError::io("<reader>", e)),
            }
        }
        self.offset += buf.len() as u64;
        Ok(true)
    }
}

pub fn read_dafm_from<R: Read>(reader: R) -> Result<Vec<DafmRecord>> {
    let mut cur = Cursor {
        inner: reader,
        offset: 0,
    };
    let mut magic = [0u8; 4];
    cur.fill(&mut magic, "magic", false)?;
    if &magic != DAFM_MAGIC {
        return Err(TrackError::format(0, format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 2];
    cur.fill(&mut version, "version", false)?;
    let version = u16::from_le_bytes(version);
    if version != DAFM_VERSION {
        return Err(TrackError::format(4, format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    loop {
        let start = cur.offset;
        let mut header = [0u8; 10];
        if !cur.fill(&mut header, "record header", true)? {
            break;
        }
        let frame_id = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let width = u16::from_le_bytes(header[4..6].try_into().unwrap()) as usize;
        let height = u16::from_le_bytes(header[6..8].try_into().unwrap()) as usize;
        let channels = u16::from_le_bytes(header[8..10].try_into().unwrap()) as usize;
        if width == 0 || height == 0 || channels == 0 {
            return Err(TrackError::format(start, "record with zero dimension"));
        }
        let mut raw = vec![0u8; width * height * channels * 4];
        cur.fill(&mut raw, "record data", false)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let map = FeatureMap::new(width, height, channels, data)
            .map_err(|e| TrackError::format(start, e.to_string()))?;
        records.push(DafmRecord { frame_id, map });
    }
    Ok(records)
}
