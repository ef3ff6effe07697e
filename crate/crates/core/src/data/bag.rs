//! `XFBAG1` feature-bag container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     6 bytes  "XFBAG1"
//! version   u8       1
//! reserved  u8       0
//! d_in      u32
//! then for each scale in order coarse, source, fine:
//!   n         u32
//!   features  n * d_in f32, row-major
//!   coords    n * 2 i32, (x, y) per patch
//! ```

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const BAG_MAGIC: &[u8; 6] = b"XFBAG1";
pub const BAG_VERSION: u8 = 1;

/// Magnification level of a patch set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scale {
    /// 5x
    Coarse,
    /// 10x
    Source,
    /// 20x
    Fine,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Coarse, Scale::Source, Scale::Fine];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Scale::Coarse => "coarse",
            Scale::Source => "source",
            Scale::Fine => "fine",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Patch embeddings and grid coordinates at one magnification.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScaleFeatures {
    /// `n * d_in` values, row-major.
    pub features: Vec<f32>,
    pub coords: Vec<[i32; 2]>,
}

impl ScaleFeatures {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Features widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        self.features.iter().map(|&v| f64::from(v)).collect()
    }
}

/// One slide's patch embeddings at three magnifications.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    pub d_in: usize,
    pub scales: [ScaleFeatures; 3],
}

impl FeatureBag {
    pub fn scale(&self, s: Scale) -> &ScaleFeatures {
        &self.scales[s.index()]
    }

    pub fn scale_mut(&mut self, s: Scale) -> &mut ScaleFeatures {
        &mut self.scales[s.index()]
    }

    /// Checks the bag invariants: non-empty scales, consistent widths,
    /// finite features and unique coordinates per scale.
    pub fn validate(&self) -> Result<()> {
        for s in Scale::ALL {
            let sf = self.scale(s);
            if sf.is_empty() {
                return Err(Error::Input(format!("{s} scale has no patches")));
            }
            if sf.features.len() != sf.len() * self.d_in {
                return Err(Error::Input(format!(
                    "{s} scale holds {} values for {} patches of width {}",
                    sf.features.len(),
                    sf.len(),
                    self.d_in
                )));
            }
            if sf.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("{s} scale has non-finite features")));
            }
            let mut seen = sf.coords.clone();
            seen.sort_unstable();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Input(format!("{s} scale has duplicate coordinates")));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(
            12 + self.scales.iter().map(|s| 4 + 4 * s.features.len() + 8 * s.len()).sum::<usize>(),
        );
        buf.extend_from_slice(BAG_MAGIC);
        buf.push(BAG_VERSION);
        buf.push(0);
        buf.extend_from_slice(&(self.d_in as u32).to_le_bytes());
        for sf in &self.scales {
            buf.extend_from_slice(&(sf.len() as u32).to_le_bytes());
            for v in &sf.features {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for [x, y] in &sf.coords {
                buf.extend_from_slice(&x.to_le_bytes());
                buf.extend_from_slice(&y.to_le_bytes());
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(6, "magic")?;
        if magic != BAG_MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}", String::from_utf8_lossy(magic))));
        }
        let version = cur.take(1, "version")?[0];
        if version != BAG_VERSION {
            return Err(Error::format(6, format!("unsupported version {version}")));
        }
        let reserved = cur.take(1, "reserved byte")?[0];
        if reserved != 0 {
            return Err(Error::format(7, format!("reserved byte is {reserved}, expected 0")));
        }
        let d_in = cur.u32("d_in")? as usize;
        if d_in == 0 {
            return Err(Error::format(8, "d_in is zero"));
        }
        let mut scales: [ScaleFeatures; 3] = Default::default();
        for s in Scale::ALL {
            let at = cur.pos;
            let n = cur.u32(&format!("{s} patch count"))? as usize;
            let need = n
                .checked_mul(d_in)
                .and_then(|v| v.checked_mul(4))
                .and_then(|v| v.checked_add(n.checked_mul(8)?))
                .ok_or_else(|| Error::format(at as u64, format!("{s} patch count {n} overflows")))?;
            if cur.remaining() < need {
                return Err(Error::format(
                    cur.pos as u64,
                    format!("{s} block truncated: need {need} bytes, {} left", cur.remaining()),
                ));
            }
            let raw = cur.take(n * d_in * 4, s.name())?;
            let features = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let raw = cur.take(n * 8, s.name())?;
            let coords = raw
                .chunks_exact(8)
                .map(|c| {
                    [
                        i32::from_le_bytes(c[..4].try_into().unwrap()),
                        i32::from_le_bytes(c[4..].try_into().unwrap()),
                    ]
                })
                .collect();
            scales[s.index()] = ScaleFeatures { features, coords };
        }
        if cur.remaining() != 0 {
            return Err(Error::format(cur.pos as u64, format!("{} trailing bytes", cur.remaining())));
        }
        Ok(Self { d_in, scales })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn write_bag(bag: &FeatureBag, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bag.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_bag(path: impl AsRef<Path>) -> Result<FeatureBag> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    FeatureBag::decode(&bytes).map_err(|e| Error::in_file(path, e))
}
