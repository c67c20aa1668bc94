//! "OEDM" binary container for coil-map sets and images.
//!
//! Layout, all little-endian:
//! - magic `OEDM` (4 bytes);
//! - `u32` N1, N2, T (set count), C (channels per set);
//! - `f64` fov1, fov2 (mm);
//! - `T * C * N` complex values as interleaved `f64` real/imaginary pairs, ordered by
//!   set, then channel, then voxel (row-major).
//!
//! A single image is stored with `T = C = 1`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::encoding::ImageGrid;
use crate::{Error, Result, C64};

const MAGIC: &[u8; 4] = b"OEDM";

#[derive(Debug, Clone, PartialEq)]
pub struct Oedm {
    pub grid: ImageGrid,
    /// `T` arrays of shape `C x N`.
    pub sets: Vec<Array2<C64>>,
}

impl Oedm {
    pub fn image(grid: ImageGrid, image: &[C64]) -> Result<Self> {
        if image.len() != grid.len() {
            return Err(Error::invalid("image length does not match the grid"));
        }
        let a = Array2::from_shape_vec((1, grid.len()), image.to_vec()).expect("shape");
        Ok(Oedm { grid, sets: vec![a] })
    }

    /// First channel of the first set.
    pub fn first_image(&self) -> Vec<C64> {
        self.sets[0].row(0).to_vec()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let channels = self.sets.first().map_or(0, |s| s.nrows());
        for s in &self.sets {
            if s.dim() != (channels, self.grid.len()) {
                return Err(Error::invalid("all sets must share channel count and grid size"));
            }
        }
        let mut buf = Vec::with_capacity(32 + 16 * self.sets.len() * channels * self.grid.len());
        buf.extend_from_slice(MAGIC);
        for v in [self.grid.dims[0], self.grid.dims[1], self.sets.len(), channels] {
            let v = u32::try_from(v).map_err(|_| Error::invalid("dimension exceeds u32"))?;
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.grid.fov[0].to_le_bytes());
        buf.extend_from_slice(&self.grid.fov[1].to_le_bytes());
        for s in &self.sets {
            for z in s.iter() {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 36 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing OEDM header".into()));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
        let f = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"));
        let (n1, n2, t, c) = (u(0), u(1), u(2), u(3));
        let grid = ImageGrid::new([n1, n2], [f(20), f(28)]).map_err(|e| Error::Format(e.to_string()))?;
        let n = grid.len();
        let expected = 36 + 16 * t * c * n;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "OEDM payload has {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let mut sets = Vec::with_capacity(t);
        let mut off = 36;
        for _ in 0..t {
            let mut vals = Vec::with_capacity(c * n);
            for _ in 0..c * n {
                vals.push(C64::new(f(off), f(off + 8)));
                off += 16;
            }
            sets.push(Array2::from_shape_vec((c, n), vals).expect("shape"));
        }
        Ok(Oedm { grid, sets })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
