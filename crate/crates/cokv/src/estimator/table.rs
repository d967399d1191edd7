//! Binary persistence for contribution tables.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    8 bytes  "COKVTBL\0"
//! version  u32      1
//! n        u32
//! h        u32      slice-set length, then h × u32 slice sizes
//! seed     u64
//! samples  u64
//! sums     n*n × f64, row-major (row player, column size−1)
//! counts   n*n × u64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ContributionTable, EstimateError};

const MAGIC: &[u8; 8] = b"COKVTBL\0";
const VERSION: u32 = 1;

/// Write the table to `path`, replacing any existing file.
pub fn save_table(table: &ContributionTable, path: &Path) -> Result<(), EstimateError> {
    let file = File::create(path).map_err(|source| EstimateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, bytes: &[u8]| {
        out.write_all(bytes).map_err(|source| EstimateError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    write(&mut out, MAGIC)?;
    write(&mut out, &VERSION.to_le_bytes())?;
    write(&mut out, &(table.n as u32).to_le_bytes())?;
    write(&mut out, &(table.slice_sizes.len() as u32).to_le_bytes())?;
    for &j in &table.slice_sizes {
        write(&mut out, &(j as u32).to_le_bytes())?;
    }
    write(&mut out, &table.seed.to_le_bytes())?;
    write(&mut out, &table.samples_drawn.to_le_bytes())?;
    for v in &table.sums {
        write(&mut out, &v.to_le_bytes())?;
    }
    for c in &table.counts {
        write(&mut out, &c.to_le_bytes())?;
    }
    out.flush().map_err(|source| EstimateError::Io { path: path.to_path_buf(), source })
}

/// Read a table back; the inverse of [`save_table`].
pub fn load_table(path: &Path) -> Result<ContributionTable, EstimateError> {
    let file = File::open(path).map_err(|source| EstimateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = Reader { inner: BufReader::new(file), path, offset: 0 };

    let magic = reader.bytes::<8>()?;
    if &magic != MAGIC {
        return Err(reader.bad(format!("bad magic {magic:02x?}, expected {MAGIC:02x?}")));
    }
    let version = reader.u32()?;
    if version != VERSION {
        return Err(reader.bad(format!("unsupported version {version}, expected {VERSION}")));
    }
    let n = reader.u32()? as usize;
    if n == 0 {
        return Err(reader.bad("player count must be at least 1".into()));
    }
    let h = reader.u32()? as usize;
    if h == 0 || h > n {
        return Err(reader.bad(format!("slice-set length {h} invalid for n = {n}")));
    }
    let mut slice_sizes = Vec::with_capacity(h);
    for _ in 0..h {
        slice_sizes.push(reader.u32()? as usize);
    }
    if !slice_sizes.windows(2).all(|w| w[0] < w[1])
        || slice_sizes.iter().any(|&j| j < 1 || j > n)
    {
        return Err(reader.bad(format!("invalid slice set {slice_sizes:?} for n = {n}")));
    }
    let seed = reader.u64()?;
    let samples_drawn = reader.u64()?;
    let mut sums = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        sums.push(f64::from_le_bytes(reader.bytes::<8>()?));
    }
    let mut counts = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        counts.push(reader.u64()?);
    }
    let mut trailing = [0u8; 1];
    match reader.inner.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(reader.bad("trailing bytes after table payload".into())),
        Err(source) => {
            return Err(EstimateError::Io { path: path.to_path_buf(), source });
        }
    }
    Ok(ContributionTable { n, slice_sizes, sums, counts, seed, samples_drawn })
}

/// Load a table and require it to describe the expected game dimensions;
/// the resume path uses this so a table can never silently continue a
/// different configuration.
pub fn load_table_expecting(
    path: &Path,
    n: usize,
    slice_sizes: &[usize],
) -> Result<ContributionTable, EstimateError> {
    let table = load_table(path)?;
    if table.n != n {
        return Err(EstimateError::TableMismatch(format!(
            "table at {} covers {} players, expected {n}",
            path.display(),
            table.n
        )));
    }
    if table.slice_sizes != slice_sizes {
        return Err(EstimateError::TableMismatch(format!(
            "table at {} has slice set {:?}, expected {:?}",
            path.display(),
            table.slice_sizes,
            slice_sizes
        )));
    }
    Ok(table)
}

struct Reader<'p> {
    inner: BufReader<File>,
    path: &'p Path,
    offset: u64,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], EstimateError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|source| {
            if source.kind() == std::io::ErrorKind::UnexpectedEof {
                EstimateError::Format {
                    path: self.path.to_path_buf(),
                    message: format!("truncated at byte {}", self.offset),
                }
            } else {
                EstimateError::Io { path: self.path.to_path_buf(), source }
            }
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, EstimateError> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?))
    }

    fn u64(&mut self) -> Result<u64, EstimateError> {
        Ok(u64::from_le_bytes(self.bytes::<8>()?))
    }

    fn bad(&self, message: String) -> EstimateError {
        EstimateError::Format { path: self.path.to_path_buf(), message }
    }
}
