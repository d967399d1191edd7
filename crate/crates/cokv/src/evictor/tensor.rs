//! Row-major f32 matrices and the head tensor file format.
//!
//! A tensor file is a single JSON header line
//! `{"magic":"cokvtensor","version":1,"m":...,"s":...,"d_h":...}`
//! followed by little-endian 32-bit-float row-major payloads in the order
//! q_win, k_out, v_out, k_win, v_win. Scores are always computed in f64;
//! f32 is the storage and interchange type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvictError;

/// Dense row-major matrix of f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, EvictError> {
        if data.len() != rows * cols {
            return Err(EvictError::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// New matrix containing the given rows in the given order.
    pub fn gather_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self { rows: rows.len(), cols: self.cols, data }
    }

    /// New matrix with `other`'s rows appended below.
    pub fn stack(&self, other: &Matrix) -> Result<Self, EvictError> {
        if self.cols != other.cols && self.rows > 0 && other.rows > 0 {
            return Err(EvictError::Shape(format!(
                "cannot stack {} columns onto {}",
                other.cols, self.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self { rows: self.rows + other.rows, cols: self.cols.max(other.cols), data })
    }
}

/// One attention head's tensors split at the local window: the last `s`
/// positions are the window, the `m − s` before it are the prefix subject to
/// eviction.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensorBundle {
    pub q_win: Matrix,
    pub k_out: Matrix,
    pub v_out: Matrix,
    pub k_win: Matrix,
    pub v_win: Matrix,
}

impl HeadTensorBundle {
    pub fn new(
        q_win: Matrix,
        k_out: Matrix,
        v_out: Matrix,
        k_win: Matrix,
        v_win: Matrix,
    ) -> Result<Self, EvictError> {
        let bundle = Self { q_win, k_out, v_out, k_win, v_win };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<(), EvictError> {
        let d = self.q_win.cols();
        for (name, m) in [
            ("k_out", &self.k_out),
            ("v_out", &self.v_out),
            ("k_win", &self.k_win),
            ("v_win", &self.v_win),
        ] {
            if m.cols() != d {
                return Err(EvictError::Shape(format!(
                    "{name} has {} columns, expected head dimension {d}",
                    m.cols()
                )));
            }
        }
        if self.k_win.rows() != self.q_win.rows() || self.v_win.rows() != self.q_win.rows() {
            return Err(EvictError::Shape(
                "window K/V row counts must match the window query count".into(),
            ));
        }
        if self.v_out.rows() != self.k_out.rows() {
            return Err(EvictError::Shape(
                "prefix K and V must have the same number of rows".into(),
            ));
        }
        if self.k_out.rows() == 0 {
            return Err(EvictError::EmptyPrefix);
        }
        Ok(())
    }

    /// Window length s.
    pub fn window_len(&self) -> usize {
        self.q_win.rows()
    }

    /// Prefix length m − s.
    pub fn prefix_len(&self) -> usize {
        self.k_out.rows()
    }

    /// Total sequence length m.
    pub fn seq_len(&self) -> usize {
        self.window_len() + self.prefix_len()
    }

    pub fn head_dim(&self) -> usize {
        self.q_win.cols()
    }
}

pub const TENSOR_MAGIC: &str = "cokvtensor";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    magic: String,
    version: u32,
    m: usize,
    s: usize,
    d_h: usize,
}

pub fn write_tensor_file(bundle: &HeadTensorBundle, path: &Path) -> Result<(), EvictError> {
    bundle.validate()?;
    let header = TensorHeader {
        magic: TENSOR_MAGIC.to_string(),
        version: TENSOR_VERSION,
        m: bundle.seq_len(),
        s: bundle.window_len(),
        d_h: bundle.head_dim(),
    };
    let file = File::create(path).map_err(|e| EvictError::Io { path: path.to_path_buf(), source: e })?;
    let mut out = BufWriter::new(file);
    let io_err = |e| EvictError::Io { path: path.to_path_buf(), source: e };
    let mut header_line = serde_json::to_string(&header)
        .map_err(|e| EvictError::Shape(e.to_string()))?;
    header_line.push('\n');
    out.write_all(header_line.as_bytes()).map_err(io_err)?;
    for m in [&bundle.q_win, &bundle.k_out, &bundle.v_out, &bundle.k_win, &bundle.v_win] {
        for v in m.data() {
            out.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

pub fn read_tensor_file(path: &Path) -> Result<HeadTensorBundle, EvictError> {
    let file = File::open(path).map_err(|e| EvictError::Io { path: path.to_path_buf(), source: e })?;
    let mut reader = BufReader::new(file);

    let mut header_bytes = Vec::new();
    let mut offset: u64 = 0;
    loop {
        let mut byte = [0u8; 1];
        match reader.read(&mut byte) {
            Ok(0) => {
                return Err(EvictError::Format {
                    path: path.to_path_buf(),
                    offset,
                    message: "missing newline-terminated header".into(),
                })
            }
            Ok(_) => {
                offset += 1;
                if byte[0] == b'\n' {
                    break;
                }
                if header_bytes.len() > 4096 {
                    return Err(EvictError::Format {
                        path: path.to_path_buf(),
                        offset,
                        message: "header exceeds 4096 bytes".into(),
                    });
                }
                header_bytes.push(byte[0]);
            }
            Err(e) => return Err(EvictError::Io { path: path.to_path_buf(), source: e }),
        }
    }
    let header: TensorHeader = serde_json::from_slice(&header_bytes).map_err(|e| {
        EvictError::Format { path: path.to_path_buf(), offset: 0, message: format!("header: {e}") }
    })?;
    if header.magic != TENSOR_MAGIC {
        return Err(EvictError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("magic {:?}, expected {TENSOR_MAGIC:?}", header.magic),
        });
    }
    if header.version != TENSOR_VERSION {
        return Err(EvictError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("version {}, expected {TENSOR_VERSION}", header.version),
        });
    }
    if header.m <= header.s {
        return Err(EvictError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("m = {} must exceed s = {}", header.m, header.s),
        });
    }
    if header.d_h == 0 {
        return Err(EvictError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "d_h must be positive".into(),
        });
    }

    let prefix = header.m - header.s;
    let mut read_matrix = |rows: usize, cols: usize, name: &str| -> Result<Matrix, EvictError> {
        let mut data = vec![0.0f32; rows * cols];
        for value in data.iter_mut() {
            let mut buf = [0u8; 4];
            reader.read_exact(&mut buf).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    EvictError::Format {
                        path: path.to_path_buf(),
                        offset,
                        message: format!("payload truncated while reading {name}"),
                    }
                } else {
                    EvictError::Io { path: path.to_path_buf(), source: e }
                }
            })?;
            offset += 4;
            *value = f32::from_le_bytes(buf);
        }
        Matrix::new(rows, cols, data)
    };

    let q_win = read_matrix(header.s, header.d_h, "q_win")?;
    let k_out = read_matrix(prefix, header.d_h, "k_out")?;
    let v_out = read_matrix(prefix, header.d_h, "v_out")?;
    let k_win = read_matrix(header.s, header.d_h, "k_win")?;
    let v_win = read_matrix(header.s, header.d_h, "v_win")?;

    let mut trailing = [0u8; 1];
    match reader.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => {
            return Err(EvictError::Format {
                path: path.to_path_buf(),
                offset,
                message: "trailing bytes after payload".into(),
            })
        }
        Err(e) => return Err(EvictError::Io { path: path.to_path_buf(), source: e }),
    }

    HeadTensorBundle::new(q_win, k_out, v_out, k_win, v_win)
}
