//! On-disk formats. All integers and floats are little-endian.
//!
//! Matrix (`SSE1`):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `SSE1`                   |
//! | 4      | 4    | version, u32 = 1               |
//! | 8      | 8    | rows, u64                      |
//! | 16     | 8    | dim, u64                       |
//! | 24     | 1    | dtype, u8 (1 = f32)            |
//! | 25     | 7    | reserved, zero                 |
//! | 32     | ..   | row-major values               |
//!
//! Codebook (`SSCB`): magic, version u32 = 1, header length u64, a UTF-8
//! JSON header, the code matrix as row-major u32, then one `SSE1` block per
//! subspace table.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::{AssignmentAlgorithm, CodeAssignment, Codebook, Provenance, SubspaceTables};
use crate::config::SubspaceConfig;
use crate::error::{FormatError, Result};
use crate::matrix::EmbeddingMatrix;

pub const MATRIX_MAGIC: [u8; 4] = *b"SSE1";
pub const CODEBOOK_MAGIC: [u8; 4] = *b"SSCB";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const MATRIX_HEADER_LEN: usize = 32;

type FormatResult<T> = std::result::Result<T, FormatError>;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, len: u64) -> FormatResult<&'a [u8]> {
        let available = (self.bytes.len() - self.pos) as u64;
        if len > available {
            return Err(FormatError::Truncated {
                expected: self.pos as u64 + len,
                found: self.bytes.len() as u64,
            });
        }
        let start = self.pos;
        self.pos += len as usize;
        Ok(&self.bytes[start..self.pos])
    }

    fn array<const N: usize>(&mut self) -> FormatResult<[u8; N]> {
        Ok(self.take(N as u64)?.try_into().expect("exact length"))
    }

    fn u32(&mut self) -> FormatResult<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> FormatResult<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn finish(&self) -> FormatResult<()> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            extra => Err(FormatError::TrailingBytes(extra as u64)),
        }
    }
}

fn expect_magic(reader: &mut Reader<'_>, expected: [u8; 4]) -> FormatResult<()> {
    let found = reader.array::<4>()?;
    if found != expected {
        return Err(FormatError::BadMagic { expected, found });
    }
    let version = reader.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    Ok(())
}

fn encode_matrix_into(matrix: &EmbeddingMatrix, out: &mut Vec<u8>) -> FormatResult<()> {
    if let Some(i) = matrix.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(i));
    }
    out.reserve(MATRIX_HEADER_LEN + 4 * matrix.as_slice().len());
    out.extend_from_slice(&MATRIX_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.dim() as u64).to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&[0u8; 7]);
    for v in matrix.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn decode_matrix_from(reader: &mut Reader<'_>) -> FormatResult<EmbeddingMatrix> {
    expect_magic(reader, MATRIX_MAGIC)?;
    let rows = reader.u64()?;
    let dim = reader.u64()?;
    let dtype = reader.array::<1>()?[0];
    if dtype != DTYPE_F32 {
        return Err(FormatError::UnknownDtype(dtype));
    }
    if reader.array::<7>()? != [0u8; 7] {
        return Err(FormatError::ReservedBytes);
    }
    if dim == 0 {
        return Err(FormatError::Header("matrix dimension is zero".into()));
    }
    let payload = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::Header(format!("{rows} x {dim} overflows")))?;
    let bytes = reader.take(payload)?;
    let mut data = Vec::with_capacity(bytes.len() / 4);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(FormatError::NonFinite(i));
        }
        data.push(v);
    }
    EmbeddingMatrix::new(rows as usize, dim as usize, data)
        .map_err(|e| FormatError::Header(e.to_string()))
}

pub fn encode_matrix(matrix: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_matrix_into(matrix, &mut out)?;
    Ok(out)
}

/// Decodes a complete `SSE1` buffer; extra bytes are an error.
pub fn decode_matrix(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut reader = Reader::new(bytes);
    let matrix = decode_matrix_from(&mut reader)?;
    reader.finish()?;
    Ok(matrix)
}

pub fn write_matrix(path: impl AsRef<Path>, matrix: &EmbeddingMatrix) -> Result<()> {
    fs::write(path, encode_matrix(matrix)?)?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    decode_matrix(&fs::read(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct CodebookHeader {
    version: u32,
    vocab_size: u64,
    embed_dim: u64,
    num_subspaces: u64,
    table_size: u64,
    subspace_dims: Vec<u64>,
    reserved_tokens: Vec<u64>,
    seed: u64,
    init_std: f64,
    algorithm: AssignmentAlgorithm,
}

pub fn encode_codebook(codebook: &Codebook) -> Result<Vec<u8>> {
    let config = codebook.config();
    let provenance = codebook.provenance();
    let header = CodebookHeader {
        version: FORMAT_VERSION,
        vocab_size: config.vocab_size as u64,
        embed_dim: config.embed_dim as u64,
        num_subspaces: config.num_subspaces as u64,
        table_size: config.table_size as u64,
        subspace_dims: config.subspace_dims.iter().map(|&d| d as u64).collect(),
        reserved_tokens: codebook
            .reserved_tokens()
            .iter()
            .map(|&t| t as u64)
            .collect(),
        seed: provenance.seed,
        init_std: provenance.init_std,
        algorithm: provenance.algorithm,
    };
    let json = serde_json::to_vec(&header).map_err(|e| FormatError::Header(e.to_string()))?;

    let mut out = Vec::new();
    out.extend_from_slice(&CODEBOOK_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for code in codebook.assignment().as_slice() {
        out.extend_from_slice(&code.to_le_bytes());
    }
    for table in codebook.tables().iter() {
        encode_matrix_into(table, &mut out)?;
    }
    Ok(out)
}

fn to_usize(v: u64, what: &str) -> FormatResult<usize> {
    usize::try_from(v).map_err(|_| FormatError::Header(format!("{what} {v} too large")))
}

/// Decodes an `SSCB` buffer, checking the payload against the header before
/// allocating and the assembled codebook against its own invariants.
/// Duplicate code tuples are accepted; they are a verification concern.
pub fn decode_codebook(bytes: &[u8]) -> Result<Codebook> {
    let mut reader = Reader::new(bytes);
    expect_magic(&mut reader, CODEBOOK_MAGIC)?;
    let header_len = reader.u64()?;
    let header_bytes = reader.take(header_len)?;
    let header: CodebookHeader =
        serde_json::from_slice(header_bytes).map_err(|e| FormatError::Header(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(header.version).into());
    }

    let config = SubspaceConfig::from_parts(
        to_usize(header.vocab_size, "vocab_size")?,
        to_usize(header.embed_dim, "embed_dim")?,
        to_usize(header.num_subspaces, "num_subspaces")?,
        to_usize(header.table_size, "table_size")?,
        header
            .subspace_dims
            .iter()
            .map(|&d| to_usize(d, "subspace dim"))
            .collect::<FormatResult<_>>()?,
    )
    .map_err(|e| FormatError::Validation(e.to_string()))?;

    let code_bytes = header
        .vocab_size
        .checked_mul(header.num_subspaces)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::Header("code matrix size overflows".into()))?;
    let codes: Vec<u32> = reader
        .take(code_bytes)?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(bad) = codes.iter().find(|&&c| c as usize >= config.table_size) {
        return Err(FormatError::Validation(format!(
            "code {bad} out of range for table_size {}",
            config.table_size
        ))
        .into());
    }

    let mut tables = Vec::with_capacity(config.num_subspaces);
    for _ in 0..config.num_subspaces {
        tables.push(decode_matrix_from(&mut reader)?);
    }
    reader.finish()?;

    let reserved = header
        .reserved_tokens
        .iter()
        .map(|&t| to_usize(t, "reserved token"))
        .collect::<FormatResult<Vec<_>>>()?;
    let unique: HashSet<_> = reserved.iter().collect();
    if unique.len() != reserved.len() {
        return Err(FormatError::Validation("duplicate reserved token".into()).into());
    }
    let provenance = Provenance {
        algorithm: header.algorithm,
        seed: header.seed,
        init_std: header.init_std,
    };
    let assignment = CodeAssignment::new(config.num_subspaces, codes)
        .map_err(|e| FormatError::Validation(e.to_string()))?;
    Codebook::new(
        config,
        assignment,
        SubspaceTables::new(tables),
        reserved,
        provenance,
    )
    .map_err(|e| FormatError::Validation(e.to_string()).into())
}

pub fn write_codebook(path: impl AsRef<Path>, codebook: &Codebook) -> Result<()> {
    fs::write(path, encode_codebook(codebook)?)?;
    Ok(())
}

pub fn read_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    decode_codebook(&fs::read(path)?)
}

/// Splits on `\n` (tolerating `\r\n`); a trailing newline does not start a
/// new line.
fn lines(bytes: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let empty = body.is_empty() && bytes.len() <= 1;
    body.split(|&b| b == b'\n')
        .filter(move |_| !empty)
        .map(|l| l.strip_suffix(b"\r").unwrap_or(l))
        .enumerate()
        .map(|(i, l)| (i + 1, l))
}

/// One token per line; the line index is the token id.
pub fn parse_vocab(bytes: &[u8]) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut tokens = Vec::new();
    for (line, raw) in lines(bytes) {
        let token = std::str::from_utf8(raw).map_err(|_| FormatError::InvalidUtf8(line))?;
        if !seen.insert(token) {
            return Err(FormatError::DuplicateToken {
                token: token.to_owned(),
                line,
            }
            .into());
        }
        tokens.push(token.to_owned());
    }
    Ok(tokens)
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<Vec<String>> {
    parse_vocab(&fs::read(path)?)
}

/// Tab-separated text: a token followed by its values on each line. Values
/// are parsed directly as `f32`.
pub fn parse_tsv_matrix(bytes: &[u8]) -> Result<(Vec<String>, EmbeddingMatrix)> {
    let mut tokens = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (line, raw) in lines(bytes) {
        let text = std::str::from_utf8(raw).map_err(|_| FormatError::InvalidUtf8(line))?;
        let mut fields = text.split('\t');
        let token = fields.next().unwrap_or_default();
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f32>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| FormatError::Text {
                        line,
                        message: format!("bad value {f:?}"),
                    })
            })
            .collect::<FormatResult<Vec<f32>>>()?;
        match dim {
            None if values.is_empty() => {
                return Err(FormatError::Text {
                    line,
                    message: "no values".into(),
                }
                .into())
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(FormatError::Text {
                    line,
                    message: format!("{} values, expected {d}", values.len()),
                }
                .into())
            }
            Some(_) => {}
        }
        tokens.push(token.to_owned());
        data.extend(values);
    }
    let dim = dim.ok_or_else(|| FormatError::Text {
        line: 0,
        message: "empty file".into(),
    })?;
    let matrix = EmbeddingMatrix::new(tokens.len(), dim, data)?;
    Ok((tokens, matrix))
}

pub fn read_tsv_matrix(path: impl AsRef<Path>) -> Result<(Vec<String>, EmbeddingMatrix)> {
    parse_tsv_matrix(&fs::read(path)?)
}

/// Reads `SSE1`, or tab-separated text when the path ends in `.tsv`.
pub fn read_matrix_any(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("tsv"))
    {
        Ok(read_tsv_matrix(path)?.1)
    } else {
        read_matrix(path)
    }
}
