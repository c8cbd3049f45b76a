//! Little-endian layout:
//!
//! ```text
//! "DFE1" | version u16 | dim u32 | count u64 | count × [id u64][pred u8][truth u8][dim × f32]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{validate_features, ClassCode, EmbeddingRecord, EmbeddingSet, FormatError};

pub const BINARY_MAGIC: [u8; 4] = *b"DFE1";
pub const BINARY_VERSION: u16 = 1;
/// 4 magic + 2 version + 4 dim + 8 count.
pub const BINARY_HEADER_LEN: u64 = 18;

/// Bytes per record for a given dimensionality.
pub fn record_size(dim: usize) -> u64 {
    8 + 1 + 1 + 4 * dim as u64
}

pub fn write_embeddings_binary<W: Write>(
    writer: W,
    dim: usize,
    records: &[EmbeddingRecord],
) -> Result<(), FormatError> {
    let mut w = BufWriter::new(writer);
    w.write_all(&BINARY_MAGIC)?;
    w.write_u16::<LittleEndian>(BINARY_VERSION)?;
    let dim32 = u32::try_from(dim).map_err(|_| FormatError::Record {
        id: 0,
        message: format!("dim {dim} does not fit in u32"),
    })?;
    w.write_u32::<LittleEndian>(dim32)?;
    w.write_u64::<LittleEndian>(records.len() as u64)?;
    for r in records {
        validate_features(r.id, dim, &r.features).map_err(|message| FormatError::Record {
            id: r.id,
            message,
        })?;
        w.write_u64::<LittleEndian>(r.id)?;
        w.write_u8(r.pred.0)?;
        w.write_u8(r.truth.0)?;
        for &v in &r.features {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_embeddings_binary_path(
    path: impl AsRef<Path>,
    dim: usize,
    records: &[EmbeddingRecord],
) -> Result<(), FormatError> {
    write_embeddings_binary(File::create(path)?, dim, records)
}

/// Reads a whole `DFE1` stream. The byte length must equal
/// `18 + count · record_size(dim)` exactly.
pub fn read_embeddings_binary<R: Read>(mut reader: R) -> Result<EmbeddingSet, FormatError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let actual = bytes.len() as u64;
    if actual < BINARY_HEADER_LEN {
        if actual >= 4 && bytes[..4] != BINARY_MAGIC {
            return Err(FormatError::BadMagic {
                found: [bytes[0], bytes[1], bytes[2], bytes[3]],
            });
        }
        return Err(FormatError::Truncated {
            count: 0,
            expected: BINARY_HEADER_LEN,
            actual,
        });
    }
    let mut cur = bytes.as_slice();
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)?;
    if magic != BINARY_MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = cur.read_u16::<LittleEndian>()?;
    if version != BINARY_VERSION {
        return Err(FormatError::BinaryVersion {
            found: version,
            expected: BINARY_VERSION,
        });
    }
    let dim = cur.read_u32::<LittleEndian>()? as usize;
    let count = cur.read_u64::<LittleEndian>()?;
    let expected = count
        .checked_mul(record_size(dim))
        .and_then(|b| b.checked_add(BINARY_HEADER_LEN))
        .unwrap_or(u64::MAX);
    if actual < expected {
        return Err(FormatError::Truncated {
            count,
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(FormatError::TrailingBytes {
            count,
            extra: actual - expected,
        });
    }

    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = cur.read_u64::<LittleEndian>()?;
        let pred = ClassCode(cur.read_u8()?);
        let truth = ClassCode(cur.read_u8()?);
        let mut features = vec![0f32; dim];
        cur.read_f32_into::<LittleEndian>(&mut features)?;
        validate_features(id, dim, &features)
            .map_err(|message| FormatError::Record { id, message })?;
        records.push(EmbeddingRecord::new(id, pred, truth, features));
    }
    Ok(EmbeddingSet { dim, records })
}

pub fn read_embeddings_binary_path(path: impl AsRef<Path>) -> Result<EmbeddingSet, FormatError> {
    read_embeddings_binary(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<EmbeddingRecord> {
        vec![
            EmbeddingRecord::new(1, ClassCode::NON_DEFECT, ClassCode::UNKNOWN, vec![0.5, -1.0, 2.0, 3.25]),
            EmbeddingRecord::new(2, ClassCode::DEFECT, ClassCode::DEFECT, vec![1e-7, 0.0, -0.0, 9.0]),
        ]
    }

    fn encode(records: &[EmbeddingRecord], dim: usize) -> Vec<u8> {
        let mut buf = Vec::new();
        write_embeddings_binary(&mut buf, dim, records).unwrap();
        buf
    }

    #[test]
    fn layout_arithmetic() {
        assert_eq!(BINARY_HEADER_LEN, 4 + 2 + 4 + 8);
        assert_eq!(record_size(4), 26);
        let buf = encode(&sample(), 4);
        assert_eq!(buf.len() as u64, BINARY_HEADER_LEN + 2 * 26);
        assert_eq!(&buf[..4], &[0x44, 0x46, 0x45, 0x31]);
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..10], &[4, 0, 0, 0]);
        assert_eq!(&buf[10..18], &[2, 0, 0, 0, 0, 0, 0, 0]);
        // first record: id, pred, truth, then 0.5f32 little-endian
        assert_eq!(&buf[18..26], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&buf[26..28], &[0, 255]);
        assert_eq!(&buf[28..32], &0.5f32.to_le_bytes());
    }

    #[test]
    fn round_trip() {
        let back = read_embeddings_binary(encode(&sample(), 4).as_slice()).unwrap();
        assert_eq!(back.dim, 4);
        assert_eq!(back.records, sample());
    }

    #[test]
    fn rejects_bad_magic() {
        let mut buf = encode(&sample(), 4);
        buf[0] = b'X';
        assert!(matches!(
            read_embeddings_binary(buf.as_slice()),
            Err(FormatError::BadMagic { .. })
        ));
    }

    #[test]
    fn rejects_version() {
        let mut buf = encode(&sample(), 4);
        buf[4] = 2;
        assert!(matches!(
            read_embeddings_binary(buf.as_slice()),
            Err(FormatError::BinaryVersion { found: 2, .. })
        ));
    }

    #[test]
    fn rejects_truncation() {
        let buf = encode(&sample(), 4);
        match read_embeddings_binary(&buf[..buf.len() - 3]) {
            Err(FormatError::Truncated { count, expected, actual }) => {
                assert_eq!((count, expected, actual), (2, 70, 67));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_embeddings_binary(&buf[..10]),
            Err(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn rejects_trailing_bytes() {
        let mut buf = encode(&sample(), 4);
        buf.push(0);
        assert!(matches!(
            read_embeddings_binary(buf.as_slice()),
            Err(FormatError::TrailingBytes { extra: 1, .. })
        ));
    }

    #[test]
    fn empty_file_is_valid() {
        let buf = encode(&[], 3);
        assert_eq!(buf.len(), 18);
        let set = read_embeddings_binary(buf.as_slice()).unwrap();
        assert_eq!(set.dim, 3);
        assert!(set.records.is_empty());
    }
}
