use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{validate_features, ClassCode, EmbeddingRecord, EmbeddingSet, FormatError};

fn parse_err(line: u64, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_header(fields: &csv::StringRecord) -> Result<usize, FormatError> {
    let names: Vec<&str> = fields.iter().collect();
    if names.len() < 4 || names[..3] != ["id", "pred", "truth"] {
        return Err(parse_err(1, "header must be `id,pred,truth,f0,...,f{D-1}`"));
    }
    for (i, name) in names[3..].iter().enumerate() {
        if *name != format!("f{i}") {
            return Err(parse_err(1, format!("header column {} is {name:?}, expected \"f{i}\"", i + 4)));
        }
    }
    Ok(names.len() - 3)
}

/// Reads `id,pred,truth,f0,...` rows. Class columns take integer codes or
/// `non-defect` / `defect` / `unknown`.
pub fn read_embeddings_csv<R: Read>(reader: R) -> Result<EmbeddingSet, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "missing header")),
    };
    let dim = parse_header(&header)?;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != dim + 3 {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", dim + 3, row.len()),
            ));
        }
        let id: u64 = row[0]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid id {:?}", &row[0])))?;
        let pred: ClassCode = row[1].parse().map_err(|e: String| parse_err(line, e))?;
        let truth: ClassCode = row[2].parse().map_err(|e: String| parse_err(line, e))?;
        let features = row
            .iter()
            .skip(3)
            .enumerate()
            .map(|(i, v)| {
                v.parse::<f32>()
                    .map_err(|_| parse_err(line, format!("feature f{i}: {v:?} is not a number")))
            })
            .collect::<Result<Vec<f32>, _>>()?;
        validate_features(id, dim, &features).map_err(|m| parse_err(line, m))?;
        if !seen.insert(id) {
            return Err(parse_err(line, format!("duplicate id {id}")));
        }
        records.push(EmbeddingRecord::new(id, pred, truth, features));
    }
    Ok(EmbeddingSet { dim, records })
}

pub fn read_embeddings_csv_path(path: impl AsRef<Path>) -> Result<EmbeddingSet, FormatError> {
    read_embeddings_csv(BufReader::new(File::open(path)?))
}

/// Writes records with integer class codes; `f32` values use the shortest
/// representation that parses back to the same bits.
pub fn write_embeddings_csv<W: Write>(
    writer: W,
    dim: usize,
    records: &[EmbeddingRecord],
) -> Result<(), FormatError> {
    let mut w = BufWriter::new(writer);
    write!(w, "id,pred,truth")?;
    for i in 0..dim {
        write!(w, ",f{i}")?;
    }
    writeln!(w)?;
    for r in records {
        validate_features(r.id, dim, &r.features).map_err(|message| FormatError::Record {
            id: r.id,
            message,
        })?;
        write!(w, "{},{},{}", r.id, r.pred, r.truth)?;
        for v in &r.features {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_embeddings_csv_path(
    path: impl AsRef<Path>,
    dim: usize,
    records: &[EmbeddingRecord],
) -> Result<(), FormatError> {
    write_embeddings_csv(File::create(path)?, dim, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<EmbeddingSet, FormatError> {
        read_embeddings_csv(text.as_bytes())
    }

    fn line_of(err: FormatError) -> u64 {
        match err {
            FormatError::Parse { line, .. } => line,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn single_row() {
        let set = parse("id,pred,truth,f0,f1\n7,0,255,0.5,-1.25\n").unwrap();
        assert_eq!(set.dim, 2);
        assert_eq!(
            set.records,
            vec![EmbeddingRecord::new(7, ClassCode::NON_DEFECT, ClassCode::UNKNOWN, vec![0.5, -1.25])]
        );
    }

    #[test]
    fn class_literals() {
        let set = parse("id,pred,truth,f0\n1,defect,non-defect,1\n2,unknown,2,0\n").unwrap();
        assert_eq!(set.records[0].pred, ClassCode::DEFECT);
        assert_eq!(set.records[0].truth, ClassCode::NON_DEFECT);
        assert_eq!(set.records[1].pred, ClassCode::UNKNOWN);
        assert_eq!(set.records[1].truth, ClassCode::OOD);
    }

    #[test]
    fn header_only() {
        let set = parse("id,pred,truth,f0,f1,f2\n").unwrap();
        assert_eq!(set.dim, 3);
        assert!(set.records.is_empty());
    }

    #[test]
    fn ragged_row_names_line() {
        let err = parse("id,pred,truth,f0,f1\n1,0,0,1,2\n2,0,0,1,2,3\n").unwrap_err();
        assert_eq!(line_of(err), 3);
    }

    #[test]
    fn bad_values_name_line() {
        assert_eq!(line_of(parse("id,pred,truth,f0\n1,0,0,abc\n").unwrap_err()), 2);
        assert_eq!(line_of(parse("id,pred,truth,f0\n1,7x,0,1\n").unwrap_err()), 2);
        assert_eq!(line_of(parse("id,pred,truth,f0\n1,0,0,NaN\n").unwrap_err()), 2);
        assert_eq!(line_of(parse("id,pred,truth,f0\n1,0,0,1\n1,0,0,2\n").unwrap_err()), 3);
    }

    #[test]
    fn bad_header() {
        assert_eq!(line_of(parse("id,pred,truth\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("id,pred,truth,f1\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("").unwrap_err()), 1);
    }

    #[test]
    fn write_then_read() {
        let recs = vec![
            EmbeddingRecord::new(3, ClassCode::DEFECT, ClassCode::OOD, vec![0.1, f32::MIN_POSITIVE]),
            EmbeddingRecord::new(9, ClassCode::NON_DEFECT, ClassCode::UNKNOWN, vec![-3.5e7, 1.0 / 3.0]),
        ];
        let mut buf = Vec::new();
        write_embeddings_csv(&mut buf, 2, &recs).unwrap();
        let back = read_embeddings_csv(buf.as_slice()).unwrap();
        assert_eq!(back.records, recs);
    }
}
