use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Highest severity level (proliferative).
pub const MAX_LEVEL: u8 = 4;
pub const NUM_LEVELS: usize = 5;

/// One labelled image: identifier without extension and severity 0-4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image_id: String,
    pub level: u8,
}

/// Parses an `image,level` CSV.
pub fn parse_manifest(reader: impl Read) -> Result<Vec<ManifestRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = Vec::new();
    let mut saw_header = false;
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if !saw_header {
            if row.len() != 2 || &row[0] != "image" || &row[1] != "level" {
                return Err(Error::Parse { line, message: "header must be `image,level`".into() });
            }
            saw_header = true;
            continue;
        }
        if row.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected 2 fields, found {}", row.len()) });
        }
        let image_id = row[0].to_string();
        if image_id.is_empty() {
            return Err(Error::Parse { line, message: "empty image id".into() });
        }
        let level: u8 = row[1]
            .parse()
            .ok()
            .filter(|l| *l <= MAX_LEVEL)
            .ok_or_else(|| Error::Parse { line, message: format!("level {:?} is not one of 0-4", &row[1]) })?;
        records.push(ManifestRecord { image_id, level });
    }
    if !saw_header {
        return Err(Error::Parse { line: 1, message: "missing `image,level` header".into() });
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Data { path: path.to_path_buf(), message: e.to_string() })?;
    parse_manifest(file)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::from("image,level\n");
    for r in records {
        out.push_str(&format!("{},{}\n", r.image_id, r.level));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Count of records per level.
pub fn level_histogram(records: &[ManifestRecord]) -> [usize; NUM_LEVELS] {
    let mut h = [0; NUM_LEVELS];
    for r in records {
        h[r.level as usize] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_kaggle_layout() {
        let recs = parse_manifest("image,level\n10_left,0\n10_right,3\n".as_bytes()).unwrap();
        assert_eq!(
            recs,
            vec![
                ManifestRecord { image_id: "10_left".into(), level: 0 },
                ManifestRecord { image_id: "10_right".into(), level: 3 }
            ]
        );
    }

    #[test]
    fn unknown_level_reports_line() {
        match parse_manifest("image,level\na,1\nb,5\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(parse_manifest("image,level\na\n".as_bytes()).is_err());
        assert!(parse_manifest("id,grade\na,1\n".as_bytes()).is_err());
        assert!(parse_manifest("image,level\na,x\n".as_bytes()).is_err());
        assert!(parse_manifest("".as_bytes()).is_err());
    }

    /// Runs only when the full labelled training set is available locally.
    #[test]
    fn full_dataset_histogram_is_skewed_to_level_zero() {
        let Ok(path) = std::env::var("RAMNET_KAGGLE_LABELS") else { return };
        let recs = load_manifest(path).unwrap();
        assert_eq!(recs.len(), 35126);
        let h = level_histogram(&recs);
        assert!(h[0] > h[1..].iter().sum::<usize>());
        assert!(h[4] < h[0]);
    }
}
