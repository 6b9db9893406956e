use std::path::Path;

use super::{Dataset, LabelMap};
use crate::error::{Error, Result};

/// Which column holds the label, and which columns to skip entirely (for
/// example textual IP addresses that would otherwise fail numeric parsing).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvOptions {
    pub label_column: String,
    pub ignore: Vec<String>,
}

impl CsvOptions {
    pub fn new(label_column: impl Into<String>) -> Self {
        CsvOptions {
            label_column: label_column.into(),
            ignore: Vec::new(),
        }
    }
}

/// One parsed row. `None` marks an empty or unparseable cell.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRow {
    pub values: Vec<Option<f64>>,
    pub label: Option<String>,
}

/// Parsed but not yet cleaned CSV contents.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<RawRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvLoad {
    pub dataset: Dataset,
    /// Rows removed for missing or unparseable values.
    pub dropped: usize,
}

pub fn read_raw(path: impl AsRef<Path>, options: &CsvOptions) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let label_idx = header
        .iter()
        .position(|h| *h == options.label_column)
        .ok_or_else(|| Error::UnknownField(options.label_column.clone()))?;
    for name in &options.ignore {
        if !header.contains(name) {
            return Err(Error::UnknownField(name.clone()));
        }
    }
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&i| i != label_idx && !options.ignore.contains(&header[i]))
        .collect();

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                row: i + 2,
                expected: header.len(),
                found: record.len(),
            });
        }
        let values = feature_cols
            .iter()
            .map(|&c| record[c].parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        let label = Some(record[label_idx].to_string()).filter(|l| !l.is_empty());
        rows.push(RawRow { values, label });
    }
    Ok(RawTable {
        feature_names: feature_cols.iter().map(|&c| header[c].clone()).collect(),
        rows,
    })
}

/// Drops every row with a missing value or label. Returns the cleaned table
/// and the number of rows removed.
pub fn clean(table: &RawTable) -> (RawTable, usize) {
    let rows: Vec<RawRow> = table
        .rows
        .iter()
        .filter(|r| r.label.is_some() && r.values.iter().all(Option::is_some))
        .cloned()
        .collect();
    let dropped = table.rows.len() - rows.len();
    (
        RawTable {
            feature_names: table.feature_names.clone(),
            rows,
        },
        dropped,
    )
}

impl RawTable {
    /// Factorizes labels in first-appearance order. The table must be clean.
    pub fn into_dataset(self) -> Result<Dataset> {
        let mut label_map = LabelMap::default();
        let mut labels = Vec::with_capacity(self.rows.len());
        let mut features = Vec::with_capacity(self.rows.len() * self.feature_names.len());
        for row in &self.rows {
            let label = row
                .label
                .as_deref()
                .ok_or_else(|| Error::Invalid("uncleaned row without label".into()))?;
            labels.push(label_map.id_or_insert(label));
            for v in &row.values {
                features.push(v.ok_or_else(|| Error::Invalid("uncleaned missing value".into()))?);
            }
        }
        Dataset::new(features, self.feature_names, labels, label_map)
    }
}

/// Reads, cleans and factorizes a CSV whose label sits in `label_column`.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<CsvLoad> {
    load_csv_with(path, &CsvOptions::new(label_column))
}

pub fn load_csv_with(path: impl AsRef<Path>, options: &CsvOptions) -> Result<CsvLoad> {
    let raw = read_raw(path, options)?;
    let (cleaned, dropped) = clean(&raw);
    if cleaned.rows.is_empty() {
        return Err(Error::EmptyDataset { dropped });
    }
    if cleaned.feature_names.is_empty() {
        return Err(Error::Invalid("no feature columns besides the label".into()));
    }
    Ok(CsvLoad {
        dataset: cleaned.into_dataset()?,
        dropped,
    })
}

/// Writes features and label names with a header row; the label goes last.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = dataset.feature_names().iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut rec: Vec<String> = dataset.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(dataset.label_map().name(dataset.labels()[i]).unwrap_or_default().to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn drops_row_with_empty_cell() {
        let f = write("a,b,label\n1,2,x\n3,,y\n5,6,y\n");
        let load = load_csv(f.path(), "label").unwrap();
        assert_eq!(load.dataset.n(), 2);
        assert_eq!(load.dropped, 1);
        assert_eq!(load.dataset.labels(), &[0, 1]);
        assert_eq!(load.dataset.label_map().names(), &["x", "y"]);
    }

    #[test]
    fn labels_follow_first_appearance() {
        let f = write("v,label\n1,udp\n2,benign\n3,udp\n4,scan\n");
        let load = load_csv(f.path(), "label").unwrap();
        assert_eq!(load.dataset.labels(), &[0, 1, 0, 2]);
    }

    #[test]
    fn errors() {
        assert!(matches!(load_csv("/no/such/file.csv", "label"), Err(Error::Io { .. })));
        let ragged = write("a,b,label\n1,2,x\n3,x\n");
        assert!(matches!(load_csv(ragged.path(), "label"), Err(Error::RaggedRow { row: 3, .. })));
        let empty = write("a,label\n,x\nfoo,y\n");
        assert!(matches!(
            load_csv(empty.path(), "label"),
            Err(Error::EmptyDataset { dropped: 2 })
        ));
        let f = write("a,label\n1,x\n");
        assert!(matches!(load_csv(f.path(), "class"), Err(Error::UnknownField(_))));
    }

    #[test]
    fn ignored_columns_are_skipped_before_parsing() {
        let f = write("src_ip,a,label\n10.0.0.1,1,x\n10.0.0.2,2,y\n");
        let mut opts = CsvOptions::new("label");
        opts.ignore.push("src_ip".into());
        let load = load_csv_with(f.path(), &opts).unwrap();
        assert_eq!(load.dropped, 0);
        assert_eq!(load.dataset.feature_names(), &["a"]);
    }

    #[test]
    fn cleaning_is_idempotent() {
        let f = write("a,b,label\n1,2,x\n,4,y\n5,nan,y\n7,8,\n9,10,z\n");
        let raw = read_raw(f.path(), &CsvOptions::new("label")).unwrap();
        let (once, dropped) = clean(&raw);
        assert_eq!(dropped, 3);
        let (twice, again) = clean(&once);
        assert_eq!(again, 0);
        assert_eq!(once, twice);
    }
}
