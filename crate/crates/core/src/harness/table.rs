use std::fmt::Write as _;

use super::EncoderKind;
use crate::classifiers::ClassifierKind;
use crate::error::{Error, Result};
use crate::evalkit::MetricQuad;

const CSV_HEADER: [&str; 10] = [
    "dataset", "encoder", "latent_dim", "model", "acc", "prc", "rec", "f1", "status", "error",
];

/// Outcome of one (encoder, latent dim, classifier) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub encoder: EncoderKind,
    pub dim: usize,
    pub classifier: ClassifierKind,
    /// `None` when the cell failed.
    pub metrics: Option<MetricQuad>,
    pub error: Option<String>,
    /// Hash of the projection the classifier was trained and tested on.
    /// Not part of the CSV output.
    pub projection_sha256: String,
}

/// Results of one grid run on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub dataset: String,
    pub encoders: Vec<EncoderKind>,
    pub dims: Vec<usize>,
    pub classifiers: Vec<ClassifierKind>,
    pub cells: Vec<CellResult>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "md" | "markdown" => Ok(TableFormat::Markdown),
            _ => Err(Error::Config(format!("unknown table format '{s}' (expected csv or markdown)"))),
        }
    }
}

fn two(v: f64) -> String {
    format!("{v:.2}")
}

impl ResultTable {
    pub fn get(&self, encoder: EncoderKind, dim: usize, classifier: ClassifierKind) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.encoder == encoder && c.dim == dim && c.classifier == classifier)
    }

    /// Classifier rows in table order, restricted to the configured kinds.
    pub fn row_order(&self) -> Vec<ClassifierKind> {
        ClassifierKind::ALL
            .into_iter()
            .filter(|k| self.classifiers.contains(k))
            .collect()
    }

    /// Every configured cell present exactly once, nothing else.
    pub fn validate(&self) -> Result<()> {
        if self.classifiers.is_empty() || self.encoders.is_empty() || self.dims.is_empty() {
            return Err(Error::Invalid("result table has no encoders, dims or classifiers".into()));
        }
        let expected = self.encoders.len() * self.dims.len() * self.classifiers.len();
        if self.cells.len() != expected {
            return Err(Error::Invalid(format!("{} cells for a grid of {expected}", self.cells.len())));
        }
        for &e in &self.encoders {
            for &d in &self.dims {
                for &k in &self.classifiers {
                    let n = self
                        .cells
                        .iter()
                        .filter(|c| c.encoder == e && c.dim == d && c.classifier == k)
                        .count();
                    if n != 1 {
                        return Err(Error::Invalid(format!("cell {e}/{d}/{k} appears {n} times")));
                    }
                }
            }
        }
        Ok(())
    }

    /// The table as it reads back from CSV: metrics rounded to two decimals,
    /// projection hashes dropped.
    pub fn at_printed_precision(&self) -> ResultTable {
        let round = |v: f64| two(v).parse::<f64>().expect("formatted float");
        let mut t = self.clone();
        for c in &mut t.cells {
            c.projection_sha256.clear();
            c.metrics = c.metrics.map(|q| MetricQuad {
                acc: round(q.acc),
                prc: round(q.prc),
                rec: round(q.rec),
                f1: round(q.f1),
            });
        }
        t
    }
}

/// Renders the results. CSV has one line per cell; markdown has one table
/// per encoder with a column group per latent dim and rows in the order
/// DNN, LSTM, BLSTM, GRU, sRNN.
pub fn emit_table(results: &ResultTable, format: TableFormat) -> Result<String> {
    results.validate()?;
    match format {
        TableFormat::Csv => emit_csv(results),
        TableFormat::Markdown => Ok(emit_markdown(results)),
    }
}

fn emit_csv(t: &ResultTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for &e in &t.encoders {
        for &d in &t.dims {
            for k in t.row_order() {
                let c = t.get(e, d, k).expect("validated");
                let m: [String; 4] = match c.metrics {
                    Some(q) => [two(q.acc), two(q.prc), two(q.rec), two(q.f1)],
                    None => Default::default(),
                };
                let status = if c.metrics.is_some() { "ok" } else { "failed" };
                let error = c.error.clone().unwrap_or_default();
                w.write_record([
                    t.dataset.as_str(),
                    e.name(),
                    &d.to_string(),
                    k.name(),
                    &m[0],
                    &m[1],
                    &m[2],
                    &m[3],
                    status,
                    &error,
                ])?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

fn emit_markdown(t: &ResultTable) -> String {
    let mut s = String::new();
    for (n, &e) in t.encoders.iter().enumerate() {
        if n > 0 {
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "### CLASSIFIER PERFORMANCE ON {}-{}-ENCODED LATENT SPACE VECTORS\n",
            t.dataset,
            e.name()
        );
        s.push_str("| Model |");
        for d in &t.dims {
            let _ = write!(s, " latent dim = {d} | | | |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(4 * t.dims.len()));
        s.push_str("\n| |");
        s.push_str(&" Acc | Prc | Rec | F1 |".repeat(t.dims.len()));
        s.push('\n');
        for k in t.row_order() {
            let _ = write!(s, "| {k} |");
            for &d in &t.dims {
                match t.get(e, d, k).and_then(|c| c.metrics) {
                    Some(q) => {
                        let _ = write!(s, " {} | {} | {} | {} |", two(q.acc), two(q.prc), two(q.rec), two(q.f1));
                    }
                    None => s.push_str(" failed | failed | failed | failed |"),
                }
            }
            s.push('\n');
        }
    }
    s
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

/// Reads a table written by [`emit_table`] in CSV form.
pub fn parse_results_csv(text: &str) -> Result<ResultTable> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Corrupt(format!("unexpected results header {header:?}")));
    }
    let mut t = ResultTable {
        dataset: String::new(),
        encoders: Vec::new(),
        dims: Vec::new(),
        classifiers: Vec::new(),
        cells: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Corrupt(format!("bad {} value '{}'", CSV_HEADER[i], field(i))))
        };
        t.dataset = field(0).to_string();
        let encoder: EncoderKind = field(1).parse()?;
        let dim: usize = field(2)
            .parse()
            .map_err(|_| Error::Corrupt(format!("bad latent dim '{}'", field(2))))?;
        let classifier: ClassifierKind = field(3).parse()?;
        let metrics = match field(8) {
            "ok" => Some(MetricQuad {
                acc: num(4)?,
                prc: num(5)?,
                rec: num(6)?,
                f1: num(7)?,
            }),
            "failed" => None,
            other => return Err(Error::Corrupt(format!("bad status '{other}'"))),
        };
        let error = Some(field(9).to_string()).filter(|e| !e.is_empty());
        push_unique(&mut t.encoders, encoder);
        push_unique(&mut t.dims, dim);
        push_unique(&mut t.classifiers, classifier);
        t.cells.push(CellResult {
            encoder,
            dim,
            classifier,
            metrics,
            error,
            projection_sha256: String::new(),
        });
    }
    t.validate()?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ResultTable {
        let mut cells = Vec::new();
        for e in EncoderKind::ALL {
            for d in [2, 6, 10, 14] {
                for k in ClassifierKind::ALL {
                    let v = d as f64 / 14.0;
                    let failed = e == EncoderKind::Vit && d == 6 && k == ClassifierKind::Gru;
                    cells.push(CellResult {
                        encoder: e,
                        dim: d,
                        classifier: k,
                        metrics: (!failed).then_some(MetricQuad {
                            acc: 100.0 * v - 0.004,
                            prc: v / 1.3,
                            rec: v / 1.7,
                            f1: v / 2.1,
                        }),
                        error: failed.then(|| "non-finite value produced by loss, \"epoch 1\"".to_string()),
                        projection_sha256: "abc".into(),
                    });
                }
            }
        }
        ResultTable {
            dataset: "N-BaIoT".into(),
            encoders: EncoderKind::ALL.to_vec(),
            dims: vec![2, 6, 10, 14],
            classifiers: ClassifierKind::ALL.to_vec(),
            cells,
        }
    }

    #[test]
    fn csv_round_trip_at_printed_precision() {
        let t = sample();
        let back = parse_results_csv(&emit_table(&t, TableFormat::Csv).unwrap()).unwrap();
        assert_eq!(back, t.at_printed_precision());
    }

    #[test]
    fn markdown_layout() {
        let md = emit_table(&sample(), TableFormat::Markdown).unwrap();
        assert!(md.contains("### CLASSIFIER PERFORMANCE ON N-BaIoT-ViT-ENCODED LATENT SPACE VECTORS"));
        let rows: Vec<&str> = md.lines().filter(|l| l.starts_with('|')).collect();
        assert_eq!(rows.len(), 2 * (3 + 5));
        for row in &rows {
            assert_eq!(row.matches('|').count() - 1, 17, "{row}");
        }
        let models: Vec<&str> = rows[3..8].iter().map(|r| r.split('|').nth(1).unwrap().trim()).collect();
        assert_eq!(models, ["DNN", "LSTM", "BLSTM", "GRU", "sRNN"]);
        assert!(rows[0].contains("latent dim = 14"));
        assert!(rows[2].starts_with("| | Acc | Prc | Rec | F1 |"));
    }

    #[test]
    fn empty_classifier_list_is_an_error() {
        let mut t = sample();
        t.classifiers.clear();
        t.cells.clear();
        assert!(emit_table(&t, TableFormat::Markdown).is_err());
        let mut t = sample();
        t.cells.pop();
        assert!(emit_table(&t, TableFormat::Csv).is_err());
    }
}
