use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,eta,alpha,train_acc_overall,clean_train_acc,noisy_train_acc,clean_noisy_gap,test_acc,generalization_gap,frac_a,frac_b,frac_c,p_clean,p_noise,pr";

/// One epoch of a training run. `None` marks an undefined value and is
/// written as an empty cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRow {
    pub epoch: usize,
    pub eta: f64,
    pub alpha: f64,
    pub train_acc_overall: Option<f64>,
    pub clean_train_acc: Option<f64>,
    pub noisy_train_acc: Option<f64>,
    pub clean_noisy_gap: Option<f64>,
    pub test_acc: Option<f64>,
    pub generalization_gap: Option<f64>,
    pub frac_a: Option<f64>,
    pub frac_b: Option<f64>,
    pub frac_c: Option<f64>,
    pub p_clean: Option<f64>,
    pub p_noise: Option<f64>,
    pub pr: Option<f64>,
}

impl MetricsRow {
    /// Fills the two gap columns from their source columns.
    pub fn recompute_gaps(&mut self) {
        self.clean_noisy_gap = difference(self.clean_train_acc, self.noisy_train_acc);
        self.generalization_gap = difference(self.train_acc_overall, self.test_acc);
    }

    /// Column value by CSV name (`epoch` included).
    pub fn column(&self, name: &str) -> Option<Option<f64>> {
        Some(match name {
            "epoch" => Some(self.epoch as f64),
            "eta" => Some(self.eta),
            "alpha" => Some(self.alpha),
            "train_acc_overall" => self.train_acc_overall,
            "clean_train_acc" => self.clean_train_acc,
            "noisy_train_acc" => self.noisy_train_acc,
            "clean_noisy_gap" => self.clean_noisy_gap,
            "test_acc" => self.test_acc,
            "generalization_gap" => self.generalization_gap,
            "frac_a" => self.frac_a,
            "frac_b" => self.frac_b,
            "frac_c" => self.frac_c,
            "p_clean" => self.p_clean,
            "p_noise" => self.p_noise,
            "pr" => self.pr,
            _ => return None,
        })
    }

    fn optional_cells(&self) -> [Option<f64>; 12] {
        [
            self.train_acc_overall,
            self.clean_train_acc,
            self.noisy_train_acc,
            self.clean_noisy_gap,
            self.test_acc,
            self.generalization_gap,
            self.frac_a,
            self.frac_b,
            self.frac_c,
            self.p_clean,
            self.p_noise,
            self.pr,
        ]
    }
}

fn difference(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

pub fn column_names() -> impl Iterator<Item = &'static str> {
    METRICS_HEADER.split(',')
}

/// Shortest round-trip decimal, padded with zeros to at least six
/// significant digits.
pub fn format_decimal(v: f64) -> String {
    let mut s = format!("{v}");
    if !v.is_finite() {
        return s;
    }
    let significant = s
        .bytes()
        .filter(u8::is_ascii_digit)
        .skip_while(|&b| b == b'0')
        .count();
    let missing = 6usize.saturating_sub(significant.max(1));
    if missing > 0 {
        if !s.contains('.') {
            s.push('.');
        }
        // a zero value has one significant digit by convention
        s.extend(std::iter::repeat_n('0', missing));
    }
    s
}

fn format_cell(v: Option<f64>) -> String {
    v.map(format_decimal).unwrap_or_default()
}

pub fn encode_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        write!(out, "{},{},{}", row.epoch, format_decimal(row.eta), format_decimal(row.alpha)).unwrap();
        for cell in row.optional_cells() {
            out.push(',');
            out.push_str(&format_cell(cell));
        }
        out.push('\n');
    }
    out
}

pub fn decode_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == METRICS_HEADER => {}
        Some(h) => return Err(Error::Schema(format!("unexpected header {h:?}"))),
        None => return Err(Error::Schema("empty metrics file".into())),
    }
    let columns = METRICS_HEADER.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::MetricsParse { row: row_no, message };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns {
            return Err(err(format!("expected {columns} cells, found {}", cells.len())));
        }
        let number = |idx: usize| -> Result<Option<f64>> {
            let cell = cells[idx].trim();
            if cell.is_empty() {
                return Ok(None);
            }
            cell.parse::<f64>()
                .map(Some)
                .map_err(|_| err(format!("bad value {cell:?} in column {}", column_names().nth(idx).unwrap())))
        };
        let epoch = cells[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| err(format!("bad epoch {:?}", cells[0])))?;
        let required = |idx: usize| number(idx)?.ok_or_else(|| err(format!("column {} is required", column_names().nth(idx).unwrap())));
        let mut row = MetricsRow {
            epoch,
            eta: required(1)?,
            alpha: required(2)?,
            train_acc_overall: number(3)?,
            clean_train_acc: number(4)?,
            noisy_train_acc: number(5)?,
            clean_noisy_gap: None,
            test_acc: number(7)?,
            generalization_gap: None,
            frac_a: number(9)?,
            frac_b: number(10)?,
            frac_c: number(11)?,
            p_clean: number(12)?,
            p_noise: number(13)?,
            pr: number(14)?,
        };
        row.recompute_gaps();
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_metrics(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_metrics(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row(epoch: usize) -> MetricsRow {
        let mut row = MetricsRow {
            epoch,
            eta: 0.1,
            alpha: 0.75,
            train_acc_overall: Some(0.8123456789),
            clean_train_acc: Some(0.95),
            noisy_train_acc: Some(1.0 / 3.0),
            test_acc: Some(0.9),
            frac_a: Some(0.5),
            frac_b: Some(0.3),
            frac_c: Some(0.2),
            p_clean: Some(0.25),
            p_noise: Some(0.5),
            pr: None,
            ..MetricsRow::default()
        };
        row.recompute_gaps();
        row
    }

    #[test]
    fn decimals_keep_six_significant_digits() {
        assert_eq!(format_decimal(0.5), "0.500000");
        assert_eq!(format_decimal(0.01), "0.0100000");
        assert_eq!(format_decimal(3.0), "3.00000");
        assert_eq!(format_decimal(0.0), "0.00000");
        assert_eq!(format_decimal(0.123456789), "0.123456789");
        for v in [0.1 * 0.1, 1.0 / 3.0, -2.5e-7, 12345.678] {
            assert_eq!(format_decimal(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn round_trip_preserves_rows() {
        let rows = vec![sample_row(0), sample_row(1)];
        let text = encode_metrics(&rows);
        assert_eq!(decode_metrics(&text).unwrap(), rows);
        // undefined pr is an empty trailing cell
        assert!(text.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn gaps_are_recomputed_on_read() {
        let mut row = sample_row(0);
        row.clean_noisy_gap = Some(42.0);
        let back = decode_metrics(&encode_metrics(&[row])).unwrap();
        assert_eq!(back[0].clean_noisy_gap, Some(0.95 - 1.0 / 3.0));
        assert_eq!(back[0].generalization_gap, Some(0.8123456789 - 0.9));
    }

    #[test]
    fn header_mismatch_is_a_schema_error() {
        let text = "epoch,eta\n0,0.1\n";
        assert!(matches!(decode_metrics(text), Err(Error::Schema(_))));
        assert!(matches!(decode_metrics(""), Err(Error::Schema(_))));
    }

    #[test]
    fn bad_rows_report_row_numbers() {
        let mut text = encode_metrics(&[sample_row(0), sample_row(1)]);
        text.push_str("2,0.1,abc,,,,,,,,,,,,\n");
        assert!(matches!(decode_metrics(&text), Err(Error::MetricsParse { row: 3, .. })));
        let short = format!("{METRICS_HEADER}\n0,0.1\n");
        assert!(matches!(decode_metrics(&short), Err(Error::MetricsParse { row: 1, .. })));
    }

    #[test]
    fn columns_are_addressable_by_name() {
        let row = sample_row(4);
        assert_eq!(row.column("epoch"), Some(Some(4.0)));
        assert_eq!(row.column("pr"), Some(None));
        assert_eq!(row.column("nope"), None);
        assert_eq!(column_names().count(), 15);
    }
}
