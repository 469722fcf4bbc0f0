//! Price files: loading, date alignment and train/test splits.
//!
//! A price file is a CSV with a header row. The first column holds dates
//! (`YYYY-MM-DD`, `YYYY/MM/DD` or `MM/DD/YYYY`). The price is taken from a
//! column named `adj_close`, `adj close`, `adjusted_close`, `close` or
//! `price` if present, otherwise from the second column. A combined file
//! carries both assets as columns two and three.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PRICE_COLUMNS: [&str; 5] = ["adj_close", "adj close", "adjusted_close", "close", "price"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub pa: Vec<f64>,
    pub pb: Vec<f64>,
    pub names: (String, String),
}

impl PricePanel {
    pub fn new(dates: Vec<NaiveDate>, pa: Vec<f64>, pb: Vec<f64>, names: (String, String)) -> Result<Self> {
        if dates.len() != pa.len() || dates.len() != pb.len() {
            return Err(Error::Data("panel columns differ in length".into()));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!("dates not strictly increasing at {}", w[1])));
        }
        if let Some((i, _)) = pa.iter().chain(&pb).enumerate().find(|(_, p)| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::Data(format!("non-positive price in row {}", i % dates.len().max(1))));
        }
        Ok(Self { dates, pa, pb, names })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn date_strings(&self) -> Vec<String> {
        self.dates.iter().map(|d| d.format("%Y-%m-%d").to_string()).collect()
    }

    /// Rows with date ≤ `split` and rows after it.
    pub fn split_at_date(&self, split: NaiveDate) -> (PricePanel, PricePanel) {
        let k = self.dates.partition_point(|d| *d <= split);
        let part = |r: std::ops::Range<usize>| PricePanel {
            dates: self.dates[r.clone()].to_vec(),
            pa: self.pa[r.clone()].to_vec(),
            pb: self.pb[r].to_vec(),
            names: self.names.clone(),
        };
        (part(0..k), part(k..self.len()))
    }

    /// Writes the combined three-column format.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", self.names.0.as_str(), self.names.1.as_str()])?;
        for i in 0..self.len() {
            w.write_record([
                self.dates[i].format("%Y-%m-%d").to_string(),
                self.pa[i].to_string(),
                self.pb[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    let s = s.trim();
    ["%Y-%m-%d", "%Y/%m/%d", "%m/%d/%Y"]
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
        .ok_or_else(|| Error::Data(format!("unrecognised date {s:?}")))
}

fn parse_price(s: &str, line: u64, source: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("{source}, line {line}: price {s:?} is not a number")))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Data(format!("{source}, line {line}: price {v} must be positive")));
    }
    Ok(v)
}

/// Header names and price rows keyed by date.
type Rows = (Vec<String>, BTreeMap<NaiveDate, Vec<f64>>);

/// Reads `(date, price…)` rows; `pick` chooses the price columns.
fn read_rows<R: Read>(
    input: R,
    source: &str,
    pick: impl Fn(&csv::StringRecord) -> Result<Vec<usize>>,
) -> Result<Rows> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    let cols = pick(&header)?;
    let names = cols.iter().map(|&c| header[c].to_string()).collect();
    let mut rows = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let date = parse_date(&rec[0]).map_err(|e| Error::Data(format!("{source}, line {line}: {e}")))?;
        let prices = cols
            .iter()
            .map(|&c| parse_price(rec.get(c).unwrap_or(""), line, source))
            .collect::<Result<Vec<_>>>()?;
        if rows.insert(date, prices).is_some() {
            return Err(Error::Data(format!("{source}, line {line}: duplicate date {date}")));
        }
    }
    Ok((names, rows))
}

fn single_price_column(header: &csv::StringRecord) -> Result<Vec<usize>> {
    if header.len() < 2 {
        return Err(Error::Data("need a date column and a price column".into()));
    }
    let named = header
        .iter()
        .position(|h| PRICE_COLUMNS.contains(&h.to_ascii_lowercase().as_str()));
    Ok(vec![named.unwrap_or(1)])
}

/// Reads one asset's prices.
pub fn read_prices<R: Read>(input: R, source: &str) -> Result<BTreeMap<NaiveDate, f64>> {
    let (_, rows) = read_rows(input, source, single_price_column)?;
    Ok(rows.into_iter().map(|(d, p)| (d, p[0])).collect())
}

/// Inner join on dates. Returns the panel and a warning per dropped date.
pub fn align(
    a: &BTreeMap<NaiveDate, f64>,
    b: &BTreeMap<NaiveDate, f64>,
    names: (String, String),
) -> Result<(PricePanel, Vec<String>)> {
    let mut warnings = Vec::new();
    let (mut dates, mut pa, mut pb) = (Vec::new(), Vec::new(), Vec::new());
    for (d, x) in a {
        match b.get(d) {
            Some(y) => {
                dates.push(*d);
                pa.push(*x);
                pb.push(*y);
            }
            None => warnings.push(format!("{d} missing for {}; dropped", names.1)),
        }
    }
    for d in b.keys().filter(|d| !a.contains_key(d)) {
        warnings.push(format!("{d} missing for {}; dropped", names.0));
    }
    if dates.is_empty() {
        return Err(Error::Data("the two price series share no dates".into()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((PricePanel::new(dates, pa, pb, names)?, warnings))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "asset".into(), |s| s.to_string_lossy().into_owned())
}

/// Loads two single-asset files and aligns them.
pub fn load_pair(path_a: &Path, path_b: &Path) -> Result<(PricePanel, Vec<String>)> {
    let a = read_prices(std::fs::File::open(path_a)?, &path_a.display().to_string())?;
    let b = read_prices(std::fs::File::open(path_b)?, &path_b.display().to_string())?;
    align(&a, &b, (stem(path_a), stem(path_b)))
}

/// Loads a combined `date,A,B` file. Rows must be complete.
pub fn read_combined<R: Read>(input: R, source: &str) -> Result<PricePanel> {
    let (names, rows) = read_rows(input, source, |h| {
        if h.len() < 3 {
            Err(Error::Data("combined file needs date and two price columns".into()))
        } else {
            Ok(vec![1, 2])
        }
    })?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{source}: no rows")));
    }
    let (mut dates, mut pa, mut pb) = (Vec::new(), Vec::new(), Vec::new());
    for (d, p) in rows {
        dates.push(d);
        pa.push(p[0]);
        pb.push(p[1]);
    }
    PricePanel::new(dates, pa, pb, (names[0].clone(), names[1].clone()))
}

pub fn load_combined(path: &Path) -> Result<PricePanel> {
    read_combined(std::fs::File::open(path)?, &path.display().to_string())
}

/// Synthetic panel on consecutive weekdays from `start`: `P_B` is a
/// geometric random walk from `base` with 1% daily volatility, the spread
/// follows `model`, and `P_A = γ·P_B + x + ε`.
pub fn synthetic_panel(
    model: &crate::model::ModelSpec,
    n: usize,
    seed: u64,
    start: NaiveDate,
    base: f64,
) -> Result<PricePanel> {
    use crate::rng::{derive_seed, UniformStream};
    use statrs::distribution::{ContinuousCDF, Normal};
    let x = crate::model::simulate_spread(model, n, None, derive_seed(seed, "spread", 0))?.values;
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let mut u = UniformStream::new(derive_seed(seed, "prices", 0));
    let sd_eps = model.obs_noise_var.sqrt();
    let mut log_b = base.ln();
    let mut dates = Vec::with_capacity(n);
    let mut d = start;
    let (mut pa, mut pb) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for xt in &x {
        while matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            d = d.succ_opt().expect("date in range");
        }
        dates.push(d);
        d = d.succ_opt().expect("date in range");
        let b = log_b.exp();
        pb.push(b);
        pa.push(model.hedge_ratio * b + xt + sd_eps * z.inverse_cdf(u.next_uniform()));
        log_b += 0.01 * z.inverse_cdf(u.next_uniform());
    }
    PricePanel::new(dates, pa, pb, ("A".into(), "B".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    const A: &str = "date,close\n2020-01-01,10\n2020-01-02,11\n2020-01-03,12\n2020-01-06,13\n2020-01-07,14\n";

    #[test]
    fn identical_dates_align_fully() {
        let a = read_prices(A.as_bytes(), "a").unwrap();
        let b = read_prices(A.replace("close", "price").as_bytes(), "b").unwrap();
        let (p, w) = align(&a, &b, ("A".into(), "B".into())).unwrap();
        assert_eq!(p.len(), 5);
        assert!(w.is_empty());
    }

    #[test]
    fn missing_date_is_dropped_with_warning() {
        let a = read_prices(A.as_bytes(), "a").unwrap();
        let b_text: String = A.lines().filter(|l| !l.starts_with("2020-01-03")).map(|l| format!("{l}\n")).collect();
        let b = read_prices(b_text.as_bytes(), "b").unwrap();
        let (p, w) = align(&a, &b, ("A".into(), "B".into())).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("2020-01-03"));
    }

    #[test]
    fn zero_price_names_the_line() {
        let text = A.replace("2020-01-03,12", "2020-01-03,0");
        let err = read_prices(text.as_bytes(), "a.csv").unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
        let text = A.replace("2020-01-03,12", "2020-01-03,abc");
        assert!(read_prices(text.as_bytes(), "a.csv").is_err());
    }

    #[test]
    fn duplicates_and_empty_intersection() {
        let text = format!("{A}2020-01-02,15\n");
        assert!(read_prices(text.as_bytes(), "a").unwrap_err().to_string().contains("duplicate"));
        let a = read_prices(A.as_bytes(), "a").unwrap();
        let b = read_prices("date,close\n2021-01-01,5\n".as_bytes(), "b").unwrap();
        assert!(align(&a, &b, ("A".into(), "B".into())).is_err());
    }

    #[test]
    fn named_price_column_and_date_formats() {
        let text = "Date,Open,Adj Close\n01/02/2020,1,9.5\n2020/01/03,1,9.75\n";
        let p = read_prices(text.as_bytes(), "x").unwrap();
        assert_eq!(p[&d("2020-01-02")], 9.5);
        assert_eq!(p[&d("2020-01-03")], 9.75);
    }

    #[test]
    fn synthetic_panel_is_deterministic_weekdays() {
        let m = crate::model::ModelSpec::new(
            crate::model::DriftSpec::linear(0.0, 0.9),
            crate::model::DiffusionSpec::constant(0.03),
            crate::model::NoiseSpec::standard_normal(),
            1.5,
            0.001,
        )
        .unwrap();
        let p = synthetic_panel(&m, 20, 4, d("2021-01-01"), 40.0).unwrap();
        assert_eq!(p, synthetic_panel(&m, 20, 4, d("2021-01-01"), 40.0).unwrap());
        assert_eq!(p.dates[1], d("2021-01-04"));
        assert_eq!(p.pb[0], 40.0);
    }

    #[test]
    fn combined_round_trip_and_split() {
        let text = "date,PEP,KO\n2020-01-02,100,50\n2020-01-03,101,50.5\n2020-01-06,99,49\n";
        let p = read_combined(text.as_bytes(), "c").unwrap();
        assert_eq!(p.names, ("PEP".into(), "KO".into()));
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
        let (train, test) = p.split_at_date(d("2020-01-03"));
        assert_eq!((train.len(), test.len()), (2, 1));
        let (train, test) = p.split_at_date(d("2020-01-06"));
        assert_eq!((train.len(), test.len()), (3, 0));
    }
}
