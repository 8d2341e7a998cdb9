//! CSV summaries: arrival-count histograms and goodness-of-fit rows.

use std::io::Write;

use serde::Serialize;

use crate::point_process::ArrivalPath;

/// `hist[k]` = number of paths with exactly `k` arrivals.
pub fn count_histogram(paths: &[ArrivalPath]) -> Vec<u64> {
    let max = paths.iter().map(ArrivalPath::count).max().unwrap_or(0);
    let mut hist = vec![0u64; max + 1];
    for p in paths {
        hist[p.count()] += 1;
    }
    hist
}

/// Rows `count,observed,expected` with `expected = pmf(k)·Σ observed`.
pub fn write_count_histogram<W: Write, F: Fn(u64) -> f64>(hist: &[u64], pmf: F, out: W) -> csv::Result<()> {
    #[derive(Serialize)]
    struct Row {
        count: usize,
        observed: u64,
        expected: f64,
    }
    let total: u64 = hist.iter().sum();
    let mut w = csv::Writer::from_writer(out);
    for (k, &observed) in hist.iter().enumerate() {
        w.serialize(Row {
            count: k,
            observed,
            expected: pmf(k as u64) * total as f64,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsRow {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

pub fn write_ks_rows<W: Write>(rows: &[KsRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_and_csv() {
        let paths = vec![
            ArrivalPath::new(1.0, vec![]).unwrap(),
            ArrivalPath::new(1.0, vec![0.2, 0.4]).unwrap(),
            ArrivalPath::new(1.0, vec![0.5, 0.6]).unwrap(),
        ];
        let hist = count_histogram(&paths);
        assert_eq!(hist, vec![1, 0, 2]);
        let mut buf = Vec::new();
        write_count_histogram(&hist, |k| [0.25, 0.25, 0.5][k as usize], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "count,observed,expected\n0,1,0.75\n1,0,0.75\n2,2,1.5\n"
        );
        let mut buf = Vec::new();
        let row = KsRow {
            name: "waits".into(),
            n: 10,
            m: 10,
            statistic: 0.1,
            critical: 0.8,
            pass: true,
        };
        write_ks_rows(&[row], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "name,n,m,statistic,critical,pass\nwaits,10,10,0.1,0.8,true\n"
        );
    }
}
