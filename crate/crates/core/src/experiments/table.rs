//! CSV emission and parsing of result tables and plot data.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{PingError, Result};
use crate::experiments::metrics::{Estimate, MetricsReport, RepMetrics, METRICS};

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_cell(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| PingError::Config(format!("bad number {s:?} in table")))
}

/// Summary table: one row per metric, a mean and an SE column per prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub priors: Vec<String>,
    /// `rows[m][p]` is metric `METRICS[m]` under prior `p`.
    pub rows: Vec<Vec<Option<Estimate>>>,
}

impl ResultTable {
    pub fn from_reports(reports: &[MetricsReport]) -> Self {
        Self {
            priors: reports.iter().map(|r| r.prior.clone()).collect(),
            rows: METRICS
                .iter()
                .map(|m| reports.iter().map(|r| r.estimate(m)).collect())
                .collect(),
        }
    }

    pub fn get(&self, metric: &str, prior: &str) -> Option<Estimate> {
        let m = METRICS.iter().position(|x| *x == metric)?;
        let p = self.priors.iter().position(|x| x == prior)?;
        self.rows[m][p]
    }

    pub fn emit<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["metric".to_string()];
        for p in &self.priors {
            header.push(p.clone());
            header.push(format!("{p}_se"));
        }
        out.write_record(&header)?;
        for (name, row) in METRICS.iter().zip(&self.rows) {
            let mut rec = vec![name.to_string()];
            for e in row {
                rec.push(cell(e.map(|e| e.mean)));
                rec.push(cell(e.map(|e| e.se)));
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn parse<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("metric") || header.len() % 2 == 0 {
            return Err(PingError::Config("table header must be metric, then value/se pairs".into()));
        }
        let priors: Vec<String> = header.iter().skip(1).step_by(2).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.get(0) != METRICS.get(i).copied() {
                return Err(PingError::Config(format!("unexpected metric row {:?}", rec.get(0))));
            }
            let mut row = Vec::with_capacity(priors.len());
            for p in 0..priors.len() {
                let mean = parse_cell(&rec[1 + 2 * p])?;
                let se = parse_cell(&rec[2 + 2 * p])?;
                row.push(match (mean, se) {
                    (Some(mean), Some(se)) => Some(Estimate { mean, se }),
                    (None, None) => None,
                    _ => return Err(PingError::Config("mean and se must both be present".into())),
                });
            }
            rows.push(row);
        }
        if rows.len() != METRICS.len() {
            return Err(PingError::Config(format!("expected {} metric rows", METRICS.len())));
        }
        Ok(Self { priors, rows })
    }
}

/// Long-format per-replication values: `prior,rep,metric,value`.
pub fn emit_replications<W: Write>(reports: &[MetricsReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["prior", "rep", "metric", "value"])?;
    for r in reports {
        for (i, rep) in r.replications.iter().enumerate() {
            for m in METRICS {
                out.write_record([r.prior.as_str(), &i.to_string(), m, &cell(rep.get(m))])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn parse_replications<R: Read>(r: R) -> Result<Vec<MetricsReport>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut order: Vec<String> = Vec::new();
    let mut by_prior: BTreeMap<String, Vec<RepMetrics>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(PingError::Config("replication rows need 4 fields".into()));
        }
        let prior = rec[0].to_string();
        let rep: usize = rec[1]
            .parse()
            .map_err(|_| PingError::Config(format!("bad replication index {:?}", &rec[1])))?;
        if !by_prior.contains_key(&prior) {
            order.push(prior.clone());
        }
        let reps = by_prior.entry(prior).or_default();
        if reps.len() <= rep {
            reps.resize(rep + 1, RepMetrics::default());
        }
        reps[rep].set(&rec[2], parse_cell(&rec[3])?)?;
    }
    Ok(order
        .into_iter()
        .map(|p| {
            let reps = by_prior.remove(&p).unwrap_or_default();
            MetricsReport::new(p, reps)
        })
        .collect())
}

/// Plot data: coordinates with the true and estimated surface.
pub fn emit_slice<W: Write>(coords: &[Vec<f64>], truth: &[f64], estimate: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y", "truth", "estimate"])?;
    for ((c, t), e) in coords.iter().zip(truth).zip(estimate) {
        out.write_record([c[0].to_string(), c[1].to_string(), t.to_string(), e.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn opt() -> impl Strategy<Value = Option<f64>> {
        prop_oneof![Just(None), (-1e6f64..1e6).prop_map(Some), (0.0f64..1.0).prop_map(Some)]
    }

    fn rep() -> impl Strategy<Value = RepMetrics> {
        (opt(), opt(), opt(), opt(), opt()).prop_map(|(mse, mse_zero, tp, fp, coverage)| RepMetrics {
            mse,
            mse_zero,
            tp,
            fp,
            coverage,
        })
    }

    proptest! {
        #[test]
        fn replications_round_trip(a in prop::collection::vec(rep(), 1..6), b in prop::collection::vec(rep(), 1..6)) {
            let reports = vec![MetricsReport::new("GP", a), MetricsReport::new("PING-3", b)];
            let mut buf = Vec::new();
            emit_replications(&reports, &mut buf).unwrap();
            prop_assert_eq!(parse_replications(buf.as_slice()).unwrap(), reports.clone());

            let table = ResultTable::from_reports(&reports);
            let mut buf = Vec::new();
            table.emit(&mut buf).unwrap();
            prop_assert_eq!(ResultTable::parse(buf.as_slice()).unwrap(), table);
        }
    }

    #[test]
    fn table_layout() {
        let r = RepMetrics {
            mse: Some(0.5),
            fp: Some(0.0),
            ..Default::default()
        };
        let table = ResultTable::from_reports(&[MetricsReport::new("GP", vec![r, r])]);
        let mut buf = Vec::new();
        table.emit(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("metric,GP,GP_se"));
        assert!(text.contains("mse,0.5,0\n"));
        assert!(text.contains("tp,,\n"));
        assert!(ResultTable::parse("metric,GP\nmse,1\n".as_bytes()).is_err());
    }
}
