use std::io::Write;

use crate::error::Result;

const FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCase {
    pub label: String,
    pub engine: f64,
    pub oracle: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Engine-versus-oracle comparisons with relative tolerances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub cases: Vec<OracleCase>,
}

impl OracleReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, label: impl Into<String>, engine: f64, oracle: f64, tolerance: f64) {
        let abs_err = (engine - oracle).abs();
        let rel_err = abs_err / oracle.abs().max(FLOOR);
        self.cases.push(OracleCase {
            label: label.into(),
            engine,
            oracle,
            abs_err,
            rel_err,
            tolerance,
            pass: rel_err <= tolerance,
        });
    }

    pub fn all_pass(&self) -> bool {
        self.cases.iter().all(|c| c.pass)
    }

    pub fn fraction_passing(&self) -> f64 {
        if self.cases.is_empty() {
            return 1.0;
        }
        self.cases.iter().filter(|c| c.pass).count() as f64 / self.cases.len() as f64
    }

    pub fn max_rel_err(&self) -> f64 {
        self.cases.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn median_rel_err(&self) -> f64 {
        let mut v: Vec<f64> = self.cases.iter().map(|c| c.rel_err).collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "label,engine,oracle,abs_err,rel_err,tolerance,pass")?;
        for c in &self.cases {
            writeln!(
                out,
                "{},{:.17e},{:.17e},{:.6e},{:.6e},{:e},{}",
                c.label, c.engine, c.oracle, c.abs_err, c.rel_err, c.tolerance, c.pass
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_and_aggregates() {
        let mut r = OracleReport::new();
        r.push("a", 1.01, 1.0, 0.05);
        r.push("b", 2.0, 1.0, 0.05);
        r.push("c", 0.0, 0.0, 0.05);
        assert!((r.cases[0].rel_err - 0.01).abs() < 1e-12);
        assert!(!r.all_pass());
        assert!((r.fraction_passing() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.median_rel_err() - r.cases[0].rel_err).abs() < 1e-15);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
