use std::io::Read;
use std::path::Path;

use crate::component::Graph;
use crate::error::{LgocvError, Result};

/// Numeric CSV with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    headers: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl DataTable {
    pub fn new(headers: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if headers.len() != columns.len() {
            return Err(LgocvError::Config("header and column counts differ".into()));
        }
        if columns.windows(2).any(|w| w[0].len() != w[1].len()) {
            return Err(LgocvError::Config("columns have different lengths".into()));
        }
        Ok(Self { headers, columns })
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| LgocvError::Parse { line: 1, message: e.to_string() })?
            .iter()
            .map(str::to_owned)
            .collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(LgocvError::Parse { line: 1, message: "missing header row".into() });
        }
        let mut columns = vec![Vec::new(); headers.len()];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| LgocvError::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            for (col, field) in columns.iter_mut().zip(rec.iter()) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| LgocvError::Parse { line, message: format!("`{field}` is not a number") })?;
                col.push(v);
            }
        }
        if columns[0].is_empty() {
            return Err(LgocvError::Parse { line: 2, message: "data file has no rows".into() });
        }
        Ok(Self { headers, columns })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| LgocvError::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(f)
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|k| self.columns[k].as_slice())
            .ok_or_else(|| LgocvError::Config(format!("data has no column `{name}`")))
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.headers.join(",");
        out.push('\n');
        for r in 0..self.nrows() {
            let row: Vec<String> = self.columns.iter().map(|c| format!("{}", c[r])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Edge list, one `a b` pair (0-indexed) per line; `#` starts a comment.
pub fn read_graph(text: &str, nodes: usize) -> Result<Graph> {
    let mut edges = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| LgocvError::Parse { line: ln + 1, message };
        let toks: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();
        if toks.len() != 2 {
            return Err(err(format!("expected two node indices, got `{line}`")));
        }
        let parse = |t: &str| t.parse::<usize>().map_err(|_| err(format!("`{t}` is not a node index")));
        let (a, b) = (parse(toks[0])?, parse(toks[1])?);
        if a >= nodes || b >= nodes {
            return Err(err(format!("edge ({a}, {b}) outside 0..{nodes}")));
        }
        if a == b {
            return Err(err(format!("self-loop at node {a}")));
        }
        edges.push((a, b));
    }
    Graph::from_edges(nodes, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_numeric_csv() {
        let t = DataTable::from_reader("y, idx\n1.5, 0\n2,1\n".as_bytes()).unwrap();
        assert_eq!(t.nrows(), 2);
        assert_eq!(t.column("idx").unwrap(), &[0.0, 1.0]);
        assert!(t.column("z").is_err());
        assert_eq!(DataTable::from_reader(t.to_csv().as_bytes()).unwrap(), t);
    }

    #[test]
    fn data_errors_carry_line_numbers() {
        assert!(matches!(DataTable::from_reader("y\n".as_bytes()), Err(LgocvError::Parse { .. })));
        assert!(matches!(DataTable::from_reader("".as_bytes()), Err(LgocvError::Parse { .. })));
        match DataTable::from_reader("y\n1\nx\n".as_bytes()) {
            Err(LgocvError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn graph_edges() {
        let g = read_graph("# ring\n0 1\n1 2\n2 0\n", 4).unwrap();
        assert_eq!(g.connected_components().len(), 2);
        assert!(matches!(read_graph("0 5\n", 4), Err(LgocvError::Parse { line: 1, .. })));
        assert!(read_graph("0\n", 4).is_err());
    }
}
