use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

use lgocv::io::{DataTable, ModelSpec};
use lgocv::LgmModel;

/// A model spec, its data and any graphs, with a digest of all three.
pub struct Inputs {
    pub spec: ModelSpec,
    pub data: DataTable,
    pub graphs: BTreeMap<String, String>,
    pub digest: [u8; 32],
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

impl Inputs {
    pub fn load(model: &Path, data: &Path, graph: Option<&Path>) -> Result<Self> {
        let spec_text = read(model)?;
        let spec = ModelSpec::parse(&spec_text).with_context(|| format!("in model spec {}", model.display()))?;
        let data_text = read(data)?;
        let table =
            DataTable::from_reader(data_text.as_bytes()).with_context(|| format!("in data file {}", data.display()))?;
        let mut graphs = BTreeMap::new();
        let base = model.parent().unwrap_or(Path::new("."));
        for c in spec.components.iter().filter(|c| c.kind == "besag") {
            let path: PathBuf = match (graph, &c.graph) {
                (Some(g), _) => g.to_path_buf(),
                (None, Some(rel)) => base.join(rel),
                (None, None) => bail!("component `{}` needs a graph: add `graph = FILE` or pass --graph", c.name),
            };
            graphs.insert(c.name.clone(), read(&path)?);
        }
        Ok(Self::from_parts(spec_text, spec, table, data_text.as_bytes(), graphs))
    }

    pub fn from_parts(
        spec_text: String,
        spec: ModelSpec,
        data: DataTable,
        data_bytes: &[u8],
        graphs: BTreeMap<String, String>,
    ) -> Self {
        let mut h = Sha256::new();
        for part in [spec_text.as_bytes(), data_bytes] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        for (name, text) in &graphs {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((text.len() as u64).to_le_bytes());
            h.update(text.as_bytes());
        }
        let mut digest = [0u8; 32];
        digest.copy_from_slice(h.finalize().as_slice());
        Self { spec, data, graphs, digest }
    }

    pub fn model(&self) -> Result<LgmModel> {
        self.spec.build(&self.data, &self.graphs).context("cannot build the model")
    }
}

/// `a-b` (1-based, inclusive) to 0-based indices.
pub fn parse_range(text: &str, n: usize) -> Result<Vec<usize>> {
    let (a, b) = text.split_once('-').with_context(|| format!("test range `{text}` must look like `1501-2000`"))?;
    let a: usize = a.trim().parse().with_context(|| format!("`{a}` is not a positive integer"))?;
    let b: usize = b.trim().parse().with_context(|| format!("`{b}` is not a positive integer"))?;
    if a == 0 || a > b || b > n {
        bail!("test range {a}-{b} must satisfy 1 <= a <= b <= {n}");
    }
    Ok((a - 1..b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_one_based_and_inclusive() {
        assert_eq!(parse_range("2-4", 5).unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_range("1501-2000", 2000).unwrap().len(), 500);
        assert!(parse_range("0-3", 5).is_err());
        assert!(parse_range("4-2", 5).is_err());
        assert!(parse_range("1-6", 5).is_err());
        assert!(parse_range("12", 5).is_err());
    }
}
