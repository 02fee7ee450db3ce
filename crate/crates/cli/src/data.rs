//! CSV ingestion and design-matrix assembly.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use betalink::{DerivedTerm, ModelSpec, ResponseVector};
use nalgebra::DMatrix;

use crate::config::{Derived, ModelConfig, Submodel};

/// The columns a model reads, parsed and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Index of the response in `names`.
    pub response: usize,
    pub n: usize,
}

/// Reads a headered CSV, keeping the columns `config` uses. Lines starting
/// with `#` are comments. Data rows are reported by their line number.
pub fn load_csv(path: &Path, config: &ModelConfig) -> Result<Dataset> {
    let file = std::fs::File::open(path).with_context(|| format!("opening data {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .with_context(|| format!("reading header of {}", path.display()))?
        .clone();
    let wanted = config.used_columns();
    let positions = wanted
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| anyhow!("column '{name}' not found in {}", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut columns = vec![Vec::new(); wanted.len()];
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let line = record.position().map_or(0, |p| p.line());
        lines.push(line);
        for ((name, &pos), column) in wanted.iter().zip(&positions).zip(columns.iter_mut()) {
            let cell = record.get(pos).unwrap_or("");
            let value: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| anyhow!("line {line}, column '{name}': '{cell}' is not a finite number"))?;
            column.push(value);
        }
    }
    let n = columns[0].len();
    if n == 0 {
        bail!("{} has no data rows", path.display());
    }

    let response = &mut columns[0];
    if let Some((a, b)) = config.range {
        for v in response.iter_mut() {
            *v = (*v - a) / (b - a);
        }
    }
    let outside: Vec<String> = response
        .iter()
        .enumerate()
        .filter(|(_, v)| !(**v > 0.0 && **v < 1.0))
        .map(|(i, _)| lines[i].to_string())
        .collect();
    if !outside.is_empty() {
        let shown = outside.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
        let more = if outside.len() > 10 { format!(" and {} more", outside.len() - 10) } else { String::new() };
        bail!(
            "response '{}' must lie strictly inside (0, 1){}; offending lines: {shown}{more}",
            config.response,
            if config.range.is_some() { " after the range transform" } else { "" }
        );
    }

    Ok(Dataset { names: wanted, columns, response: 0, n })
}

impl Dataset {
    fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|c| c == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| anyhow!("column '{name}' not loaded"))
    }

    pub fn response(&self) -> Result<ResponseVector> {
        Ok(ResponseVector::new(self.columns[self.response].clone())?)
    }

    /// Design matrix of a submodel, columns in `Submodel::design_names` order.
    pub fn design(&self, sub: &Submodel) -> Result<DMatrix<f64>> {
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if sub.intercept {
            cols.push(vec![1.0; self.n]);
        }
        for c in &sub.columns {
            cols.push(self.column(c)?.to_vec());
        }
        for d in &sub.derived {
            let v = match d {
                Derived::Square(c) => self.column(c)?.iter().map(|v| v * v).collect(),
                Derived::Interaction(a, b) => {
                    let (a, b) = (self.column(a)?, self.column(b)?);
                    a.iter().zip(b).map(|(u, v)| u * v).collect()
                }
            };
            cols.push(v);
        }
        Ok(DMatrix::from_fn(self.n, cols.len(), |t, j| cols[j][t]))
    }

    pub fn spec(&self, config: &ModelConfig) -> Result<ModelSpec> {
        let spec = ModelSpec::new(
            self.design(&config.mean)?,
            self.design(&config.dispersion)?,
            config.mean.link,
            config.dispersion.link,
        )?
        .with_lambda_modes(config.mean.lambda_mode(), config.dispersion.lambda_mode())?;
        spec.check_identifiable()?;
        Ok(spec)
    }
}

/// Derived mean-design columns as column indices, for marginal impacts.
pub fn derived_terms(sub: &Submodel) -> Vec<DerivedTerm> {
    let names = sub.design_names();
    let index = |name: &str| names.iter().position(|n| n == name).expect("validated base column");
    sub.derived
        .iter()
        .map(|d| {
            let column = index(&d.name());
            match d {
                Derived::Square(c) => DerivedTerm::Square { column, of: index(c) },
                Derived::Interaction(a, b) => DerivedTerm::Interaction { column, a: index(a), b: index(b) },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn config(range: Option<(f64, f64)>) -> ModelConfig {
        let mut c: ModelConfig = serde_json::from_str(
            r#"{"response":"y","mean":{"columns":["a"],"derived":[{"square":"a"}],"link":"logit"},
                "dispersion":{"link":"logit"}}"#,
        )
        .unwrap();
        c.range = range;
        c
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn range_transform_is_affine() {
        let f = file("name,y,a\nx,50,1\nw,25,2\n");
        let d = load_csv(f.path(), &config(Some((0.0, 100.0)))).unwrap();
        assert_eq!(d.columns[0], [0.5, 0.25]);
        assert_eq!(d.names, ["y", "a"]);
        let x = d.design(&config(None).mean).unwrap();
        assert_eq!(x.row(1).iter().copied().collect::<Vec<_>>(), [1.0, 2.0, 4.0]);
    }

    #[test]
    fn boundary_response_names_the_row() {
        let f = file("y,a\n0.3,1\n0.0,2\n");
        let err = load_csv(f.path(), &config(None)).unwrap_err().to_string();
        assert!(err.contains("offending lines: 3"), "{err}");
    }

    #[test]
    fn bad_cells_and_missing_columns_are_located() {
        let f = file("y,a\n0.3,1\n0.4,oops\n");
        let err = load_csv(f.path(), &config(None)).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("'a'"), "{err}");
        let f = file("y,b\n0.3,1\n");
        assert!(load_csv(f.path(), &config(None)).unwrap_err().to_string().contains("'a'"));
    }

    #[test]
    fn derived_terms_point_at_design_columns() {
        let c = config(None);
        assert_eq!(derived_terms(&c.mean), [DerivedTerm::Square { column: 2, of: 1 }]);
    }
}
