//! Plain-text model checkpoints.
//!
//! The first line is a JSON header; every following line is one weight row
//! as comma-separated numbers printed with round-trip precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{GcnConfig, GcnModel};
use crate::grn::{GrnConfig, GrnModel};
use crate::numkernel::Tensor;

pub const FORMAT: &str = "resonant-gnn-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gcn,
    Grn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub model: ModelKind,
    pub shapes: Vec<(usize, usize)>,
    pub config: serde_json::Value,
}

pub fn save(path: &Path, model: ModelKind, config: &impl Serialize, weights: &[Tensor]) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        model,
        shapes: weights.iter().map(Tensor::shape).collect(),
        config: serde_json::to_value(config)?,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = serde_json::to_string(&header)?;
    body.push('\n');
    for w in weights {
        for r in 0..w.rows() {
            let row: Vec<String> = w.row(r).iter().map(|x| format!("{x:?}")).collect();
            body.push_str(&row.join(","));
            body.push('\n');
        }
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Header, Vec<Tensor>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty checkpoint".into()))?;
    let header: Header = serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format != FORMAT || header.version != FORMAT_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported checkpoint {} v{}", header.format, header.version),
        ));
    }
    let mut weights = Vec::with_capacity(header.shapes.len());
    for &(rows, cols) in &header.shapes {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (no, line) = lines
                .next()
                .ok_or_else(|| parse_err(text.lines().count() + 1, "truncated weights".into()))?;
            let before = data.len();
            for field in line.split(',') {
                let x: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(no + 1, format!("bad number `{field}`")))?;
                data.push(x);
            }
            if data.len() - before != cols {
                return Err(parse_err(no + 1, format!("expected {cols} values")));
            }
        }
        weights.push(Tensor::new(rows, cols, data)?);
    }
    if let Some((no, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(no + 1, "trailing data".into()));
    }
    Ok((header, weights))
}

fn expect_kind(path: &Path, header: &Header, kind: ModelKind) -> Result<()> {
    if header.model != kind {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("checkpoint holds a {:?} model", header.model),
        });
    }
    Ok(())
}

impl GcnModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        save(path, ModelKind::Gcn, &self.config, &self.weights)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, weights) = load(path)?;
        expect_kind(path, &header, ModelKind::Gcn)?;
        let config: GcnConfig = serde_json::from_value(header.config)?;
        let mut model = GcnModel::new(config)?;
        model.weights = weights;
        Ok(model)
    }
}

impl GrnModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        save(path, ModelKind::Grn, &self.config, &self.weights)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, weights) = load(path)?;
        expect_kind(path, &header, ModelKind::Grn)?;
        let config: GrnConfig = serde_json::from_value(header.config)?;
        let mut model = GrnModel::new(config)?;
        model.weights = weights;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gcn_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/gcn.ckpt");
        let mut m = GcnModel::new(GcnConfig::classification(vec![3, 5, 2], 10, 4)).unwrap();
        m.weights[0].set(0, 0, 1.0 / 3.0);
        m.weights[1].set(1, 1, -1e-300);
        m.save(&path).unwrap();
        let back = GcnModel::load(&path).unwrap();
        assert_eq!(back.weights, m.weights);
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn grn_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grn.ckpt");
        let m = GrnModel::new(GrnConfig::new(2, 4, 2, 7)).unwrap();
        m.save(&path).unwrap();
        assert_eq!(GrnModel::load(&path).unwrap().weights, m.weights);
        assert!(matches!(GcnModel::load(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn corrupt_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let m = GcnModel::new(GcnConfig::classification(vec![2, 2], 1, 0)).unwrap();
        m.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replacen('\n', "\nx,", 2);
        let text = text.replacen("\nx,", "\n", 1);
        fs::write(&path, text).unwrap();
        match GcnModel::load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
