//! File helpers and dataset export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use adashare_core::data::{MultiTaskDataset, Targets, TaskSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Result, WorkbenchError};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkbenchError + '_ {
    move |source| WorkbenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary sibling and renames, so a killed process
/// never leaves a truncated file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(io_err(tmp))?;
    fs::rename(tmp, path).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

/// Exact (unrounded) pretty JSON, newline terminated.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| WorkbenchError::missing(path, format!("unreadable JSON: {e}")))
}

/// One row per example: the inputs `x0..`, then each task's label (for
/// classification) or target columns `<task>_0..`.
pub fn dataset_csv(tasks: &[TaskSpec], data: &MultiTaskDataset) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (0..data.input_dim()).map(|i| format!("x{i}")).collect();
    for (t, target) in tasks.iter().zip(&data.targets) {
        match target {
            Targets::Classes { .. } => header.push(t.name.clone()),
            Targets::Dense(m) => header.extend((0..m.shape()[1]).map(|j| format!("{}_{j}", t.name))),
        }
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..data.len() {
        let mut fields: Vec<String> = data.inputs.row(i).iter().map(f64::to_string).collect();
        for target in &data.targets {
            match target {
                Targets::Classes { labels, .. } => fields.push(labels[i].to_string()),
                Targets::Dense(m) => fields.extend(m.row(i).iter().map(f64::to_string)),
            }
        }
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use adashare_core::data::LossKind;
    use adashare_core::Tensor;

    #[test]
    fn atomic_write_leaves_no_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/c.txt");
        write_atomic(&path, b"hello\n").unwrap();
        assert_eq!(read_text(&path).unwrap(), "hello\n");
        assert!(!dir.path().join("a/b/c.txt.partial").exists());
    }

    #[test]
    fn csv_layout() {
        let tasks = vec![
            TaskSpec::new("cls", LossKind::CrossEntropy, 3).unwrap(),
            TaskSpec::new("reg", LossKind::L1, 2).unwrap(),
        ];
        let data = MultiTaskDataset::new(
            Tensor::matrix(2, 1, vec![0.5, -1.0]).unwrap(),
            vec![
                Targets::Classes {
                    labels: vec![2, 0],
                    classes: 3,
                },
                Targets::Dense(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.25]).unwrap()),
            ],
        )
        .unwrap();
        assert_eq!(dataset_csv(&tasks, &data), "x0,cls,reg_0,reg_1\n0.5,2,1,2\n-1,0,3,4.25\n");
    }
}
