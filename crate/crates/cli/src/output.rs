use std::path::{Path, PathBuf};

use serde::Serialize;

use scendec::{ControlEnsemble, PhaIteration, ScenarioTree};

use crate::CliError;

/// Fixed-point text without a sign on zero.
pub(crate) fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub(crate) fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

pub(crate) struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Writes into the result directory and remembers what was written.
pub(crate) struct Artifacts {
    dir: PathBuf,
    pub written: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let to_io = |e: csv::Error| CliError::write(&path, e.into());
        let mut w = csv::Writer::from_path(&path).map_err(to_io)?;
        w.write_record(&table.header).map_err(to_io)?;
        for row in &table.rows {
            w.write_record(row).map_err(to_io)?;
        }
        w.flush().map_err(|e| CliError::write(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::write(&path, e.into()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::write(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// One row per stage and bundle: the conditioning outcome indices and the
/// bundle's control.
pub(crate) fn controls_table(tree: &ScenarioTree, u: &ControlEnsemble, decimals: usize) -> Table {
    let n = u.n();
    let mut table = Table::new(
        ["stage", "bundle", "history"]
            .into_iter()
            .map(String::from)
            .chain((1..=n).map(|k| format!("u{k}"))),
    );
    for t in 0..tree.horizon() {
        for (l, members) in tree.bundles(t).iter().enumerate() {
            let history: Vec<String> = tree
                .bundle_prefix(t, l)
                .iter()
                .map(|k| k.to_string())
                .collect();
            let mut row = vec![t.to_string(), l.to_string(), history.join("-")];
            row.extend(u.stage(members[0], t).iter().map(|v| fixed(*v, decimals)));
            table.push(row);
        }
    }
    table
}

pub(crate) fn iterations_table(history: &[PhaIteration]) -> Table {
    let with_distance = history.first().is_some_and(|h| h.distance.is_some());
    let mut header = vec!["iteration", "metric"];
    if with_distance {
        header.push("distance");
    }
    let mut table = Table::new(header);
    for h in history {
        let mut row = vec![h.iteration.to_string(), sci(h.metric)];
        if let Some(d) = h.distance.filter(|_| with_distance) {
            row.push(sci(d));
        }
        table.push(row);
    }
    table
}
