//! Deterministic artifact writers: RFC-4180 CSV with 17-significant-digit
//! floats, JSON documents, and the run manifest that indexes every file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mfg_core::grid::{Grid, ScalarField, VectorField};

/// Formats a float with 17 significant digits (shortest exact form is not
/// used so identical values always print identically across writers).
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Accumulates CSV text (CRLF line endings, header mandatory).
pub struct Csv {
    buf: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = String::new();
        buf.push_str(&header.join(","));
        buf.push_str("\r\n");
        Self {
            buf,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.columns, "csv row width mismatch");
        self.buf.push_str(&fields.join(","));
        self.buf.push_str("\r\n");
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

/// Collects artifacts and writes the manifest last, so every file the run
/// produced is referenced.
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> std::io::Result<()> {
        let mut f = fs::File::create(self.root.join(name))?;
        f.write_all(text.as_bytes())?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(value).expect("serializable");
        self.write_text(name, &(text + "\n"))
    }

    pub fn write_csv(&mut self, name: &str, csv: Csv) -> std::io::Result<()> {
        self.write_text(name, &csv.into_string())
    }

    /// Scalar field as `coordinates..., value` rows.
    pub fn write_scalar_field(
        &mut self,
        name: &str,
        grid: &Grid,
        field: &ScalarField,
    ) -> std::io::Result<()> {
        let mut header = vec!["x"];
        if grid.dim() == 2 {
            header.push("y");
        }
        header.push("value");
        let mut csv = Csv::new(&header);
        for c in 0..grid.cells() {
            let center = grid.cell_center(c);
            let mut row = vec![fmt_f64(center[0])];
            if grid.dim() == 2 {
                row.push(fmt_f64(center[1]));
            }
            row.push(fmt_f64(field[c]));
            csv.row(&row);
        }
        self.write_csv(name, csv)
    }

    /// Vector field as `coordinates..., components...` rows.
    pub fn write_vector_field(
        &mut self,
        name: &str,
        grid: &Grid,
        field: &VectorField,
    ) -> std::io::Result<()> {
        let mut header = vec!["x"];
        if grid.dim() == 2 {
            header.push("y");
        }
        header.push("wx");
        if grid.dim() == 2 {
            header.push("wy");
        }
        let mut csv = Csv::new(&header);
        for c in 0..grid.cells() {
            let center = grid.cell_center(c);
            let mut row = vec![fmt_f64(center[0])];
            if grid.dim() == 2 {
                row.push(fmt_f64(center[1]));
            }
            for d in 0..grid.dim() {
                row.push(fmt_f64(field.component(d)[c]));
            }
            csv.row(&row);
        }
        self.write_csv(name, csv)
    }

    /// Writes `manifest.json` listing every artifact produced so far.
    pub fn finish<C: Serialize, L: Serialize>(
        mut self,
        config: &C,
        ledger: Option<&L>,
        seed: u64,
    ) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Versions {
            core: &'static str,
            cli: &'static str,
        }
        #[derive(Serialize)]
        struct Manifest<'a, C: Serialize, L: Serialize> {
            config: &'a C,
            ledger: Option<&'a L>,
            versions: Versions,
            seed: u64,
            artifacts: Vec<String>,
        }
        self.artifacts.sort();
        let manifest = Manifest {
            config,
            ledger,
            versions: Versions {
                core: mfg_core::VERSION,
                cli: env!("CARGO_PKG_VERSION"),
            },
            seed,
            artifacts: self.artifacts.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
        fs::write(self.root.join("manifest.json"), text)
    }
}
