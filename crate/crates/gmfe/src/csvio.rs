//! CSV output (RFC-4180-compatible quoting, full round-trip float
//! precision) and run manifests tying outputs to their inputs.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

/// 17 significant digits: enough to round-trip any f64 bit pattern.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    I(i64),
    U(u64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => format_f64(*v),
            Cell::I(v) => v.to_string(),
            Cell::U(v) => v.to_string(),
            Cell::S(s) => quote_if_needed(s),
        }
    }
}

fn quote_if_needed(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_csv(header: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(Cell::render).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<Cell>]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(render_csv(header, rows).as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file_hex(path: impl AsRef<Path>) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

/// Provenance record written next to every file-producing command's output.
#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub tool_version: String,
    pub config_digest: Option<String>,
    pub trajectory_digests: Vec<String>,
    pub master_seed: Option<u64>,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(args: &[String]) -> Self {
        Self {
            command_line: args.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            ..Default::default()
        }
    }

    /// Plain structured text (JSON object, hand-rendered).
    pub fn render(&self) -> String {
        let mut out = String::from("{\n");
        out.push_str(&format!("  \"command_line\": [{}],\n", join_json_strings(&self.command_line)));
        out.push_str(&format!("  \"tool_version\": {},\n", json_string(&self.tool_version)));
        match &self.config_digest {
            Some(d) => out.push_str(&format!("  \"config_digest\": {},\n", json_string(d))),
            None => out.push_str("  \"config_digest\": null,\n"),
        }
        out.push_str(&format!(
            "  \"trajectory_digests\": [{}],\n",
            join_json_strings(&self.trajectory_digests)
        ));
        match self.master_seed {
            Some(s) => out.push_str(&format!("  \"master_seed\": {s},\n")),
            None => out.push_str("  \"master_seed\": null,\n"),
        }
        out.push_str(&format!("  \"wall_time_s\": {},\n", self.wall_time_s));
        out.push_str(&format!("  \"outputs\": [{}]\n", join_json_strings(&self.outputs)));
        out.push('}');
        out.push('\n');
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.render().as_bytes())
    }
}

fn json_string(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn join_json_strings(items: &[String]) -> String {
    items.iter().map(|s| json_string(s)).collect::<Vec<_>>().join(", ")
}
