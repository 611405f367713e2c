//! FieldSample serialization.
//!
//! CSV is long format with one `t,x,value` row per grid point, preceded by a
//! `#` line carrying the schema version and provenance. JSON wraps the sample
//! in an envelope with a `schema_version` field. Floats are written in the
//! shortest form that parses back to the same bits, so both formats round-trip
//! exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SamplingGrid;
use crate::sim::{FieldSample, SimMethod};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    #[default]
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(OutputFormat::Csv),
            Some("json") => Ok(OutputFormat::Json),
            _ => Err(Error::Format(format!("cannot infer format of {}", path.display()))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    schema_version: u32,
    sample: FieldSample,
}

pub fn to_json(sample: &FieldSample) -> Result<String> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        sample: sample.clone(),
    };
    Ok(serde_json::to_string_pretty(&env)?)
}

pub fn from_json(text: &str) -> Result<FieldSample> {
    let env: Envelope = serde_json::from_str(text)?;
    check_version(env.schema_version)?;
    env.sample.validate()?;
    Ok(env.sample)
}

fn check_version(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported schema_version {v} (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

pub fn write_csv<W: Write>(sample: &FieldSample, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(
        out,
        "# gmf-heat schema_version={SCHEMA_VERSION} seed={} replicate_id={} method={:?}",
        sample.seed, sample.replicate_id, sample.method
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "value"])?;
    for (i, row) in sample.values.iter().enumerate() {
        let t = sample.grid.times()[i];
        for (k, v) in row.iter().enumerate() {
            w.write_record([t.to_string(), sample.grid.site(k).to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a long-format CSV; the grid is rebuilt from the distinct t and x.
/// Provenance missing from the comment line defaults to seed 0, replicate 0,
/// method Dense.
pub fn read_csv<R: Read>(input: R) -> Result<FieldSample> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let (meta, header_line) = if first.starts_with('#') {
        (parse_meta(&first)?, None)
    } else {
        (Meta::default(), Some(first))
    };
    let rest: Box<dyn Read> = match header_line {
        Some(h) => Box::new(std::io::Cursor::new(h).chain(reader)),
        None => Box::new(reader),
    };
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(rest);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["t", "x", "value"] {
        return Err(Error::Format(format!("expected header t,x,value, got {headers:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("bad number in row {rec:?}: {e}")))
        };
        rows.push((parse(0)?, parse(1)?, parse(2)?));
    }
    sample_from_rows(rows, meta)
}

#[derive(Default)]
struct Meta {
    seed: u64,
    replicate_id: u64,
    method: Option<SimMethod>,
}

fn parse_meta(line: &str) -> Result<Meta> {
    let mut meta = Meta::default();
    for field in line.trim_start_matches('#').split_whitespace() {
        let Some((key, value)) = field.split_once('=') else {
            continue;
        };
        let bad = |e: String| Error::Format(format!("bad {key} in CSV comment: {e}"));
        match key {
            "schema_version" => check_version(value.parse().map_err(|e| bad(format!("{e}")))?)?,
            "seed" => meta.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
            "replicate_id" => meta.replicate_id = value.parse().map_err(|e| bad(format!("{e}")))?,
            "method" => {
                meta.method = Some(match value {
                    "Dense" => SimMethod::Dense,
                    "Circulant" => SimMethod::Circulant,
                    other => return Err(bad(other.to_string())),
                })
            }
            _ => {}
        }
    }
    Ok(meta)
}

fn sample_from_rows(rows: Vec<(f64, f64, f64)>, meta: Meta) -> Result<FieldSample> {
    let distinct = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let times = distinct(rows.iter().map(|r| r.0).collect());
    let sites = distinct(rows.iter().map(|r| r.1).collect());
    if times.is_empty() {
        return Err(Error::Format("CSV has no data rows".into()));
    }
    if rows.len() != times.len() * sites.len() {
        return Err(Error::Format(format!(
            "expected {} rows for {} times × {} sites, got {}",
            times.len() * sites.len(),
            times.len(),
            sites.len(),
            rows.len()
        )));
    }
    let grid = SamplingGrid::new(times.clone(), sites[0], sites.len())?;
    for (k, x) in sites.iter().enumerate() {
        if (x - grid.site(k)).abs() > 1e-9 * x.abs() {
            return Err(Error::Format(format!(
                "sites are not the lattice kδ: {x} at position {}",
                k + 1
            )));
        }
    }
    let mut values = vec![vec![f64::NAN; sites.len()]; times.len()];
    for (t, x, v) in rows {
        let i = times.binary_search_by(|a| a.total_cmp(&t)).unwrap();
        let k = sites.binary_search_by(|a| a.total_cmp(&x)).unwrap();
        values[i][k] = v;
    }
    FieldSample::new(
        grid,
        values,
        meta.seed,
        meta.replicate_id,
        meta.method.unwrap_or(SimMethod::Dense),
    )
}

pub fn save(sample: &FieldSample, path: &Path) -> Result<()> {
    match OutputFormat::from_path(path)? {
        OutputFormat::Csv => write_csv(sample, File::create(path)?),
        OutputFormat::Json => {
            let mut f = File::create(path)?;
            f.write_all(to_json(sample)?.as_bytes())?;
            f.write_all(b"\n")?;
            Ok(())
        }
    }
}

pub fn load(path: &Path) -> Result<FieldSample> {
    match OutputFormat::from_path(path)? {
        OutputFormat::Csv => read_csv(File::open(path)?),
        OutputFormat::Json => from_json(&std::fs::read_to_string(path)?),
    }
}
