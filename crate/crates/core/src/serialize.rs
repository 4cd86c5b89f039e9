//! Saving and loading a [`FeaturesCollection`].
//!
//! Two formats are supported:
//!
//! * **csv**: a directory holding, for each item, `<name>.csv` (no header,
//!   `,`-separated, one row per frame: time column(s) then data columns,
//!   shortest round-trip decimal representation) and `<name>.json` (the
//!   properties tree). When the times have onset/offset pairs the JSON
//!   object carries the extra key `_time_columns: 2`.
//! * **binary**: a single little-endian file. It starts with the magic
//!   bytes `SHN1`, followed by the items until end of file, each encoded as
//!
//!   | field      | type                      |
//!   |------------|---------------------------|
//!   | name_len   | u32                       |
//!   | name       | name_len bytes of UTF-8   |
//!   | m          | u64 (frames)              |
//!   | n          | u64 (channels)            |
//!   | t          | u8 (time columns, 1 or 2) |
//!   | times      | m·t f64, row-major        |
//!   | data       | m·n f64, row-major        |
//!   | props_len  | u64                       |
//!   | properties | props_len bytes of JSON   |

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::features::{Features, FeaturesCollection};

pub const MAGIC: &[u8; 4] = b"SHN1";
const TIME_COLUMNS_KEY: &str = "_time_columns";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Binary,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "binary" => Ok(Format::Binary),
            other => Err(Error::param("format", format!("unknown format `{other}`"))),
        }
    }
}

impl FeaturesCollection {
    pub fn save(&self, path: impl AsRef<Path>, format: Format) -> Result<()> {
        match format {
            Format::Csv => save_csv(self, path.as_ref()),
            Format::Binary => {
                let path = path.as_ref();
                let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
                let mut w = BufWriter::new(file);
                w.write_all(&encode_binary(self)?)
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(path, e))
            }
        }
    }

    pub fn load(path: impl AsRef<Path>, format: Format) -> Result<Self> {
        let path = path.as_ref();
        match format {
            Format::Csv => load_csv(path),
            Format::Binary => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                decode_binary(&bytes)
            }
        }
    }
}

pub fn encode_binary(coll: &FeaturesCollection) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, f) in coll {
        let name_len = u32::try_from(name.len())
            .map_err(|_| Error::Format(format!("name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(f.nframes() as u64).to_le_bytes());
        out.extend_from_slice(&(f.ndims() as u64).to_le_bytes());
        out.push(f.times().ncols() as u8);
        for v in f.times().iter().chain(f.data().iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let props = serde_json::to_vec(f.properties())
            .map_err(|e| Error::Format(format!("properties of {name}: {e}")))?;
        out.extend_from_slice(&(props.len() as u64).to_le_bytes());
        out.extend_from_slice(&props);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| {
            Error::Format("item size overflows".into())
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<FeaturesCollection> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic number, not a features file".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let mut coll = FeaturesCollection::new();
    while r.pos < bytes.len() {
        let name_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Format(format!("invalid item name: {e}")))?
            .to_string();
        let m = r.u64()? as usize;
        let n = r.u64()? as usize;
        let t = r.take(1)?[0] as usize;
        if t != 1 && t != 2 {
            return Err(Error::Format(format!("{name}: invalid time columns {t}")));
        }
        let times = r.f64s(m.saturating_mul(t))?;
        let data = r.f64s(m.checked_mul(n).ok_or_else(|| Error::Format("item size overflows".into()))?)?;
        let props_len = r.u64()? as usize;
        let properties: Value = serde_json::from_slice(r.take(props_len)?)
            .map_err(|e| Error::Format(format!("{name}: properties: {e}")))?;
        let features = Features::new(
            Array2::from_shape_vec((m, n), data).map_err(|e| Error::Format(e.to_string()))?,
            Array2::from_shape_vec((m, t), times).map_err(|e| Error::Format(e.to_string()))?,
            properties,
        )?;
        if coll.get(&name).is_some() {
            return Err(Error::Format(format!("duplicate item {name}")));
        }
        coll.insert(name, features)?;
    }
    Ok(coll)
}

fn check_csv_name(name: &str) -> Result<()> {
    if name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(Error::param(
            "name",
            format!("`{name}` cannot be used as a file name"),
        ));
    }
    Ok(())
}

fn save_csv(coll: &FeaturesCollection, dir: &Path) -> Result<()> {
    for name in coll.names() {
        check_csv_name(name)?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, f) in coll {
        let csv_path = dir.join(format!("{name}.csv"));
        let mut text = String::new();
        for (times, data) in f.times().rows().into_iter().zip(f.data().rows()) {
            let row: Vec<String> = times.iter().chain(data.iter()).map(|v| v.to_string()).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        fs::write(&csv_path, text).map_err(|e| Error::io(&csv_path, e))?;

        let mut props = f.properties().clone();
        if f.times().ncols() == 2 {
            if let Value::Object(map) = &mut props {
                map.insert(TIME_COLUMNS_KEY.into(), Value::from(2));
            }
        }
        let json_path = dir.join(format!("{name}.json"));
        let json = serde_json::to_string_pretty(&props)
            .map_err(|e| Error::Format(format!("properties of {name}: {e}")))?;
        fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    }
    Ok(())
}

fn load_csv(dir: &Path) -> Result<FeaturesCollection> {
    let mut coll = FeaturesCollection::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv_files: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    csv_files.sort();
    for csv_path in csv_files {
        let name = csv_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Format(format!("invalid file name {}", csv_path.display())))?
            .to_string();
        let json_path = csv_path.with_extension("json");
        let mut properties = if json_path.exists() {
            let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", json_path.display())))?
        } else {
            Value::Object(Default::default())
        };
        let tcols = match &mut properties {
            Value::Object(map) => map
                .remove(TIME_COLUMNS_KEY)
                .and_then(|v| v.as_u64())
                .unwrap_or(1) as usize,
            _ => 1,
        };

        let text = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| {
                    Error::Format(format!("{}:{}: {e}", csv_path.display(), i + 1))
                })?;
            if row.len() < tcols || rows.first().is_some_and(|r| r.len() != row.len()) {
                return Err(Error::Format(format!(
                    "{}:{}: inconsistent column count",
                    csv_path.display(),
                    i + 1
                )));
            }
            rows.push(row);
        }
        let m = rows.len();
        let width = rows.first().map_or(tcols, Vec::len);
        let n = width - tcols;
        let mut times = Vec::with_capacity(m * tcols);
        let mut data = Vec::with_capacity(m * n);
        for row in &rows {
            times.extend_from_slice(&row[..tcols]);
            data.extend_from_slice(&row[tcols..]);
        }
        let features = Features::new(
            Array2::from_shape_vec((m, n), data).map_err(|e| Error::Format(e.to_string()))?,
            Array2::from_shape_vec((m, tcols), times).map_err(|e| Error::Format(e.to_string()))?,
            properties,
        )?;
        coll.insert(name, features)?;
    }
    Ok(coll)
}
