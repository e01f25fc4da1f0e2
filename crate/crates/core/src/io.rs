//! Configuration loading, CSV/JSON emission and trajectory dumps.
//!
//! All writers are atomic: content goes to a temporary sibling file that is
//! renamed over the destination once complete.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::comb::{CombConfig, CombParams};
use crate::error::{Error, Result};
use crate::sde::Trajectory;
use crate::C64;

/// Reads and validates a JSON configuration file.
pub fn load_config(path: &Path) -> Result<CombConfig> {
    let params = load_params(path)?;
    params.build(path.parent())
}

pub fn load_params(path: &Path) -> Result<CombParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_params(&text).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

/// Parses configuration text; errors carry serde's line/column and key.
pub fn parse_params(text: &str) -> std::result::Result<CombParams, String> {
    serde_json::from_str::<CombParams>(text).map_err(|e| {
        let msg = e.to_string();
        if msg.contains("unknown field") && (msg.contains("imag") || msg.contains("phase") || msg.contains("chirp")) {
            format!("{msg} (pump amplitudes must be real; complex or chirped pumps are not supported)")
        } else {
            msg
        }
    })
}

/// Reads a headerless CSV of real numbers, one record per row.
pub(crate) fn read_numeric_csv(path: &Path, what: &str) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(record.len());
        for field in record.iter().filter(|f| !f.is_empty()) {
            match field.parse::<f64>() {
                Ok(v) => row.push(v),
                Err(_) => {
                    let looks_complex = field.contains('i') || field.contains('j');
                    let message = if looks_complex {
                        format!("line {}: `{field}` looks complex; {what} must be real", line + 1)
                    } else {
                        format!("line {}: cannot parse `{field}` in {what}", line + 1)
                    };
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        message,
                    });
                }
            }
        }
        if !row.is_empty() {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}

/// RFC-4180 CSV with a header row.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<str>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        let fields: Vec<String> = row.into_iter().map(|f| f.as_ref().to_string()).collect();
        w.write_record(&fields)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Shortest round-trip decimal representation.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

const DUMP_MAGIC: &[u8; 8] = b"SPOPOTRJ";
const DUMP_VERSION: u32 = 1;
const N_TRAJ_OFFSET: u64 = 16;

/// Metadata at the head of a binary trajectory dump.
#[derive(Clone, Debug, PartialEq)]
pub struct DumpHeader {
    /// Number of comb lines `M`.
    pub dim: usize,
    pub n_traj: usize,
    pub n_saves: usize,
    pub stride: usize,
    pub dt: f64,
}

/// Streaming writer for the binary trajectory format.
///
/// Layout (little-endian): `b"SPOPOTRJ"`, `u32` version, `u32 M`,
/// `u64 n_traj`, `u64 n_saves`, `u64 stride`, `f64 dt`; then per
/// trajectory `u64 index`, `f64 θ(0)` and `n_saves × 4M` interleaved
/// `(re, im)` pairs. Each saved row holds `s` (`l = +1` block then `l = -1`)
/// followed by `s⁺` in the same order.
pub struct DumpWriter {
    out: BufWriter<File>,
    tmp: PathBuf,
    dest: PathBuf,
    header: DumpHeader,
    written: usize,
}

impl DumpWriter {
    pub fn create(path: &Path, dim: usize, n_saves: usize, stride: usize, dt: f64) -> Result<Self> {
        let tmp = temp_sibling(path);
        let mut out = BufWriter::new(File::create(&tmp)?);
        out.write_all(DUMP_MAGIC)?;
        out.write_all(&DUMP_VERSION.to_le_bytes())?;
        out.write_all(&(dim as u32).to_le_bytes())?;
        out.write_all(&0u64.to_le_bytes())?;
        out.write_all(&(n_saves as u64).to_le_bytes())?;
        out.write_all(&(stride as u64).to_le_bytes())?;
        out.write_all(&dt.to_le_bytes())?;
        Ok(DumpWriter {
            out,
            tmp,
            dest: path.to_path_buf(),
            header: DumpHeader {
                dim,
                n_traj: 0,
                n_saves,
                stride,
                dt,
            },
            written: 0,
        })
    }

    pub fn write(&mut self, traj: &Trajectory) -> Result<()> {
        if traj.dim != self.header.dim || traj.n_saves() != self.header.n_saves {
            return Err(Error::Dump("trajectory shape does not match the dump header".into()));
        }
        self.out.write_all(&(traj.index as u64).to_le_bytes())?;
        self.out.write_all(&traj.theta0.to_le_bytes())?;
        for z in &traj.data {
            self.out.write_all(&z.re.to_le_bytes())?;
            self.out.write_all(&z.im.to_le_bytes())?;
        }
        self.written += 1;
        Ok(())
    }

    /// Patches the trajectory count and moves the file into place.
    pub fn finish(mut self) -> Result<DumpHeader> {
        self.out.flush()?;
        let mut file = self.out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        file.seek(SeekFrom::Start(N_TRAJ_OFFSET))?;
        file.write_all(&(self.written as u64).to_le_bytes())?;
        file.sync_all()?;
        drop(file);
        fs::rename(&self.tmp, &self.dest)?;
        self.header.n_traj = self.written;
        Ok(self.header)
    }
}

/// Reads every trajectory of a binary dump.
pub fn read_dump(path: &Path) -> Result<(DumpHeader, Vec<Trajectory>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Dump("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != DUMP_VERSION {
        return Err(Error::Dump(format!("unsupported version {version}")));
    }
    let dim = read_u32(&mut r)? as usize;
    let n_traj = read_u64(&mut r)? as usize;
    let n_saves = read_u64(&mut r)? as usize;
    let stride = read_u64(&mut r)? as usize;
    let dt = read_f64(&mut r)?;
    let header = DumpHeader {
        dim,
        n_traj,
        n_saves,
        stride,
        dt,
    };
    let per_traj = n_saves * 4 * dim;
    let mut trajectories = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let index = read_u64(&mut r)? as usize;
        let theta0 = read_f64(&mut r)?;
        let mut data = Vec::with_capacity(per_traj);
        for _ in 0..per_traj {
            let re = read_f64(&mut r)?;
            let im = read_f64(&mut r)?;
            data.push(C64::new(re, im));
        }
        trajectories.push(Trajectory {
            index,
            theta0,
            dim,
            dt,
            stride,
            data,
        });
    }
    Ok((header, trajectories))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

const DUMP_CSV_HEADER: [&str; 9] = ["traj", "theta0", "save", "t", "sector", "l", "m", "re", "im"];

/// CSV rendering of trajectories, one amplitude per row. Meant for small runs.
pub fn write_dump_csv(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut rows = Vec::new();
    for traj in trajectories {
        let n = (traj.dim / 2) as i64;
        for k in 0..traj.n_saves() {
            let row = traj.row(k);
            for (slot, z) in row.iter().enumerate() {
                let sector = if slot < 2 * traj.dim { "s" } else { "s_plus" };
                let within = slot % (2 * traj.dim);
                let l = if within < traj.dim { "1" } else { "-1" };
                let m = (within % traj.dim) as i64 - n;
                rows.push(vec![
                    traj.index.to_string(),
                    fmt_f64(traj.theta0),
                    k.to_string(),
                    fmt_f64(traj.time(k)),
                    sector.to_string(),
                    l.to_string(),
                    m.to_string(),
                    fmt_f64(z.re),
                    fmt_f64(z.im),
                ]);
            }
        }
    }
    write_csv(path, &DUMP_CSV_HEADER, rows)
}

/// Reads trajectories written by [`write_dump_csv`].
pub fn read_dump_csv(path: &Path, stride: usize, dt: f64) -> Result<Vec<Trajectory>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != DUMP_CSV_HEADER {
        return Err(Error::Dump("unexpected CSV header".into()));
    }
    struct Row {
        traj: usize,
        theta0: f64,
        save: usize,
        plus: bool,
        l: i64,
        m: i64,
        z: C64,
    }
    let parse = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|_| Error::Dump(format!("bad number `{s}`"))) };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(Row {
            traj: parse(&rec[0])? as usize,
            theta0: parse(&rec[1])?,
            save: parse(&rec[2])? as usize,
            plus: &rec[4] == "s_plus",
            l: parse(&rec[5])? as i64,
            m: parse(&rec[6])? as i64,
            z: C64::new(parse(&rec[7])?, parse(&rec[8])?),
        });
    }
    let n = rows.iter().map(|r| r.m.abs()).max().unwrap_or(0);
    let dim = (2 * n + 1) as usize;
    let n_saves = rows.iter().map(|r| r.save + 1).max().unwrap_or(0);
    let mut out: Vec<Trajectory> = Vec::new();
    for r in rows {
        if out.last().map(|t| t.index) != Some(r.traj) {
            out.push(Trajectory {
                index: r.traj,
                theta0: r.theta0,
                dim,
                dt,
                stride,
                data: vec![C64::new(0.0, 0.0); n_saves * 4 * dim],
            });
        }
        let t = out.last_mut().unwrap();
        let block = if r.l == 1 { 0 } else { 1 };
        let slot = (r.plus as usize) * 2 * dim + block * dim + (r.m + n) as usize;
        t.data[r.save * 4 * dim + slot] = r.z;
    }
    Ok(out)
}
