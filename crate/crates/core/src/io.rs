//! CSV, binary and JSON artifact formats.
//!
//! Binary traces: magic `OPMT`, u32 version (1), f64 sample rate, u64 sample
//! count, then the samples as f64. All fields little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lockin::ScanResult;
use crate::sim::{Channel, TimeSeries};
use crate::spectral::Spectrum;
use crate::sweep::SweepRow;

pub const TRACE_MAGIC: &[u8; 4] = b"OPMT";
pub const TRACE_VERSION: u32 = 1;

pub fn write_trace_csv(path: &Path, ts: &TimeSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time_s", "volts"])?;
    for (k, x) in ts.samples.iter().enumerate() {
        w.write_record([fmt(k as f64 / ts.sample_rate), fmt(*x)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path, channel: Channel) -> Result<TimeSeries> {
    let mut r = csv::Reader::from_path(path)?;
    expect_header(&mut r, &["time_s", "volts"])?;
    let mut t = Vec::new();
    let mut x = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        t.push(parse(&rec, 0)?);
        x.push(parse(&rec, 1)?);
    }
    if t.len() < 2 {
        return Err(Error::Format("trace needs at least two samples".into()));
    }
    let fs = (t.len() - 1) as f64 / (t[t.len() - 1] - t[0]);
    TimeSeries::new(x, fs, channel, 0)
}

pub fn write_trace_bin(path: &Path, ts: &TimeSeries) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&TRACE_VERSION.to_le_bytes())?;
    w.write_all(&ts.sample_rate.to_le_bytes())?;
    w.write_all(&(ts.samples.len() as u64).to_le_bytes())?;
    for x in &ts.samples {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_bin(path: &Path, channel: Channel) -> Result<TimeSeries> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TRACE_MAGIC {
        return Err(Error::Format("not an OPMT trace".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != TRACE_VERSION {
        return Err(Error::Format(format!("unsupported trace version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let fs = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() != count * 8 {
        return Err(Error::Format(format!(
            "header promises {count} samples, file holds {} bytes",
            buf.len()
        )));
    }
    let samples = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    TimeSeries::new(samples, fs, channel, 0)
}

pub fn write_scan_csv(path: &Path, s: &ScanResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["field_T", "u_V", "v_V"])?;
    for i in 0..s.len() {
        w.write_record([fmt(s.field[i]), fmt(s.u[i]), fmt(s.v[i])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scan_csv(path: &Path) -> Result<ScanResult> {
    let mut r = csv::Reader::from_path(path)?;
    expect_header(&mut r, &["field_T", "u_V", "v_V"])?;
    let (mut b, mut u, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        b.push(parse(&rec, 0)?);
        u.push(parse(&rec, 1)?);
        v.push(parse(&rec, 2)?);
    }
    ScanResult::new(b, u, v)
}

pub fn write_spectrum_csv(path: &Path, s: &Spectrum) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["freq_hz", "psd_v2hz"])?;
    for (f, p) in s.freq.iter().zip(&s.psd) {
        w.write_record([fmt(*f), fmt(*p)])?;
    }
    w.flush()?;
    Ok(())
}

/// The CSV carries no averaging metadata, so the caller supplies it.
pub fn read_spectrum_csv(path: &Path, n_averages: usize) -> Result<Spectrum> {
    let mut r = csv::Reader::from_path(path)?;
    expect_header(&mut r, &["freq_hz", "psd_v2hz"])?;
    let (mut f, mut p) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        f.push(parse(&rec, 0)?);
        p.push(parse(&rec, 1)?);
    }
    Spectrum::new(f, p, n_averages)
}

const SWEEP_LEAD: [&str; 8] = [
    "n_cm3",
    "xi2_in",
    "xi2_out",
    "linewidth_hz",
    "amplitude_v",
    "slope_v_per_t",
    "s_psn_v2hz",
    "s_spn_v2hz",
];

fn sb_column(freq: f64) -> String {
    format!("sb{freq}")
}

/// Writes `sweep.csv`. All rows must share one analysis-frequency list.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let freqs = rows.first().map(|r| r.analysis_freqs_hz.clone()).unwrap_or_default();
    if rows.iter().any(|r| r.analysis_freqs_hz != freqs) {
        return Err(Error::Format("rows use different analysis frequencies".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = SWEEP_LEAD.iter().map(|s| s.to_string()).collect();
    header.extend(freqs.iter().map(|f| sb_column(*f)));
    header.extend(["omega3db_hz", "s_mba_v2hz", "status"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = [r.n, r.xi2_in, r.xi2_out, r.linewidth_fit, r.amplitude_fit, r.slope, r.s_psn, r.s_spn]
            .iter()
            .map(|v| fmt(*v))
            .collect();
        rec.extend(r.s_b.iter().map(|v| fmt(*v)));
        rec.push(fmt(r.omega_3db));
        rec.push(fmt(r.s_mba));
        rec.push(r.status.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.len() < SWEEP_LEAD.len() + 3 || header[..SWEEP_LEAD.len()] != SWEEP_LEAD {
        return Err(Error::Format("unexpected sweep.csv header".into()));
    }
    let tail = header.len() - 3;
    if header[tail..] != ["omega3db_hz", "s_mba_v2hz", "status"] {
        return Err(Error::Format("unexpected sweep.csv trailing columns".into()));
    }
    let freqs = header[SWEEP_LEAD.len()..tail]
        .iter()
        .map(|h| {
            h.strip_prefix("sb")
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("bad sensitivity column {h:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let g = |i: usize| parse(&rec, i);
        rows.push(SweepRow {
            n: g(0)?,
            xi2_in: g(1)?,
            xi2_out: g(2)?,
            linewidth_fit: g(3)?,
            amplitude_fit: g(4)?,
            slope: g(5)?,
            s_psn: g(6)?,
            s_spn: g(7)?,
            s_b: (SWEEP_LEAD.len()..tail).map(g).collect::<Result<_>>()?,
            analysis_freqs_hz: freqs.clone(),
            omega_3db: g(tail)?,
            s_mba: g(tail + 1)?,
            status: rec.get(tail + 2).unwrap_or("").to_string(),
        });
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Shortest round-tripping representation.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn parse(rec: &csv::StringRecord, i: usize) -> Result<f64> {
    let s = rec
        .get(i)
        .ok_or_else(|| Error::Format(format!("missing column {i}")))?;
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("cannot parse {s:?} as a number")))
}

fn expect_header<R: Read>(r: &mut csv::Reader<R>, want: &[&str]) -> Result<()> {
    let h = r.headers()?;
    if h.iter().ne(want.iter().copied()) {
        return Err(Error::Format(format!("expected header {want:?}, found {h:?}")));
    }
    Ok(())
}
