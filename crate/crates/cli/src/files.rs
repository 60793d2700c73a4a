//! Input batches, attribution CSVs, graymaps and atomic writes.

use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use xinfid::Attribution;

/// Writes `bytes` to a temporary file next to `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One input vector per CSV row; `#` starts a comment line.
pub fn read_inputs(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("reading inputs {}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading inputs {}", path.display()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| anyhow!("{}:{line}: cannot parse {v:?}", path.display())))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                bail!("{}:{line}: row has {} values, expected {first}", path.display(), row.len());
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{} contains no inputs", path.display());
    }
    Ok(rows)
}

/// A single input written as `a,b,c`.
pub fn parse_input(text: &str) -> Result<Vec<f64>> {
    crate::specs::parse_list(text, ',').with_context(|| format!("parsing input {text:?}"))
}

/// `# method=… locality=… seed=…`, then `index,value` rows.
pub fn attribution_csv(attr: &Attribution, seed: u64) -> String {
    let mut out = format!("# method={} locality={} seed={seed}\nindex,value\n", attr.method, attr.locality);
    for (i, v) in attr.values.iter().enumerate() {
        out.push_str(&format!("{i},{v:?}\n"));
    }
    out
}

pub fn read_attribution(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading attribution {}", path.display()))?;
    let mut values = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let index: usize = record.get(0).unwrap_or("").parse().map_err(|_| anyhow!("{}: bad index in row {k}", path.display()))?;
        if index != k {
            bail!("{}: expected index {k}, found {index}", path.display());
        }
        let value = record.get(1).unwrap_or("").parse().map_err(|_| anyhow!("{}: bad value in row {k}", path.display()))?;
        values.push(value);
    }
    Ok(values)
}

/// Binary graymap of `values` laid out row-major as `height × width`.
///
/// Values are standardized and `[−3σ, 3σ]` is mapped onto `[0, 255]`; a
/// constant attribution renders as uniform 128.
pub fn render_pgm(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if height * width != values.len() {
        bail!("attribution has {} values but the image is {height}x{width} = {}", values.len(), height * width);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| {
        if std <= 1e-12 * mean.abs().max(1.0) {
            128
        } else {
            let z = ((v - mean) / std).clamp(-3.0, 3.0);
            ((z + 3.0) / 6.0 * 255.0).round() as u8
        }
    }));
    Ok(out)
}

/// `(width, height, pixels)` of a binary graymap with maximum value 255.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated graymap header");
        }
        fields.push(std::str::from_utf8(&bytes[start..pos])?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        bail!("not a binary graymap with maxval 255");
    }
    let width: usize = fields[1].parse()?;
    let height: usize = fields[2].parse()?;
    let pixels = bytes.get(pos + 1..).unwrap_or(&[]).to_vec();
    if pixels.len() != width * height {
        bail!("graymap has {} pixels, header says {}", pixels.len(), width * height);
    }
    Ok((width, height, pixels))
}
