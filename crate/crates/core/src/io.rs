//! Reading and writing the delimited-text and TOML file formats.
//!
//! Everything on disk is `f64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::Configuration;
use crate::measurements::RssiMatrix;
use crate::pathloss::{CalibrationTable, PathlossParams};
use crate::simulator::{scenario_preset, DeviceContext, EmpiricalRssiDataset, RssiBackend, ScenarioSpec};

/// Comment prefix of the per-device detected attenuation row in RSSI files.
const DETECTED_TAG: &str = "# detected_attenuation_db";

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path_str(path),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path_str(path),
        line,
        msg: msg.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

/// Records of a delimited file as `(line, fields)`, optionally checking the
/// header names.
fn read_records(path: &Path, header: Option<&[&str]>) -> Result<Vec<(usize, Vec<String>)>> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header.is_some())
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    if let Some(expected) = header {
        let got = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
        let got: Vec<&str> = got.iter().collect();
        if got != expected {
            return Err(parse_err(
                path,
                1,
                format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
            ));
        }
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if header.is_some() && rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn number(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("{what}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("{what}: `{field}` is not finite")));
    }
    Ok(v)
}

fn expect_fields(path: &Path, line: usize, fields: &[String], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(parse_err(path, line, format!("expected {n} fields, got {}", fields.len())));
    }
    Ok(())
}

fn two_columns(path: &Path, header: [&str; 2]) -> Result<Vec<(f64, f64)>> {
    read_records(path, Some(&header))?
        .into_iter()
        .map(|(line, f)| {
            expect_fields(path, line, &f, 2)?;
            Ok((number(path, line, &f[0], header[0])?, number(path, line, &f[1], header[1])?))
        })
        .collect()
}

/// `distance_m,rssi_dbm` samples for fitting or the empirical backend.
pub fn read_samples(path: &Path) -> Result<Vec<(f64, f64)>> {
    two_columns(path, ["distance_m", "rssi_dbm"])
}

pub fn read_empirical_dataset(path: &Path) -> Result<EmpiricalRssiDataset<f64>> {
    EmpiricalRssiDataset::from_samples(&read_samples(path)?)
}

/// `device_model,offset_db` with a header row.
pub fn read_calibration(path: &Path) -> Result<CalibrationTable<f64>> {
    let mut table = CalibrationTable::new();
    for (line, f) in read_records(path, Some(&["device_model", "offset_db"]))? {
        expect_fields(path, line, &f, 2)?;
        table.insert(f[0].clone(), number(path, line, &f[1], "offset_db")?)?;
    }
    Ok(table)
}

pub fn write_calibration(path: &Path, table: &CalibrationTable<f64>) -> Result<()> {
    let mut s = String::from("device_model,offset_db\n");
    for (m, v) in table.iter() {
        let _ = writeln!(s, "{m},{v}");
    }
    write_text(path, &s)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsBlock {
    p0_dbm: f64,
    #[serde(default = "one")]
    d0_m: f64,
    eta: f64,
    sigma_db: f64,
}

fn one() -> f64 {
    1.0
}

impl ParamsBlock {
    fn build(&self) -> Result<PathlossParams<f64>> {
        PathlossParams::new(self.p0_dbm, self.d0_m, self.eta, self.sigma_db)
    }
}

/// Named `[block]` tables of `p0_dbm`, `d0_m`, `eta`, `sigma_db`.
pub fn parse_params_toml(path: &Path, text: &str) -> Result<BTreeMap<String, PathlossParams<f64>>> {
    let blocks: BTreeMap<String, ParamsBlock> =
        toml::from_str(text).map_err(|e| parse_err(path, toml_line(text, e.span()), e.message().to_string()))?;
    blocks
        .into_iter()
        .map(|(k, b)| b.build().map(|p| (k, p)))
        .collect()
}

pub fn read_params_file(path: &Path) -> Result<BTreeMap<String, PathlossParams<f64>>> {
    parse_params_toml(path, &read_text(path)?)
}

pub fn params_toml(blocks: &BTreeMap<String, PathlossParams<f64>>) -> String {
    let mut s = String::new();
    for (name, p) in blocks {
        let _ = writeln!(
            s,
            "[{name}]\np0_dbm = {:?}\nd0_m = {:?}\neta = {:?}\nsigma_db = {:?}\n",
            p.p0_dbm, p.d0_m, p.eta, p.sigma_db
        );
    }
    s
}

fn toml_line(text: &str, span: Option<std::ops::Range<usize>>) -> usize {
    span.map(|r| text[..r.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0)
}

/// Resolves a built-in environment name, or a parameter file with an
/// optional `#block` suffix (the block may be omitted when the file has one).
pub fn resolve_params(spec: &str) -> Result<PathlossParams<f64>> {
    if let Some(p) = PathlossParams::named(spec) {
        return Ok(p);
    }
    let (file, block) = match spec.rsplit_once('#') {
        Some((f, b)) => (f, Some(b)),
        None => (spec, None),
    };
    let path = Path::new(file);
    let blocks = read_params_file(path)?;
    match block {
        Some(b) => blocks
            .get(b)
            .copied()
            .ok_or_else(|| parse_err(path, 0, format!("no parameter block `{b}`"))),
        None if blocks.len() == 1 => Ok(*blocks.values().next().unwrap()),
        None => Err(parse_err(
            path,
            0,
            format!(
                "file has {} blocks; select one with `{file}#<name>` ({})",
                blocks.len(),
                blocks.keys().cloned().collect::<Vec<_>>().join(", ")
            ),
        )),
    }
}

/// Square matrix, empty cell = missing, row = receiver.
pub fn read_rssi(path: &Path) -> Result<RssiMatrix<f64>> {
    let records = read_records(path, None)?;
    let mut detected: Option<(usize, Vec<f64>)> = None;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (line, f) in records {
        if f[0].starts_with(DETECTED_TAG) {
            let vals = f[1..]
                .iter()
                .map(|v| number(path, line, v, "detected attenuation"))
                .collect::<Result<Vec<_>>>()?;
            detected = Some((line, vals));
            continue;
        }
        if f[0].starts_with('#') {
            continue;
        }
        let row = f
            .iter()
            .map(|c| if c.is_empty() { Ok(None) } else { number(path, line, c, "rssi").map(Some) })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
        lines.push(line);
    }
    let n = rows.len();
    for (row, &line) in rows.iter().zip(&lines) {
        if row.len() != n {
            return Err(parse_err(path, line, format!("expected {n} cells for a {n}x{n} matrix, got {}", row.len())));
        }
    }
    let mut m = RssiMatrix::from_rows(rows)?;
    if let Some((line, vals)) = detected {
        if vals.len() != n {
            return Err(parse_err(path, line, format!("expected {n} attenuation values, got {}", vals.len())));
        }
        for (i, v) in vals.into_iter().enumerate() {
            m.set_detected_attenuation(i, v);
        }
    }
    Ok(m)
}

pub fn rssi_csv(m: &RssiMatrix<f64>) -> String {
    let n = m.n();
    let mut s = String::new();
    if m.detected_attenuation_db().iter().any(|&a| a != 0.0) {
        s.push_str(DETECTED_TAG);
        for a in m.detected_attenuation_db() {
            let _ = write!(s, ",{a:?}");
        }
        s.push('\n');
    }
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| m.get(i, j).map(|v| format!("{v:?}")).unwrap_or_default()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Positions with their ids, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthFile {
    pub ids: Vec<String>,
    pub positions: Configuration<f64>,
}

/// `id,x_m,y_m` with a header row.
pub fn read_truth(path: &Path) -> Result<TruthFile> {
    let mut ids = Vec::new();
    let mut xy = Vec::new();
    for (line, f) in read_records(path, Some(&["id", "x_m", "y_m"]))? {
        expect_fields(path, line, &f, 3)?;
        if ids.contains(&f[0]) {
            return Err(parse_err(path, line, format!("duplicate id `{}`", f[0])));
        }
        ids.push(f[0].clone());
        xy.push((number(path, line, &f[1], "x_m")?, number(path, line, &f[2], "y_m")?));
    }
    Ok(TruthFile {
        ids,
        positions: Configuration::from_xy(&xy)?,
    })
}

pub fn truth_csv(positions: &Configuration<f64>) -> String {
    let mut s = String::from("id,x_m,y_m\n");
    for (k, p) in positions.points().iter().enumerate() {
        let _ = writeln!(s, "{k},{:?},{:?}", p.x, p.y);
    }
    s
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ParamsRef {
    Named(String),
    Inline(ParamsBlock),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
enum ContextEntry {
    OpenAir,
    Pocket {
        #[serde(default = "pocket_db")]
        attenuation_db: f64,
        #[serde(default)]
        detected: bool,
    },
}

fn pocket_db() -> f64 {
    crate::simulator::POCKET_ATTENUATION_DB
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    /// Preset the remaining keys override.
    preset: Option<String>,
    name: Option<String>,
    n_devices: Option<usize>,
    area: Option<[f64; 2]>,
    params: Option<ParamsRef>,
    /// `distance_m,rssi_dbm` file; switches to the empirical backend.
    empirical: Option<PathBuf>,
    miss_rate: Option<f64>,
    max_range_m: Option<f64>,
    min_sample_distance_m: Option<f64>,
    contexts: Option<Vec<ContextEntry>>,
    seed: Option<u64>,
}

/// Scenario TOML; relative paths resolve against the file's directory.
pub fn read_scenario(path: &Path) -> Result<ScenarioSpec<f64>> {
    let text = read_text(path)?;
    let file: ScenarioFile =
        toml::from_str(&text).map_err(|e| parse_err(path, toml_line(&text, e.span()), e.message().to_string()))?;
    let mut spec = match &file.preset {
        Some(p) => scenario_preset(p)?,
        None => {
            let mut s = scenario_preset("table")?;
            s.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            s
        }
    };
    if let Some(v) = file.name {
        spec.name = v;
    }
    if let Some(v) = file.n_devices {
        spec.n_devices = v;
        if spec.contexts.len() != v {
            spec.contexts.clear();
        }
    }
    if let Some([w, h]) = file.area {
        spec.area = (w, h);
    }
    if let Some(p) = file.params {
        let params = match p {
            ParamsRef::Named(n) => resolve_params(&n)?,
            ParamsRef::Inline(b) => b.build()?,
        };
        spec.params = params;
        spec.backend = RssiBackend::Parametric(params);
    }
    if let Some(rel) = file.empirical {
        let full = path.parent().map(|d| d.join(&rel)).unwrap_or(rel);
        spec.backend = RssiBackend::Empirical(read_empirical_dataset(&full)?);
    }
    if let Some(v) = file.miss_rate {
        spec.miss_rate = v;
    }
    if let Some(v) = file.max_range_m {
        spec.max_range_m = v;
    }
    if let Some(v) = file.min_sample_distance_m {
        spec.min_sample_distance_m = v;
    }
    if let Some(cs) = file.contexts {
        spec.contexts = cs
            .into_iter()
            .map(|c| match c {
                ContextEntry::OpenAir => DeviceContext::OpenAir,
                ContextEntry::Pocket { attenuation_db, detected } => DeviceContext::Pocket { attenuation_db, detected },
            })
            .collect();
    }
    if let Some(v) = file.seed {
        spec.seed = v;
    }
    spec.validate()?;
    Ok(spec)
}

/// Preset name or scenario file path.
pub fn resolve_scenario(spec: &str) -> Result<ScenarioSpec<f64>> {
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e == "toml") || path.is_file() {
        read_scenario(path)
    } else {
        scenario_preset(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str, body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        (dir, p)
    }

    #[test]
    fn rssi_round_trip_with_missing_and_metadata() {
        let mut m = RssiMatrix::from_rows(vec![
            vec![None, Some(-60.5), None],
            vec![Some(-61.0), None, Some(-80.25)],
            vec![None, None, None],
        ])
        .unwrap();
        m.set_detected_attenuation(2, 20.0);
        let (_d, p) = tmp("r.csv", &rssi_csv(&m));
        assert_eq!(read_rssi(&p).unwrap(), m);
    }

    #[test]
    fn rssi_errors_carry_line() {
        let (_d, p) = tmp("r.csv", ",-60\n-61,\n-70,x\n");
        match read_rssi(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let (_d, p) = tmp("r.csv", ",-60,\n-61,\n");
        assert!(matches!(read_rssi(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn params_blocks() {
        let text = params_toml(&BTreeMap::from([
            ("indoors".to_string(), PathlossParams::indoors()),
            ("train".to_string(), PathlossParams::train()),
        ]));
        let (_d, p) = tmp("p.toml", &text);
        let blocks = read_params_file(&p).unwrap();
        assert_eq!(blocks["train"], PathlossParams::train());
        let sel = format!("{}#indoors", p.display());
        assert_eq!(resolve_params(&sel).unwrap(), PathlossParams::indoors());
        assert!(resolve_params(&p.display().to_string()).is_err());
        assert_eq!(resolve_params("outdoors").unwrap(), PathlossParams::outdoors());
        let (_d, bad) = tmp("b.toml", "[x]\np0_dbm = -60\neta = \"two\"\nsigma_db = 1\n");
        assert!(matches!(read_params_file(&bad), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn calibration_and_samples() {
        let (_d, p) = tmp("c.csv", "device_model,offset_db\npixel,1.5\niphone,-2\n");
        let t = read_calibration(&p).unwrap();
        assert_eq!(t.offset("iphone"), -2.0);
        let (_d, p) = tmp("c.csv", "pixel,1.5\n");
        assert!(read_calibration(&p).is_err());
        let (_d, p) = tmp("s.csv", "distance_m,rssi_dbm\n0.5,-50\n0.5,-52\n1,-60\n");
        assert_eq!(read_samples(&p).unwrap().len(), 3);
        assert_eq!(read_empirical_dataset(&p).unwrap().bins().len(), 2);
    }

    #[test]
    fn truth_round_trip() {
        let c = Configuration::<f64>::from_xy(&[(0.0, 1.5), (2.25, -3.0)]).unwrap();
        let (_d, p) = tmp("t.csv", &truth_csv(&c));
        let t = read_truth(&p).unwrap();
        assert_eq!(t.positions, c);
        assert_eq!(t.ids, ["0", "1"]);
        let (_d, p) = tmp("t.csv", "id,x_m,y_m\na,0,0\na,1,1\n");
        assert!(matches!(read_truth(&p), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn scenario_file_overrides_preset() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("emp.csv"), "distance_m,rssi_dbm\n0.5,-50\n1,-60\n").unwrap();
        let p = dir.path().join("s.toml");
        fs::write(
            &p,
            "preset = \"table\"\nn_devices = 3\nmiss_rate = 0.0\nempirical = \"emp.csv\"\n\
             params = \"train\"\n\n[[contexts]]\nkind = \"open_air\"\n\n[[contexts]]\nkind = \"pocket\"\ndetected = true\n\n\
             [[contexts]]\nkind = \"pocket\"\nattenuation_db = 10.0\n",
        )
        .unwrap();
        let s = read_scenario(&p).unwrap();
        assert_eq!(s.n_devices, 3);
        assert_eq!(s.params, PathlossParams::train());
        assert!(matches!(s.backend, RssiBackend::Empirical(_)));
        assert_eq!(s.contexts[1], DeviceContext::Pocket { attenuation_db: 20.0, detected: true });
        assert_eq!(resolve_scenario("dense").unwrap().n_devices, 50);
        assert!(resolve_scenario("nowhere").is_err());
    }
}
