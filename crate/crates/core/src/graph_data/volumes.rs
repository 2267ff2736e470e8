use std::collections::BTreeMap;
use std::path::Path;

use super::{data_lines, parse_err, read_text};
use crate::error::{Error, Result};

/// Irregularly sampled tumor volumes starting at day 0.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSeries {
    times: Vec<f64>,
    volumes: Vec<f64>,
}

impl VolumeSeries {
    pub fn new(times: Vec<f64>, volumes: Vec<f64>) -> Result<Self> {
        if times.len() != volumes.len() {
            return Err(Error::Data(format!(
                "{} times for {} volumes",
                times.len(),
                volumes.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::Data(
                "a volume series needs at least 2 measurements".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::Data(format!(
                "volume series starts at day {} instead of day 0",
                times[0]
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Data(
                "volume times must be strictly increasing".into(),
            ));
        }
        if volumes.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Data("volumes must be positive".into()));
        }
        Ok(VolumeSeries { times, volumes })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> f64 {
        self.volumes[0]
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Multiplies every volume by `c` (used for sentinel poisoning and scale tests).
    pub fn scaled(&self, c: f64) -> Result<VolumeSeries> {
        VolumeSeries::new(
            self.times.clone(),
            self.volumes.iter().map(|v| v * c).collect(),
        )
    }
}

/// `(tumor model, canonical treatment)` identifying one experiment.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct ExperimentKey {
    pub model_id: String,
    pub treatment: String,
}

impl ExperimentKey {
    pub fn new(model_id: &str, treatment: &str) -> Result<Self> {
        Ok(ExperimentKey {
            model_id: model_id.to_string(),
            treatment: canonical_treatment(treatment)?,
        })
    }

    pub fn drugs(&self) -> Vec<&str> {
        self.treatment.split('+').collect()
    }
}

impl std::fmt::Display for ExperimentKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.model_id, self.treatment)
    }
}

/// Sorted, de-duplicated `+`-join of the drug ids in `treatment`.
pub fn canonical_treatment(treatment: &str) -> Result<String> {
    let mut drugs: Vec<&str> = treatment.split('+').map(str::trim).collect();
    if drugs.iter().any(|d| d.is_empty()) {
        return Err(Error::Data(format!("malformed treatment `{treatment}`")));
    }
    drugs.sort_unstable();
    drugs.dedup();
    Ok(drugs.join("+"))
}

pub type VolumeTable = BTreeMap<ExperimentKey, VolumeSeries>;

pub fn parse_volumes(text: &str, source: &str) -> Result<VolumeTable> {
    let mut lines = data_lines(text);
    let Some((header_no, header)) = lines.next() else {
        return Ok(BTreeMap::new());
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["model_id", "treatment", "day", "volume_mm3"] {
        return Err(parse_err(
            source,
            header_no,
            "header must be `model_id,treatment,day,volume_mm3`",
        ));
    }
    let mut raw: BTreeMap<ExperimentKey, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for (line_no, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(parse_err(
                source,
                line_no,
                format!("expected 4 fields, found {}", f.len()),
            ));
        }
        if f[0].is_empty() {
            return Err(parse_err(source, line_no, "empty model id"));
        }
        let key = ExperimentKey::new(f[0], f[1])
            .map_err(|e| parse_err(source, line_no, e.to_string()))?;
        let day: f64 = f[2]
            .parse()
            .map_err(|_| parse_err(source, line_no, format!("unparsable day `{}`", f[2])))?;
        if !(day.is_finite() && day >= 0.0) {
            return Err(parse_err(
                source,
                line_no,
                format!("day {day} must be nonnegative"),
            ));
        }
        let vol: f64 = f[3]
            .parse()
            .map_err(|_| parse_err(source, line_no, format!("unparsable volume `{}`", f[3])))?;
        if !(vol.is_finite() && vol > 0.0) {
            return Err(parse_err(
                source,
                line_no,
                format!("nonpositive volume {vol}"),
            ));
        }
        // days are nonnegative, so their bit patterns sort like the values
        let series = raw.entry(key.clone()).or_default();
        if series.insert(day.to_bits(), (day, vol, line_no)).is_some() {
            return Err(parse_err(
                source,
                line_no,
                format!("duplicate row for {key} at day {day}"),
            ));
        }
    }
    let mut out = BTreeMap::new();
    for (key, points) in raw {
        let first_line = points.values().map(|p| p.2).min().unwrap_or(0);
        let (times, vols): (Vec<f64>, Vec<f64>) = points.values().map(|p| (p.0, p.1)).unzip();
        let series = VolumeSeries::new(times, vols)
            .map_err(|e| parse_err(source, first_line, format!("series {key}: {e}")))?;
        out.insert(key, series);
    }
    Ok(out)
}

pub fn load_volumes(path: &Path) -> Result<VolumeTable> {
    let text = read_text(path)?;
    parse_volumes(&text, &path.display().to_string())
}

pub fn volumes_to_csv<'a>(
    series: impl IntoIterator<Item = (&'a ExperimentKey, &'a VolumeSeries)>,
) -> String {
    let mut out = String::from("model_id,treatment,day,volume_mm3\n");
    for (k, s) in series {
        for (t, v) in s.times().iter().zip(s.volumes()) {
            out.push_str(&format!("{},{},{},{}\n", k.model_id, k.treatment, t, v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "model_id,treatment,day,volume_mm3\n";

    #[test]
    fn rows_are_sorted_by_day() {
        let t = parse_volumes(
            &format!("{HEADER}M1,d1,5,150\nM1,d1,0,100\nM1,d1,2,120\n"),
            "v",
        )
        .unwrap();
        let s = &t[&ExperimentKey::new("M1", "d1").unwrap()];
        assert_eq!(s.times(), &[0.0, 2.0, 5.0]);
        assert_eq!(s.volumes(), &[100.0, 120.0, 150.0]);
    }

    #[test]
    fn combination_keys_are_canonical() {
        assert_eq!(
            canonical_treatment("drugB+drugA").unwrap(),
            canonical_treatment("drugA+drugB").unwrap()
        );
        assert!(canonical_treatment("a++b").is_err());
    }

    #[test]
    fn duplicate_and_nonpositive_rows() {
        let dup = parse_volumes(&format!("{HEADER}M,d,0,1\nM,d,0,2\n"), "v").unwrap_err();
        assert!(matches!(dup, Error::Parse { line: 3, .. }));
        let neg = parse_volumes(&format!("{HEADER}M,d,0,1\nM,d,2,0\n"), "v").unwrap_err();
        assert!(matches!(neg, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn series_must_start_at_day_zero() {
        assert!(parse_volumes(&format!("{HEADER}M,d,1,1\nM,d,2,2\n"), "v").is_err());
        assert!(VolumeSeries::new(vec![0.0], vec![1.0]).is_err());
        assert!(VolumeSeries::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }
}
