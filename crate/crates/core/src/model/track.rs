use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{interp_clamped, nearest_index};

/// A racing line sampled on a uniform arclength grid.
///
/// A loaded track file is laid out as `pit-out | lap | pit-in`; the lap spans
/// `[lap_start, lap_start + lap_length]`. A stint grid (see
/// [`build_stint_grid`]) uses the same type with `n_laps` set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackData {
    pub s_grid: Vec<f64>,
    pub kappa: Vec<f64>,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub pit_mask: Vec<bool>,
    pub lap_length: f64,
    pub pit_out_length: f64,
    pub pit_in_length: f64,
    pub lap_start: f64,
    pub ds: f64,
    pub n_laps: Option<usize>,
}

impl TrackData {
    pub fn len(&self) -> usize {
        self.s_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_grid.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.s_grid[self.len() - 1] - self.s_grid[0]
    }

    /// Per-interval steps (all equal to `ds` up to rounding).
    pub fn steps(&self) -> Vec<f64> {
        vec![self.ds; self.len().saturating_sub(1)]
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.len();
        if n < 2 {
            return Err(Error::Validation("track needs at least two samples".into()));
        }
        if [self.kappa.len(), self.theta.len(), self.phi.len(), self.pit_mask.len()]
            .iter()
            .any(|&m| m != n)
        {
            return Err(Error::Validation("track columns differ in length".into()));
        }
        if !(self.lap_length > 0.0) {
            return Err(Error::Validation("lap length must be positive".into()));
        }
        for k in 0..n - 1 {
            let h = self.s_grid[k + 1] - self.s_grid[k];
            if ((h - self.ds) / self.ds).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "grid spacing not uniform at sample {k}"
                )));
            }
        }
        if self
            .kappa
            .iter()
            .chain(&self.theta)
            .chain(&self.phi)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Validation("non-finite track profile".into()));
        }
        // pit samples: a prefix and a suffix only
        let first_off = self.pit_mask.iter().position(|&p| !p).unwrap_or(n);
        let last_off = self.pit_mask.iter().rposition(|&p| !p).map_or(0, |i| i + 1);
        if self.pit_mask[first_off..last_off].iter().any(|&p| p) {
            return Err(Error::Validation(
                "pit samples must form a prefix and a suffix".into(),
            ));
        }
        Ok(())
    }

    /// Profile value at arclength `s` inside the file layout.
    fn sample(&self, s: f64) -> (f64, f64, f64) {
        (
            interp_clamped(&self.s_grid, &self.kappa, s),
            interp_clamped(&self.s_grid, &self.theta, s),
            interp_clamped(&self.s_grid, &self.phi, s),
        )
    }
}

struct RawTrack {
    s: Vec<f64>,
    kappa: Vec<f64>,
    theta: Vec<f64>,
    phi: Vec<f64>,
    pit: Vec<bool>,
}

fn parse_track<R: Read>(reader: R, path: &Path) -> Result<RawTrack> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    let expected = ["s", "kappa", "theta", "phi", "pit"];
    let cols: Vec<usize> = expected
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| perr(1, format!("missing column `{name}`")))
        })
        .collect::<Result<_>>()?;

    let mut raw = RawTrack {
        s: Vec::new(),
        kappa: Vec::new(),
        theta: Vec::new(),
        phi: Vec::new(),
        pit: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            perr(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| -> Result<f64> {
            let txt = rec.get(cols[k]).unwrap_or("");
            let v: f64 = txt
                .parse()
                .map_err(|_| perr(line, format!("bad `{}` value `{txt}`", expected[k])))?;
            if !v.is_finite() {
                return Err(perr(line, format!("non-finite `{}`", expected[k])));
            }
            Ok(v)
        };
        raw.s.push(field(0)?);
        raw.kappa.push(field(1)?);
        raw.theta.push(field(2)?);
        raw.phi.push(field(3)?);
        let pit = field(4)?;
        if pit != 0.0 && pit != 1.0 {
            return Err(perr(line, format!("pit flag must be 0 or 1, got {pit}")));
        }
        raw.pit.push(pit == 1.0);
    }
    if raw.s.len() < 2 {
        return Err(perr(1, "track needs at least two rows".into()));
    }
    Ok(raw)
}

fn n_intervals(length: f64, ds: f64) -> usize {
    // tolerate rounding so that an already uniform grid maps onto itself
    ((length / ds) - 1e-9).ceil().max(1.0) as usize
}

/// Reads a track CSV and resamples it onto a uniform grid.
///
/// The grid spacing is `L / ⌈L / target_ds⌉`, the largest spacing not above
/// `target_ds` that divides the file length evenly.
pub fn load_track(path: &Path, target_ds: f64) -> Result<TrackData> {
    if !(target_ds > 0.0) || !target_ds.is_finite() {
        return Err(Error::Argument(format!(
            "target_ds must be positive, got {target_ds}"
        )));
    }
    let file = std::fs::File::open(path)?;
    let raw = parse_track(file, path)?;
    resample(raw, target_ds)
}

/// Same as [`load_track`] on an in-memory CSV.
pub fn parse_track_str(text: &str, target_ds: f64) -> Result<TrackData> {
    if !(target_ds > 0.0) || !target_ds.is_finite() {
        return Err(Error::Argument(format!(
            "target_ds must be positive, got {target_ds}"
        )));
    }
    let raw = parse_track(text.as_bytes(), Path::new("<memory>"))?;
    resample(raw, target_ds)
}

fn resample(raw: RawTrack, target_ds: f64) -> Result<TrackData> {
    if let Some(k) = raw.s.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Validation(format!(
            "arclength not strictly increasing at data row {}",
            k + 2
        )));
    }
    let n_rows = raw.s.len();
    let s0 = raw.s[0];
    let total = raw.s[n_rows - 1] - s0;
    let first_lap = raw.pit.iter().position(|&p| !p);
    let last_lap = raw.pit.iter().rposition(|&p| !p);
    let (a, b) = match (first_lap, last_lap) {
        (Some(a), Some(b)) if b > a => (a, b),
        _ => {
            return Err(Error::Validation(
                "track needs at least two non-pit rows".into(),
            ))
        }
    };
    if raw.pit[a..=b].iter().any(|&p| p) {
        return Err(Error::Validation(
            "pit rows must sit before and after the lap only".into(),
        ));
    }
    let lap_start = raw.s[a];
    let lap_length = raw.s[b] - raw.s[a];
    let pit_out_length = raw.s[a] - s0;
    let pit_in_length = raw.s[n_rows - 1] - raw.s[b];

    let n = n_intervals(total, target_ds);
    let h = total / n as f64;
    let s_grid: Vec<f64> = (0..=n).map(|i| s0 + i as f64 * h).collect();
    let take = |col: &[f64]| -> Vec<f64> {
        s_grid
            .iter()
            .map(|&s| interp_clamped(&raw.s, col, s))
            .collect()
    };
    let pit_mask = s_grid
        .iter()
        .map(|&s| raw.pit[nearest_index(&raw.s, s)])
        .collect();
    let t = TrackData {
        kappa: take(&raw.kappa),
        theta: take(&raw.theta),
        phi: take(&raw.phi),
        s_grid,
        pit_mask,
        lap_length,
        pit_out_length,
        pit_in_length,
        lap_start,
        ds: h,
        n_laps: None,
    };
    t.check_invariants()?;
    Ok(t)
}

/// Lays out `pit-out + n_laps · lap + pit-in` on a fresh uniform grid.
///
/// The spacing is `S / ⌈S / ds⌉` with `ds` the track spacing. The first
/// `round(pit_out / h)` and last `round(pit_in / h)` nodes form the pit mask.
pub fn build_stint_grid(track: &TrackData, n_laps: usize) -> Result<TrackData> {
    if n_laps < 1 {
        return Err(Error::Argument("a stint needs at least one lap".into()));
    }
    let po = track.pit_out_length;
    let pi = track.pit_in_length;
    let lap = track.lap_length;
    let laps_len = n_laps as f64 * lap;
    let total = po + laps_len + pi;
    let n = n_intervals(total, track.ds);
    let h = total / n as f64;
    let s0 = track.s_grid[0];
    let lap_end = track.lap_start + lap;

    let mut out = TrackData {
        s_grid: Vec::with_capacity(n + 1),
        kappa: Vec::with_capacity(n + 1),
        theta: Vec::with_capacity(n + 1),
        phi: Vec::with_capacity(n + 1),
        pit_mask: Vec::with_capacity(n + 1),
        lap_length: lap,
        pit_out_length: po,
        pit_in_length: pi,
        lap_start: po,
        ds: h,
        n_laps: Some(n_laps),
    };
    let n_out = (po / h).round() as usize;
    let n_in = (pi / h).round() as usize;
    for i in 0..=n {
        let sigma = i as f64 * h;
        let s_file = if sigma < po {
            s0 + sigma
        } else if sigma <= po + laps_len {
            let within = (sigma - po).rem_euclid(lap);
            // the final lap ends exactly on the seam; keep its end profile
            if sigma - po >= laps_len - 1e-9 * lap {
                lap_end
            } else {
                track.lap_start + within
            }
        } else {
            lap_end + (sigma - po - laps_len)
        };
        let (k, t, p) = track.sample(s_file);
        out.s_grid.push(sigma);
        out.kappa.push(k);
        out.theta.push(t);
        out.phi.push(p);
        out.pit_mask.push(i < n_out || i + n_in > n);
    }
    out.check_invariants()?;
    Ok(out)
}
