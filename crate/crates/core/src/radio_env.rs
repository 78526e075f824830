//! Radio environment: per-cell RSRP samples binned into a normalized grid.
//!
//! Samples come either from [`generate_synthetic_samples`] (a macro-cell
//! propagation model over a hexagonal 7-site layout) or from a CSV file via
//! [`import_samples`]. [`RsrpGrid::build`] averages them per 50 m bin and maps
//! every value to `[0, 1]` with one global linear transform, so the strongest
//! cell in a bin is the same before and after normalization.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::substream;
use crate::{Error, Result};

/// Cell index, `0 <= id < n_cells`. Cell `s * sectors + j` is sector `j` of site `s`.
pub type CellId = usize;

/// Rectangular service area `[0, x) × [0, y)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extents {
    pub x: f64,
    pub y: f64,
}

impl Extents {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Half-open containment: points on the far edges are outside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..self.x).contains(&x) && (0.0..self.y).contains(&y)
    }
}

impl Default for Extents {
    fn default() -> Self {
        Self::new(5000.0, 6000.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsrpSample {
    pub x: f64,
    pub y: f64,
    pub cell: CellId,
    pub rsrp_dbm: f64,
}

/// Site layout and propagation parameters for the synthetic map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLayout {
    pub extents: Extents,
    /// Site positions in meters.
    pub sites: Vec<(f64, f64)>,
    /// Boresight azimuth of each sector, degrees counter-clockwise from +x.
    pub sector_azimuths_deg: Vec<f64>,
    pub tx_power_dbm: f64,
    /// Path loss `intercept + slope * log10(d_km)`.
    pub pathloss_intercept_db: f64,
    pub pathloss_slope_db: f64,
    pub bs_height_m: f64,
    pub ue_altitude_m: f64,
    pub h_beamwidth_deg: f64,
    pub front_to_back_db: f64,
    pub v_beamwidth_deg: f64,
    pub v_sidelobe_db: f64,
    pub downtilt_deg: f64,
    pub shadow_sigma_db: f64,
}

impl Default for SyntheticLayout {
    fn default() -> Self {
        let extents = Extents::default();
        Self {
            sites: hex_sites(extents, 1500.0),
            extents,
            sector_azimuths_deg: vec![0.0, 120.0, 240.0],
            tx_power_dbm: 46.0,
            pathloss_intercept_db: 128.1,
            pathloss_slope_db: 37.6,
            bs_height_m: 25.0,
            ue_altitude_m: 50.0,
            h_beamwidth_deg: 65.0,
            front_to_back_db: 30.0,
            v_beamwidth_deg: 10.0,
            v_sidelobe_db: 20.0,
            downtilt_deg: 10.0,
            shadow_sigma_db: 6.0,
        }
    }
}

/// A center site plus a ring of six at `isd` meters, centered in the area.
pub fn hex_sites(extents: Extents, isd: f64) -> Vec<(f64, f64)> {
    let (cx, cy) = (extents.x / 2.0, extents.y / 2.0);
    std::iter::once((cx, cy))
        .chain((0..6).map(|j| {
            let a = PI / 6.0 + j as f64 * PI / 3.0;
            (cx + isd * a.cos(), cy + isd * a.sin())
        }))
        .collect()
}

fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

impl SyntheticLayout {
    pub fn n_cells(&self) -> usize {
        self.sites.len() * self.sector_azimuths_deg.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites.is_empty() {
            return Err(Error::Config("layout has no sites".into()));
        }
        if self.sector_azimuths_deg.is_empty() {
            return Err(Error::Config("layout has no sectors".into()));
        }
        let scalars = [
            self.extents.x,
            self.extents.y,
            self.tx_power_dbm,
            self.pathloss_intercept_db,
            self.pathloss_slope_db,
            self.bs_height_m,
            self.ue_altitude_m,
            self.h_beamwidth_deg,
            self.front_to_back_db,
            self.v_beamwidth_deg,
            self.v_sidelobe_db,
            self.downtilt_deg,
            self.shadow_sigma_db,
        ];
        let coords = self.sites.iter().flat_map(|&(x, y)| [x, y]);
        if !scalars
            .into_iter()
            .chain(coords)
            .chain(self.sector_azimuths_deg.iter().copied())
            .all(f64::is_finite)
        {
            return Err(Error::Config("layout parameters must be finite".into()));
        }
        if self.extents.x <= 0.0 || self.extents.y <= 0.0 {
            return Err(Error::Config("area extents must be positive".into()));
        }
        if self.h_beamwidth_deg <= 0.0 || self.v_beamwidth_deg <= 0.0 {
            return Err(Error::Config("beamwidths must be positive".into()));
        }
        if self.shadow_sigma_db < 0.0 {
            return Err(Error::Config("shadow-fading sigma must be nonnegative".into()));
        }
        Ok(())
    }

    /// Mean received power (no shadowing) from `cell` at ground position `(x, y)`.
    pub fn mean_rsrp_dbm(&self, x: f64, y: f64, cell: CellId) -> f64 {
        let sectors = self.sector_azimuths_deg.len();
        let (sx, sy) = self.sites[cell / sectors];
        let azimuth = self.sector_azimuths_deg[cell % sectors];

        let (dx, dy) = (x - sx, y - sy);
        let d2 = dx.hypot(dy);
        let dh = self.ue_altitude_m - self.bs_height_m;
        let d3_km = (d2.hypot(dh)).max(10.0) / 1000.0;
        let pathloss = self.pathloss_intercept_db + self.pathloss_slope_db * d3_km.log10();

        let bearing = dy.atan2(dx).to_degrees();
        let phi = wrap_deg(bearing - azimuth);
        let g_h = -(12.0 * (phi / self.h_beamwidth_deg).powi(2)).min(self.front_to_back_db);

        // Positive elevation means the drone is above the antenna; the beam points down.
        let elevation = dh.atan2(d2).to_degrees();
        let off_axis = elevation + self.downtilt_deg;
        let g_v = -(12.0 * (off_axis / self.v_beamwidth_deg).powi(2)).min(self.v_sidelobe_db);

        self.tx_power_dbm - pathloss + g_h + g_v
    }
}

/// Draws `samples_per_cell` samples for every cell at independent uniform positions.
///
/// Output is ordered by cell, then by draw. Deterministic given `seed`.
pub fn generate_synthetic_samples(
    layout: &SyntheticLayout,
    samples_per_cell: usize,
    seed: u64,
) -> Result<Vec<RsrpSample>> {
    layout.validate()?;
    if samples_per_cell == 0 {
        return Err(Error::Config("samples_per_cell must be at least 1".into()));
    }
    let mut rng = substream(seed, "samples", 0);
    let shadow = Normal::new(0.0, layout.shadow_sigma_db)
        .map_err(|e| Error::Config(format!("shadow fading: {e}")))?;
    let n_cells = layout.n_cells();
    let mut out = Vec::with_capacity(samples_per_cell * n_cells);
    for cell in 0..n_cells {
        for _ in 0..samples_per_cell {
            let x = rng.random::<f64>() * layout.extents.x;
            let y = rng.random::<f64>() * layout.extents.y;
            let rsrp_dbm = layout.mean_rsrp_dbm(x, y, cell) + shadow.sample(&mut rng);
            out.push(RsrpSample { x, y, cell, rsrp_dbm });
        }
    }
    Ok(out)
}

pub const SAMPLES_HEADER: [&str; 4] = ["x_m", "y_m", "cell_id", "rsrp_dbm"];

pub fn write_samples<W: Write>(samples: &[RsrpSample], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SAMPLES_HEADER)?;
    for s in samples {
        w.write_record([
            s.x.to_string(),
            s.y.to_string(),
            s.cell.to_string(),
            s.rsrp_dbm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a samples CSV (`x_m,y_m,cell_id,rsrp_dbm`), validating positions and cell ids.
pub fn import_samples<R: Read>(
    reader: R,
    extents: Extents,
    n_cells: usize,
) -> Result<Vec<RsrpSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if !headers.is_empty() && headers.iter().ne(SAMPLES_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", SAMPLES_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", record.len())));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("field {}: {e}", SAMPLES_HEADER[i])))
        };
        let (x, y, rsrp_dbm) = (num(0)?, num(1)?, num(3)?);
        let cell: CellId = record[2]
            .parse()
            .map_err(|e| parse_err(format!("field cell_id: {e}")))?;
        if !x.is_finite() || !y.is_finite() || !rsrp_dbm.is_finite() {
            return Err(parse_err("non-finite value".into()));
        }
        if !extents.contains(x, y) {
            return Err(Error::Validation(format!(
                "line {line}: position ({x}, {y}) outside the {}x{} m area",
                extents.x, extents.y
            )));
        }
        if cell >= n_cells {
            return Err(Error::Validation(format!(
                "line {line}: cell id {cell} out of range (n_cells = {n_cells})"
            )));
        }
        out.push(RsrpSample { x, y, cell, rsrp_dbm });
    }
    Ok(out)
}

/// How (bin, cell) pairs without samples get a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyBinFill {
    /// Minimum raw value observed anywhere in the grid.
    GlobalMin,
    /// Grow measured regions outward: each empty bin takes the mean of its
    /// already-filled 8-neighbors, one ring at a time.
    #[default]
    Neighbors,
}

/// Grid geometry used when binning samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub extents: Extents,
    pub bin_size: f64,
    pub n_cells: usize,
    pub fill: EmptyBinFill,
}

impl GridSpec {
    pub fn new(extents: Extents, bin_size: f64, n_cells: usize) -> Self {
        Self {
            extents,
            bin_size,
            n_cells,
            fill: EmptyBinFill::default(),
        }
    }

    pub fn with_fill(mut self, fill: EmptyBinFill) -> Self {
        self.fill = fill;
        self
    }

    pub fn bins(&self) -> (usize, usize) {
        (
            (self.extents.x / self.bin_size).ceil() as usize,
            (self.extents.y / self.bin_size).ceil() as usize,
        )
    }

    fn validate(&self) -> Result<()> {
        if !(self.bin_size.is_finite() && self.bin_size > 0.0) {
            return Err(Error::Config("bin_size must be positive".into()));
        }
        if !(self.extents.x > 0.0 && self.extents.y > 0.0)
            || !self.extents.x.is_finite()
            || !self.extents.y.is_finite()
        {
            return Err(Error::Config("area extents must be positive".into()));
        }
        if self.n_cells == 0 {
            return Err(Error::Config("n_cells must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sidecar metadata stored next to a grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub extent_x: f64,
    pub extent_y: f64,
    pub bin_size: f64,
    pub n_cells: usize,
    pub norm_min_dbm: f64,
    pub norm_max_dbm: f64,
}

/// Binned per-cell RSRP over the service area. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RsrpGrid {
    extents: Extents,
    bin_size: f64,
    bins_x: usize,
    bins_y: usize,
    n_cells: usize,
    raw: Vec<f64>,
    normalized: Vec<f64>,
    norm_min_dbm: f64,
    norm_max_dbm: f64,
}

impl RsrpGrid {
    /// Averages samples per (bin, cell), fills empty pairs, and normalizes globally.
    pub fn build(samples: &[RsrpSample], spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let (bins_x, bins_y) = spec.bins();
        let n = bins_x * bins_y * spec.n_cells;
        let mut sum = vec![0.0; n];
        let mut count = vec![0u32; n];
        for s in samples {
            if !spec.extents.contains(s.x, s.y) {
                return Err(Error::OutOfRange { x: s.x, y: s.y });
            }
            if s.cell >= spec.n_cells {
                return Err(Error::Validation(format!("cell id {} out of range", s.cell)));
            }
            let bx = (s.x / spec.bin_size) as usize;
            let by = (s.y / spec.bin_size) as usize;
            let idx = (by * bins_x + bx) * spec.n_cells + s.cell;
            sum[idx] += s.rsrp_dbm;
            count[idx] += 1;
        }
        let mut raw: Vec<Option<f64>> = sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| (c > 0).then(|| s / f64::from(c)))
            .collect();
        let global_min = raw.iter().flatten().copied().reduce(f64::min);
        let Some(global_min) = global_min else {
            return Err(Error::Validation("no samples to build a grid from".into()));
        };
        if spec.fill == EmptyBinFill::Neighbors {
            for cell in 0..spec.n_cells {
                fill_from_neighbors(&mut raw, bins_x, bins_y, spec.n_cells, cell);
            }
        }
        let raw: Vec<f64> = raw.into_iter().map(|v| v.unwrap_or(global_min)).collect();
        Self::from_raw(spec.extents, spec.bin_size, spec.n_cells, raw, None)
    }

    /// Assembles a grid from raw per-(bin, cell) dBm values laid out as
    /// `[(bin_y * bins_x + bin_x) * n_cells + cell]`. With `bounds = None` the
    /// normalization range is the global min/max of `raw`.
    pub fn from_raw(
        extents: Extents,
        bin_size: f64,
        n_cells: usize,
        raw: Vec<f64>,
        bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        let spec = GridSpec::new(extents, bin_size, n_cells);
        spec.validate()?;
        let (bins_x, bins_y) = spec.bins();
        if raw.len() != bins_x * bins_y * n_cells {
            return Err(Error::Validation(format!(
                "expected {} raw values, got {}",
                bins_x * bins_y * n_cells,
                raw.len()
            )));
        }
        if !raw.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("raw RSRP values must be finite".into()));
        }
        let (lo, hi) = match bounds {
            Some(b) => b,
            None => {
                let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    (lo, hi)
                } else {
                    (lo - 1.0, hi + 1.0)
                }
            }
        };
        if !(hi > lo) {
            return Err(Error::Validation(format!(
                "normalization bounds [{lo}, {hi}] are empty"
            )));
        }
        let span = hi - lo;
        let normalized = raw
            .iter()
            .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect();
        Ok(Self {
            extents,
            bin_size,
            bins_x,
            bins_y,
            n_cells,
            raw,
            normalized,
            norm_min_dbm: lo,
            norm_max_dbm: hi,
        })
    }

    pub fn extents(&self) -> Extents {
        self.extents
    }

    pub fn bin_size(&self) -> f64 {
        self.bin_size
    }

    pub fn bins(&self) -> (usize, usize) {
        (self.bins_x, self.bins_y)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn norm_bounds_dbm(&self) -> (f64, f64) {
        (self.norm_min_dbm, self.norm_max_dbm)
    }

    pub fn raw_values(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized_values(&self) -> &[f64] {
        &self.normalized
    }

    /// Bin containing `(x, y)`; bins are half-open `[i * bin, (i + 1) * bin)`.
    pub fn bin_of(&self, x: f64, y: f64) -> Result<(usize, usize)> {
        if !self.extents.contains(x, y) {
            return Err(Error::OutOfRange { x, y });
        }
        let bx = ((x / self.bin_size) as usize).min(self.bins_x - 1);
        let by = ((y / self.bin_size) as usize).min(self.bins_y - 1);
        Ok((bx, by))
    }

    fn offset(&self, bx: usize, by: usize) -> usize {
        assert!(bx < self.bins_x && by < self.bins_y, "bin ({bx}, {by}) out of range");
        (by * self.bins_x + bx) * self.n_cells
    }

    pub fn bin_normalized(&self, bx: usize, by: usize) -> &[f64] {
        let o = self.offset(bx, by);
        &self.normalized[o..o + self.n_cells]
    }

    pub fn bin_raw(&self, bx: usize, by: usize) -> &[f64] {
        let o = self.offset(bx, by);
        &self.raw[o..o + self.n_cells]
    }

    /// Normalized RSRP of `cell` at `(x, y)`.
    pub fn rsrp_at(&self, x: f64, y: f64, cell: CellId) -> Result<f64> {
        let (bx, by) = self.bin_of(x, y)?;
        self.check_cell(cell)?;
        Ok(self.bin_normalized(bx, by)[cell])
    }

    pub fn raw_at(&self, x: f64, y: f64, cell: CellId) -> Result<f64> {
        let (bx, by) = self.bin_of(x, y)?;
        self.check_cell(cell)?;
        Ok(self.bin_raw(bx, by)[cell])
    }

    fn check_cell(&self, cell: CellId) -> Result<()> {
        if cell >= self.n_cells {
            return Err(Error::Validation(format!(
                "cell id {cell} out of range (n_cells = {})",
                self.n_cells
            )));
        }
        Ok(())
    }

    /// The `k` strongest cells at `(x, y)`, strongest first, ties to the lower id.
    pub fn strongest_cells(&self, x: f64, y: f64, k: usize) -> Result<Vec<CellId>> {
        let (bx, by) = self.bin_of(x, y)?;
        self.strongest_in_bin(bx, by, k)
    }

    pub fn strongest_in_bin(&self, bx: usize, by: usize, k: usize) -> Result<Vec<CellId>> {
        if k == 0 || k > self.n_cells {
            return Err(Error::Config(format!(
                "k = {k} must lie in 1..={}",
                self.n_cells
            )));
        }
        let values = self.bin_normalized(bx, by);
        let mut order: Vec<CellId> = (0..self.n_cells).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        order.truncate(k);
        Ok(order)
    }

    /// Strongest cell per bin, computed on raw dBm.
    pub fn association_map(&self) -> Vec<((usize, usize), CellId)> {
        let mut out = Vec::with_capacity(self.bins_x * self.bins_y);
        for by in 0..self.bins_y {
            for bx in 0..self.bins_x {
                let raw = self.bin_raw(bx, by);
                let best = (0..self.n_cells)
                    .reduce(|a, b| if raw[b] > raw[a] { b } else { a })
                    .expect("n_cells > 0");
                out.push(((bx, by), best));
            }
        }
        out
    }

    /// Maps a normalized value back to dBm with the stored bounds.
    pub fn to_dbm(&self, normalized: f64) -> f64 {
        self.norm_min_dbm + normalized * (self.norm_max_dbm - self.norm_min_dbm)
    }

    pub fn meta(&self) -> GridMeta {
        GridMeta {
            extent_x: self.extents.x,
            extent_y: self.extents.y,
            bin_size: self.bin_size,
            n_cells: self.n_cells,
            norm_min_dbm: self.norm_min_dbm,
            norm_max_dbm: self.norm_max_dbm,
        }
    }

    /// Writes `bin_x,bin_y,cell_id,rsrp_dbm` rows with the raw bin means.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_x", "bin_y", "cell_id", "rsrp_dbm"])?;
        for by in 0..self.bins_y {
            for bx in 0..self.bins_x {
                for (cell, v) in self.bin_raw(bx, by).iter().enumerate() {
                    w.write_record([
                        bx.to_string(),
                        by.to_string(),
                        cell.to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a grid CSV plus its sidecar metadata. Every (bin, cell) pair must be present.
    pub fn read_csv<R: Read>(reader: R, meta: &GridMeta) -> Result<Self> {
        let extents = Extents::new(meta.extent_x, meta.extent_y);
        let spec = GridSpec::new(extents, meta.bin_size, meta.n_cells);
        spec.validate()?;
        let (bins_x, bins_y) = spec.bins();
        let mut raw = vec![f64::NAN; bins_x * bins_y * meta.n_cells];
        let mut rdr = csv::Reader::from_reader(reader);
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let parse_err = |message: String| Error::Parse { line, message };
            if record.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, found {}", record.len())));
            }
            let idx = |i: usize| -> Result<usize> {
                record[i].trim().parse().map_err(|e| parse_err(format!("{e}")))
            };
            let (bx, by, cell) = (idx(0)?, idx(1)?, idx(2)?);
            let v: f64 = record[3]
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("{e}")))?;
            if bx >= bins_x || by >= bins_y || cell >= meta.n_cells {
                return Err(Error::Validation(format!(
                    "line {line}: bin ({bx}, {by}) cell {cell} out of range"
                )));
            }
            raw[(by * bins_x + bx) * meta.n_cells + cell] = v;
        }
        if raw.iter().any(|v| v.is_nan()) {
            return Err(Error::Validation("grid file does not cover every (bin, cell)".into()));
        }
        Self::from_raw(
            extents,
            meta.bin_size,
            meta.n_cells,
            raw,
            Some((meta.norm_min_dbm, meta.norm_max_dbm)),
        )
    }

    pub fn write_association_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_x", "bin_y", "best_cell"])?;
        for ((bx, by), cell) in self.association_map() {
            w.write_record([bx.to_string(), by.to_string(), cell.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fill_from_neighbors(
    raw: &mut [Option<f64>],
    bins_x: usize,
    bins_y: usize,
    n_cells: usize,
    cell: usize,
) {
    let at = |bx: usize, by: usize| (by * bins_x + bx) * n_cells + cell;
    if (0..bins_x * bins_y).all(|b| raw[b * n_cells + cell].is_none()) {
        return;
    }
    loop {
        let mut updates = Vec::new();
        for by in 0..bins_y {
            for bx in 0..bins_x {
                if raw[at(bx, by)].is_some() {
                    continue;
                }
                let (mut sum, mut n) = (0.0, 0u32);
                for ny in by.saturating_sub(1)..=(by + 1).min(bins_y - 1) {
                    for nx in bx.saturating_sub(1)..=(bx + 1).min(bins_x - 1) {
                        if let Some(v) = raw[at(nx, ny)] {
                            sum += v;
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    updates.push((at(bx, by), sum / f64::from(n)));
                }
            }
        }
        if updates.is_empty() {
            break;
        }
        for (i, v) in updates {
            raw[i] = Some(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_bin_spec(n_cells: usize) -> GridSpec {
        GridSpec::new(Extents::new(50.0, 50.0), 50.0, n_cells)
    }

    fn grid_from_bins(values: &[&[f64]], bins_x: usize, bins_y: usize) -> RsrpGrid {
        let raw: Vec<f64> = values.iter().flat_map(|b| b.iter().copied()).collect();
        RsrpGrid::from_raw(
            Extents::new(50.0 * bins_x as f64, 50.0 * bins_y as f64),
            50.0,
            values[0].len(),
            raw,
            Some((0.0, 1.0)),
        )
        .unwrap()
    }

    #[test]
    fn full_scale_sample_count() {
        let layout = SyntheticLayout::default();
        assert_eq!(layout.n_cells(), 21);
        let samples = generate_synthetic_samples(&layout, 10_000, 1).unwrap();
        assert_eq!(samples.len(), 210_000);
    }

    #[test]
    fn single_cell_layout_yields_one_finite_sample() {
        let layout = SyntheticLayout {
            sites: vec![(100.0, 100.0)],
            sector_azimuths_deg: vec![0.0],
            ..SyntheticLayout::default()
        };
        let samples = generate_synthetic_samples(&layout, 1, 3).unwrap();
        assert_eq!(samples.len(), 1);
        assert!(samples[0].rsrp_dbm.is_finite());
    }

    #[test]
    fn generation_is_seeded() {
        let layout = SyntheticLayout::default();
        let a = generate_synthetic_samples(&layout, 50, 11).unwrap();
        let b = generate_synthetic_samples(&layout, 50, 11).unwrap();
        let c = generate_synthetic_samples(&layout, 50, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_sites_is_a_config_error() {
        let layout = SyntheticLayout {
            sites: vec![],
            ..SyntheticLayout::default()
        };
        assert!(matches!(
            generate_synthetic_samples(&layout, 10, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn import_parses_rows() {
        let csv = "x_m,y_m,cell_id,rsrp_dbm\n100.0,200.0,3,-75.2\n";
        let s = import_samples(csv.as_bytes(), Extents::default(), 21).unwrap();
        assert_eq!(
            s,
            vec![RsrpSample {
                x: 100.0,
                y: 200.0,
                cell: 3,
                rsrp_dbm: -75.2
            }]
        );
    }

    #[test]
    fn import_header_only_is_empty() {
        let s = import_samples("x_m,y_m,cell_id,rsrp_dbm\n".as_bytes(), Extents::default(), 21)
            .unwrap();
        assert!(s.is_empty());
        assert!(import_samples("".as_bytes(), Extents::default(), 21)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn import_rejects_out_of_range_cell() {
        let csv = "x_m,y_m,cell_id,rsrp_dbm\n1,1,0,-70\n100.0,200.0,21,-75.2\n";
        let err = import_samples(csv.as_bytes(), Extents::default(), 21).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("line 3")), "{err}");
    }

    #[test]
    fn import_rejects_positions_outside_area() {
        let csv = "x_m,y_m,cell_id,rsrp_dbm\n5000,10,0,-70\n";
        assert!(matches!(
            import_samples(csv.as_bytes(), Extents::default(), 21),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn import_names_line_of_malformed_row() {
        let csv = "x_m,y_m,cell_id,rsrp_dbm\n1,1,0,-70\n1,1,zero,-70\n";
        match import_samples(csv.as_bytes(), Extents::default(), 21) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bin_value_is_sample_mean() {
        let samples = [
            RsrpSample { x: 10.0, y: 10.0, cell: 0, rsrp_dbm: -70.0 },
            RsrpSample { x: 40.0, y: 20.0, cell: 0, rsrp_dbm: -80.0 },
        ];
        let grid = RsrpGrid::build(&samples, &one_bin_spec(1)).unwrap();
        assert_eq!(grid.raw_at(25.0, 25.0, 0).unwrap(), -75.0);
    }

    #[test]
    fn linear_normalization_midpoint() {
        let raw = vec![-100.0, -75.0, -50.0];
        let grid = RsrpGrid::from_raw(Extents::new(150.0, 50.0), 50.0, 1, raw, None).unwrap();
        assert_eq!(grid.norm_bounds_dbm(), (-100.0, -50.0));
        assert_eq!(grid.rsrp_at(75.0, 0.0, 0).unwrap(), 0.5);
        assert_eq!(grid.rsrp_at(0.0, 0.0, 0).unwrap(), 0.0);
        assert_eq!(grid.rsrp_at(149.0, 0.0, 0).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_range_maps_to_half() {
        let raw = vec![-70.0; 4];
        let grid = RsrpGrid::from_raw(Extents::new(100.0, 100.0), 50.0, 1, raw, None).unwrap();
        assert!(grid.normalized_values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn bin_lookup_floors() {
        let grid = RsrpGrid::from_raw(
            Extents::default(),
            50.0,
            1,
            (0..12_000).map(f64::from).collect(),
            None,
        )
        .unwrap();
        assert_eq!(grid.bin_of(125.0, 310.0).unwrap(), (2, 6));
        assert_eq!(grid.raw_at(125.0, 310.0, 0).unwrap(), (6 * 100 + 2) as f64);
    }

    #[test]
    fn far_edges_are_out_of_range() {
        let grid = RsrpGrid::from_raw(Extents::default(), 50.0, 1, vec![0.0; 12_000], None)
            .unwrap();
        assert!(matches!(grid.rsrp_at(5000.0, 10.0, 0), Err(Error::OutOfRange { .. })));
        assert!(matches!(grid.rsrp_at(10.0, 6000.0, 0), Err(Error::OutOfRange { .. })));
        assert!(grid.rsrp_at(4999.999, 5999.999, 0).is_ok());
    }

    #[test]
    fn strongest_cells_sorted_with_tie_break() {
        let grid = grid_from_bins(&[&[0.2, 0.9, 0.5]], 1, 1);
        assert_eq!(grid.strongest_cells(1.0, 1.0, 2).unwrap(), vec![1, 2]);
        let grid = grid_from_bins(&[&[0.5, 0.5]], 1, 1);
        assert_eq!(grid.strongest_cells(1.0, 1.0, 1).unwrap(), vec![0]);
    }

    #[test]
    fn strongest_cells_k_bounds() {
        let grid = grid_from_bins(&[&[0.2, 0.9, 0.5]], 1, 1);
        let mut all = grid.strongest_cells(1.0, 1.0, 3).unwrap();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(matches!(grid.strongest_cells(1.0, 1.0, 4), Err(Error::Config(_))));
        assert!(matches!(grid.strongest_cells(1.0, 1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn global_min_fill_for_unmeasured_cells() {
        let samples = [
            RsrpSample { x: 10.0, y: 10.0, cell: 0, rsrp_dbm: -70.0 },
            RsrpSample { x: 60.0, y: 10.0, cell: 1, rsrp_dbm: -90.0 },
        ];
        let spec = GridSpec::new(Extents::new(100.0, 50.0), 50.0, 2)
            .with_fill(EmptyBinFill::GlobalMin);
        let grid = RsrpGrid::build(&samples, &spec).unwrap();
        assert_eq!(grid.bin_raw(0, 0), &[-70.0, -90.0]);
        assert_eq!(grid.bin_raw(1, 0), &[-90.0, -90.0]);
    }

    #[test]
    fn neighbor_fill_spreads_outward() {
        // cell 0 measured only in bin (0,0); cell 1 only in bin (2,0)
        let samples = [
            RsrpSample { x: 10.0, y: 10.0, cell: 0, rsrp_dbm: -70.0 },
            RsrpSample { x: 110.0, y: 10.0, cell: 1, rsrp_dbm: -80.0 },
            RsrpSample { x: 110.0, y: 10.0, cell: 0, rsrp_dbm: -60.0 },
        ];
        let spec = GridSpec::new(Extents::new(150.0, 50.0), 50.0, 2);
        let grid = RsrpGrid::build(&samples, &spec).unwrap();
        assert_eq!(grid.bin_raw(1, 0), &[-65.0, -80.0]);
        assert_eq!(grid.bin_raw(0, 0), &[-70.0, -80.0]);
    }

    #[test]
    fn grid_csv_round_trip() {
        let layout = SyntheticLayout {
            extents: Extents::new(300.0, 200.0),
            sites: vec![(150.0, 100.0)],
            ..SyntheticLayout::default()
        };
        let samples = generate_synthetic_samples(&layout, 40, 5).unwrap();
        let grid = RsrpGrid::build(&samples, &GridSpec::new(layout.extents, 50.0, 3)).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let back = RsrpGrid::read_csv(buf.as_slice(), &grid.meta()).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn side_lobe_coverage_is_weaker_than_boresight() {
        let layout = SyntheticLayout::default();
        let (sx, sy) = layout.sites[0];
        let front = layout.mean_rsrp_dbm(sx + 1000.0, sy, 0);
        let back = layout.mean_rsrp_dbm(sx - 1000.0, sy, 0);
        assert!(front > back + 20.0, "front {front} back {back}");
    }
}
