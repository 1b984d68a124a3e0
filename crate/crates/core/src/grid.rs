//! Regional equal-area grids.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::{self, KeyValues};
use crate::store::sigs;

/// Authalic sphere radius in meters.
pub const SPHERE_RADIUS_M: f64 = 6_371_007.181;
pub const DEFAULT_ROWS: usize = 360;
pub const DEFAULT_COLS: usize = 500;
pub const DEFAULT_STEP_M: f64 = 5000.0;

/// Named regions and their projection centers `(lat, lon)`.
pub const NAMED_REGIONS: [(&str, f64, f64); 3] = [
    ("barents", 73.0, 57.3),
    ("labrador", 61.0, -56.0),
    ("laptev", 76.0, 125.0),
];

fn normalize_lon(lon: f64) -> f64 {
    if lon > -180.0 && lon <= 180.0 {
        return lon;
    }
    let mut l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if l == -180.0 {
        l = 180.0;
    }
    l
}

/// Spherical Lambert azimuthal equal-area forward projection.
pub fn laea_forward(
    lat: f64,
    lon: f64,
    center_lat: f64,
    center_lon: f64,
    radius: f64,
) -> Result<(f64, f64)> {
    if !(lat.abs() <= 90.0) || !lon.is_finite() {
        return Err(Error::Domain(format!("latitude {lat} out of range")));
    }
    let (phi, phi1) = (lat.to_radians(), center_lat.to_radians());
    let dlam = (lon - center_lon).to_radians();
    let cos_c = phi1.sin() * phi.sin() + phi1.cos() * phi.cos() * dlam.cos();
    let denom = 1.0 + cos_c;
    if denom <= 1e-12 {
        return Err(Error::Domain(format!(
            "({lat}, {lon}) is antipodal to the projection center"
        )));
    }
    let k = (2.0 / denom).sqrt();
    let x = radius * k * phi.cos() * dlam.sin();
    let y = radius * k * (phi1.cos() * phi.sin() - phi1.sin() * phi.cos() * dlam.cos());
    Ok((x, y))
}

/// Inverse of [`laea_forward`].
pub fn laea_inverse(
    x: f64,
    y: f64,
    center_lat: f64,
    center_lon: f64,
    radius: f64,
) -> Result<(f64, f64)> {
    let rho = x.hypot(y);
    if !(rho < 2.0 * radius) {
        return Err(Error::Domain(format!(
            "({x}, {y}) lies outside the projection image"
        )));
    }
    if rho == 0.0 {
        return Ok((center_lat, normalize_lon(center_lon)));
    }
    let phi1 = center_lat.to_radians();
    let c = 2.0 * (rho / (2.0 * radius)).asin();
    let (sin_c, cos_c) = c.sin_cos();
    let phi = (cos_c * phi1.sin() + y * sin_c * phi1.cos() / rho)
        .clamp(-1.0, 1.0)
        .asin();
    let lam = (x * sin_c).atan2(rho * phi1.cos() * cos_c - y * phi1.sin() * sin_c);
    Ok((phi.to_degrees(), normalize_lon(center_lon + lam.to_degrees())))
}

/// Equal-area raster geometry with a land mask.
///
/// Row 0 is the northern edge; cell centers sit at
/// `x = (j − (cols−1)/2)·step`, `y = ((rows−1)/2 − i)·step`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionGrid {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub step_m: f64,
    pub center_lat: f64,
    pub center_lon: f64,
    pub land_mask: Vec<bool>,
    pub cell_area_m2: Vec<f64>,
}

impl RegionGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_xy(&self, i: usize, j: usize) -> (f64, f64) {
        let x = (j as f64 - (self.cols as f64 - 1.0) / 2.0) * self.step_m;
        let y = ((self.rows as f64 - 1.0) / 2.0 - i as f64) * self.step_m;
        (x, y)
    }

    pub fn cell_latlon(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        let (x, y) = self.cell_xy(i, j);
        laea_inverse(x, y, self.center_lat, self.center_lon, SPHERE_RADIUS_M)
    }

    pub fn with_land_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::Shape(format!(
                "land mask has {} cells, grid has {}",
                mask.len(),
                self.len()
            )));
        }
        self.land_mask = mask;
        Ok(self)
    }
}

/// Optional settings overriding a named region's defaults.
#[derive(Clone, Debug, Default)]
pub struct RegionOverrides {
    pub center: Option<(f64, f64)>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub step_m: Option<f64>,
    pub land_mask: Option<Vec<bool>>,
}

pub fn build_region(name: &str, overrides: RegionOverrides) -> Result<RegionGrid> {
    let key = name.to_ascii_lowercase();
    let named = NAMED_REGIONS.iter().find(|(n, _, _)| *n == key);
    let (center, rows, cols, step_m) = match named {
        Some(&(_, lat, lon)) => (
            overrides.center.unwrap_or((lat, lon)),
            overrides.rows.unwrap_or(DEFAULT_ROWS),
            overrides.cols.unwrap_or(DEFAULT_COLS),
            overrides.step_m.unwrap_or(DEFAULT_STEP_M),
        ),
        None => match (overrides.center, overrides.rows, overrides.cols, overrides.step_m) {
            (Some(c), Some(r), Some(k), Some(s)) => (c, r, k, s),
            _ => {
                return Err(Error::Config(format!(
                    "unknown region `{name}`: custom regions need center, rows, cols and step"
                )))
            }
        },
    };
    if rows == 0 || cols == 0 || !(step_m > 0.0) {
        return Err(Error::Config(format!(
            "region `{name}` needs positive rows, cols and step (got {rows}, {cols}, {step_m})"
        )));
    }
    if !(center.0.abs() <= 90.0) || !center.1.is_finite() {
        return Err(Error::Config(format!("bad center {center:?}")));
    }
    let grid = RegionGrid {
        name: key,
        rows,
        cols,
        step_m,
        center_lat: center.0,
        center_lon: center.1,
        land_mask: vec![false; rows * cols],
        cell_area_m2: vec![step_m * step_m; rows * cols],
    };
    match overrides.land_mask {
        Some(mask) => grid.with_land_mask(mask),
        None => Ok(grid),
    }
}

/// Builds a region from `key = value` settings: `name`, `center_lat`,
/// `center_lon`, `rows`, `cols`, `step_m`, `land_mask_path`.
///
/// A land mask file is a SIGS stack whose first channel is nonzero on land.
pub fn region_from_config(kv: &KeyValues, base_dir: &Path) -> Result<RegionGrid> {
    let name = kv::require(kv, "name")?;
    let opt = |k: &str| kv.contains_key(k);
    let mut ov = RegionOverrides::default();
    if opt("center_lat") || opt("center_lon") {
        ov.center = Some((
            kv::parse_value(kv, "center_lat")?,
            kv::parse_value(kv, "center_lon")?,
        ));
    }
    if opt("rows") {
        ov.rows = Some(kv::parse_value(kv, "rows")?);
    }
    if opt("cols") {
        ov.cols = Some(kv::parse_value(kv, "cols")?);
    }
    if opt("step_m") {
        ov.step_m = Some(kv::parse_value(kv, "step_m")?);
    }
    if let Some(p) = kv.get("land_mask_path") {
        let stack = sigs::read_stack(&base_dir.join(p))?;
        let plane = stack.plane(0);
        ov.rows.get_or_insert(stack.rows);
        ov.cols.get_or_insert(stack.cols);
        ov.land_mask = Some(plane.iter().map(|&v| v.is_finite() && v != 0.0).collect());
    }
    build_region(name, ov)
}

pub fn load_region(path: &Path) -> Result<RegionGrid> {
    let kv = kv::read(path)?;
    region_from_config(&kv, path.parent().unwrap_or(Path::new(".")))
}

/// Land mask file written beside a saved region description.
pub const LAND_FILE: &str = "land.sigs";

/// Writes `grid` as a `key = value` file plus a land mask stack, readable by
/// [`load_region`].
pub fn save_region(grid: &RegionGrid, path: &Path) -> Result<()> {
    let mut kv = KeyValues::new();
    for (k, v) in [
        ("name", grid.name.clone()),
        ("center_lat", format!("{:?}", grid.center_lat)),
        ("center_lon", format!("{:?}", grid.center_lon)),
        ("rows", grid.rows.to_string()),
        ("cols", grid.cols.to_string()),
        ("step_m", format!("{:?}", grid.step_m)),
        ("land_mask_path", LAND_FILE.to_string()),
    ] {
        kv.insert(k.to_string(), v);
    }
    let stack = sigs::GridStack::new(
        grid.name.clone(),
        chrono::NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
        vec!["land".into()],
        grid.rows,
        grid.cols,
        grid.land_mask.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
    )?;
    sigs::write_stack(&stack, &path.parent().unwrap_or(Path::new(".")).join(LAND_FILE))?;
    kv::write(path, &kv)
}
