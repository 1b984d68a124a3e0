//! Dated multi-channel rasters on disk, catalogs, splits and sample windows.

mod catalog;
mod sample;
pub mod sigs;

pub use catalog::{split_by_years, Catalog, SplitYears, Splits, MANIFEST_NAME};
pub use sample::{daily_composite, window, windows, HistoryView, Sample, WindowSet};
pub use sigs::{read_stack, write_stack, GridStack};

/// Channel names shared across the pipeline.
pub mod channels {
    pub const SIC: &str = "sic";
    pub const T2M: &str = "t2m";
    pub const MSL: &str = "msl";
    pub const U10: &str = "u10";
    pub const V10: &str = "v10";
    pub const WIND: &str = "wind";
    pub const WEATHER: [&str; 5] = [T2M, MSL, U10, V10, WIND];

    /// Name of the forecast of `var` issued on a record's date for `lead` days ahead.
    pub fn forecast(var: &str, lead: usize) -> String {
        format!("{var}_f{lead}")
    }
}
