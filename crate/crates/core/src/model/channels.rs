use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// All lead days from one pass.
    S,
    /// One day per pass, applied recurrently.
    R,
}

impl Regime {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(Regime::S),
            "r" => Ok(Regime::R),
            _ => Err(Error::Config(format!("unknown regime `{s}` (expected s or r)"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::S => "s",
            Regime::R => "r",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Sic,
    Weather,
    General,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prep {
    Data,
    Climatology,
    Anomaly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Time {
    /// Days before the last observed day (0 = today).
    Past(usize),
    Today,
    /// Lead day.
    Future(usize),
}

/// Index of a weather plane within one virtual day.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeatherPlane {
    T2mClim = 0,
    T2mAnom = 1,
    MslClim = 2,
    MslAnom = 3,
    U10 = 4,
    V10 = 5,
    Wind = 6,
}

pub const WEATHER_PLANES: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDesc {
    pub source: Source,
    pub name: String,
    pub prep: Prep,
    pub time: Time,
    /// Weather plane for weather channels.
    pub plane: Option<WeatherPlane>,
}

/// Ordered input channels of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub regime: Regime,
    pub include_weather: bool,
    pub descriptors: Vec<ChannelDesc>,
}

impl ChannelConfig {
    pub fn new(d_in: usize, d_out: usize, regime: Regime, include_weather: bool) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config("D_in and D_out must be at least 1".into()));
        }
        let span = match regime {
            Regime::S => d_out,
            Regime::R => 1,
        };
        let mut d = Vec::new();
        for back in (0..d_in).rev() {
            d.push(ChannelDesc {
                source: Source::Sic,
                name: format!("sic_t-{back}"),
                prep: Prep::Data,
                time: Time::Past(back),
                plane: None,
            });
        }
        if include_weather {
            let w = |name: String, prep, time, plane| ChannelDesc {
                source: Source::Weather,
                name,
                prep,
                time,
                plane: Some(plane),
            };
            for (var, clim, anom) in [
                ("t2m", WeatherPlane::T2mClim, WeatherPlane::T2mAnom),
                ("msl", WeatherPlane::MslClim, WeatherPlane::MslAnom),
            ] {
                d.push(w(format!("{var}_clim_today"), Prep::Climatology, Time::Today, clim));
                d.push(w(format!("{var}_anom_today"), Prep::Anomaly, Time::Today, anom));
                for lead in 1..=span {
                    d.push(w(format!("{var}_anom_f{lead}"), Prep::Anomaly, Time::Future(lead), anom));
                }
            }
            for (var, plane) in [
                ("u10", WeatherPlane::U10),
                ("v10", WeatherPlane::V10),
                ("wind", WeatherPlane::Wind),
            ] {
                d.push(w(format!("{var}_today"), Prep::Data, Time::Today, plane));
                for lead in 1..=span {
                    d.push(w(format!("{var}_f{lead}"), Prep::Data, Time::Future(lead), plane));
                }
            }
        }
        for name in ["date_cos", "date_sin", "land"] {
            d.push(ChannelDesc {
                source: Source::General,
                name: name.into(),
                prep: Prep::Data,
                time: Time::Today,
                plane: None,
            });
        }
        Ok(Self {
            d_in,
            d_out,
            regime,
            include_weather,
            descriptors: d,
        })
    }

    /// Future weather days stacked per pass.
    pub fn span(&self) -> usize {
        match self.regime {
            Regime::S => self.d_out,
            Regime::R => 1,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.descriptors.len()
    }

    pub fn out_channels(&self) -> usize {
        match self.regime {
            Regime::S => self.d_out,
            Regime::R => 1,
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.descriptors.iter().map(|d| d.name.clone()).collect()
    }

    /// Channels after the SIC history.
    pub fn rest(&self) -> &[ChannelDesc] {
        &self.descriptors[self.d_in..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn formula(d_in: usize, weather: bool, span: usize) -> usize {
        d_in + usize::from(weather) * (2 * (2 + span) + 3 * (1 + span)) + 3
    }

    #[test]
    fn table_channel_counts() {
        let s = ChannelConfig::new(7, 3, Regime::S, true).unwrap();
        assert_eq!(s.in_channels(), 32);
        let r = ChannelConfig::new(7, 3, Regime::R, true).unwrap();
        assert_eq!(r.in_channels(), 22);
        let dry = ChannelConfig::new(7, 3, Regime::S, false).unwrap();
        assert_eq!(dry.in_channels(), 10);
        for d_in in 1..9 {
            for d_out in 1..4 {
                for weather in [false, true] {
                    for (regime, span) in [(Regime::S, d_out), (Regime::R, 1)] {
                        let c = ChannelConfig::new(d_in, d_out, regime, weather).unwrap();
                        assert_eq!(c.in_channels(), formula(d_in, weather, span));
                    }
                }
            }
        }
    }

    #[test]
    fn per_variable_counts() {
        let s = ChannelConfig::new(7, 3, Regime::S, true).unwrap();
        let count = |p: &str| s.names().iter().filter(|n| n.starts_with(p)).count();
        assert_eq!(count("t2m"), 5);
        assert_eq!(count("msl"), 5);
        assert_eq!(count("u10"), 4);
        assert_eq!(count("v10"), 4);
        assert_eq!(count("wind"), 4);
        assert_eq!(s.names()[0], "sic_t-6");
        assert_eq!(s.names().last().unwrap(), "land");
    }
}
