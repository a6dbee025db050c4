//! Access-technology profiles and the time arithmetic shared by the link
//! emulator and the analysis code.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Direction of travel over an emulated access link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Client towards server, shaped by the uplink rate.
    Up,
    /// Server towards client, shaped by the downlink rate.
    Down,
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("profile `{name}`: {field} must be a positive finite number, got {value}")]
    NonPositive {
        name: String,
        field: &'static str,
        value: f64,
    },
    #[error("profile name must not be empty")]
    EmptyName,
    #[error("unknown profile `{0}`")]
    Unknown(String),
    #[error("reading profile file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing profile file: {0}")]
    Json(#[from] serde_json::Error),
}

/// One emulated access technology: a two-way delay and a pair of link rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct AccessProfile {
    pub name: String,
    pub rtt_ms: f64,
    pub downlink_mbps: f64,
    pub uplink_mbps: f64,
}

#[derive(Deserialize)]
struct RawProfile {
    name: String,
    rtt_ms: f64,
    downlink_mbps: f64,
    uplink_mbps: f64,
}

impl TryFrom<RawProfile> for AccessProfile {
    type Error = ProfileError;

    fn try_from(raw: RawProfile) -> Result<Self, Self::Error> {
        AccessProfile::new(raw.name, raw.rtt_ms, raw.downlink_mbps, raw.uplink_mbps)
    }
}

fn check_positive(name: &str, field: &'static str, value: f64) -> Result<(), ProfileError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ProfileError::NonPositive {
            name: name.to_string(),
            field,
            value,
        })
    }
}

impl AccessProfile {
    pub fn new(
        name: impl Into<String>,
        rtt_ms: f64,
        downlink_mbps: f64,
        uplink_mbps: f64,
    ) -> Result<Self, ProfileError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ProfileError::EmptyName);
        }
        check_positive(&name, "rtt_ms", rtt_ms)?;
        check_positive(&name, "downlink_mbps", downlink_mbps)?;
        check_positive(&name, "uplink_mbps", uplink_mbps)?;
        Ok(Self {
            name,
            rtt_ms,
            downlink_mbps,
            uplink_mbps,
        })
    }

    /// Link rate in Mbit/s for the given direction.
    pub fn rate_mbps(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Up => self.uplink_mbps,
            Direction::Down => self.downlink_mbps,
        }
    }

    pub fn one_way_delay_ms(&self) -> f64 {
        one_way_delay_ms(self)
    }

    pub fn serialization_delay_ms(&self, bytes: usize, direction: Direction) -> f64 {
        serialization_delay_ms(bytes, direction, self)
    }

    pub fn normalize_rtt(&self, duration_ms: f64) -> f64 {
        normalize_rtt(duration_ms, self)
    }
}

/// Fixed-line and mobile access profiles (FCC MBA and ERRANT averages).
///
/// Order is fibre, cable, dsl, 4g, 4g_medium.
pub fn builtin_profiles() -> Vec<AccessProfile> {
    const TABLE: [(&str, f64, f64, f64); 5] = [
        ("fibre", 14.8, 99.9, 109.1),
        ("cable", 25.2, 165.1, 11.6),
        ("dsl", 42.4, 10.7, 0.8),
        ("4g", 91.9, 54.0, 21.2),
        ("4g_medium", 104.5, 28.7, 4.2),
    ];
    TABLE
        .iter()
        .map(|&(name, rtt_ms, downlink_mbps, uplink_mbps)| AccessProfile {
            name: name.to_string(),
            rtt_ms,
            downlink_mbps,
            uplink_mbps,
        })
        .collect()
}

/// Looks a profile up by name, first among `extra` and then among the built-ins.
pub fn find_profile(name: &str, extra: &[AccessProfile]) -> Result<AccessProfile, ProfileError> {
    extra
        .iter()
        .find(|p| p.name == name)
        .cloned()
        .or_else(|| builtin_profiles().into_iter().find(|p| p.name == name))
        .ok_or_else(|| ProfileError::Unknown(name.to_string()))
}

/// Reads a JSON array of `{name, rtt_ms, downlink_mbps, uplink_mbps}` objects.
pub fn load_profiles(path: &Path) -> Result<Vec<AccessProfile>, ProfileError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Delay is two-way and split symmetrically.
pub fn one_way_delay_ms(p: &AccessProfile) -> f64 {
    p.rtt_ms / 2.0
}

/// Store-and-forward transmission time of `bytes` at the direction's rate.
pub fn serialization_delay_ms(bytes: usize, direction: Direction, p: &AccessProfile) -> f64 {
    // Mbit/s == kbit/ms
    (bytes as f64 * 8.0) / (p.rate_mbps(direction) * 1000.0)
}

/// Expresses a duration as a multiple of the profile's round-trip time.
pub fn normalize_rtt(duration_ms: f64, p: &AccessProfile) -> f64 {
    duration_ms / p.rtt_ms
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(name: &str) -> AccessProfile {
        find_profile(name, &[]).unwrap()
    }

    #[test]
    fn builtins_match_table() {
        let all = builtin_profiles();
        assert_eq!(all.len(), 5);
        let names: Vec<_> = all.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["fibre", "cable", "dsl", "4g", "4g_medium"]);

        let fibre = profile("fibre");
        assert_eq!(
            (fibre.rtt_ms, fibre.downlink_mbps, fibre.uplink_mbps),
            (14.8, 99.9, 109.1)
        );
        let medium = profile("4g_medium");
        assert_eq!(
            (medium.rtt_ms, medium.downlink_mbps, medium.uplink_mbps),
            (104.5, 28.7, 4.2)
        );
    }

    #[test]
    fn builtins_equal_checked_in_fixture() {
        let fixture = include_str!("../tests/fixtures/access_profiles.json");
        let parsed: Vec<AccessProfile> = serde_json::from_str(fixture).unwrap();
        assert_eq!(parsed, builtin_profiles());
    }

    #[test]
    fn one_way_delay_halves_rtt() {
        assert!((one_way_delay_ms(&profile("dsl")) - 21.2).abs() < 1e-12);
        assert!((one_way_delay_ms(&profile("fibre")) - 7.4).abs() < 1e-12);
    }

    #[test]
    fn zero_rtt_rejected() {
        assert!(matches!(
            AccessProfile::new("x", 0.0, 1.0, 1.0),
            Err(ProfileError::NonPositive { field: "rtt_ms", .. })
        ));
        assert!(AccessProfile::new("x", 1.0, -1.0, 1.0).is_err());
        assert!(AccessProfile::new("x", 1.0, 1.0, f64::NAN).is_err());
        let bad = r#"[{"name":"z","rtt_ms":0.0,"downlink_mbps":1,"uplink_mbps":1}]"#;
        assert!(serde_json::from_str::<Vec<AccessProfile>>(bad).is_err());
    }

    #[test]
    fn serialization_delay_examples() {
        // 1250 B * 8 / 10700 kbit/s
        let dsl_down = serialization_delay_ms(1250, Direction::Down, &profile("dsl"));
        assert!((dsl_down - 0.934_579_439).abs() < 1e-6, "{dsl_down}");
        // 1250 B * 8 / 11600 kbit/s
        let cable_up = serialization_delay_ms(1250, Direction::Up, &profile("cable"));
        assert!((cable_up - 0.862_068_966).abs() < 1e-6, "{cable_up}");
        for p in builtin_profiles() {
            assert_eq!(serialization_delay_ms(0, Direction::Up, &p), 0.0);
            assert_eq!(serialization_delay_ms(0, Direction::Down, &p), 0.0);
        }
    }

    #[test]
    fn normalize_examples() {
        let fibre = profile("fibre");
        assert!((normalize_rtt(37.0, &fibre) - 2.5).abs() < 1e-12);
        assert!((normalize_rtt(14.8, &fibre) - 1.0).abs() < 1e-12);
        assert!((normalize_rtt(229.75, &profile("4g")) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn profile_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        fs::write(
            &path,
            r#"[{"name":"sat","rtt_ms":600,"downlink_mbps":50,"uplink_mbps":5}]"#,
        )
        .unwrap();
        let extra = load_profiles(&path).unwrap();
        assert_eq!(find_profile("sat", &extra).unwrap().rtt_ms, 600.0);
        assert_eq!(find_profile("fibre", &extra).unwrap().rtt_ms, 14.8);
        assert!(matches!(find_profile("nope", &extra), Err(ProfileError::Unknown(_))));
    }

    #[test]
    fn normalized_round_trip_is_one() {
        for p in builtin_profiles() {
            let n = normalize_rtt(one_way_delay_ms(&p) * 2.0, &p);
            assert!((n - 1.0).abs() < 1e-12, "{}", p.name);
        }
    }

    proptest! {
        #[test]
        fn serialization_is_linear(a in 0usize..1_000_000, b in 0usize..1_000_000, idx in 0usize..5, up in any::<bool>()) {
            let p = &builtin_profiles()[idx];
            let dir = if up { Direction::Up } else { Direction::Down };
            let lhs = serialization_delay_ms(a + b, dir, p);
            let rhs = serialization_delay_ms(a, dir, p) + serialization_delay_ms(b, dir, p);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
