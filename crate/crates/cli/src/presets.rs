//! Configs shipped with the binary, one per acceptance criterion.

macro_rules! preset {
    ($name:literal) => {
        ($name, include_str!(concat!("../presets/", $name, ".toml")))
    };
}

pub const PRESETS: &[(&str, &str)] = &[
    preset!("ac01-lipschitz-wiener"),
    preset!("ac02-holder-wiener"),
    preset!("ac03-stable-p2"),
    preset!("ac04-stable-p4"),
    preset!("ac05-onestep-wiener"),
    preset!("ac06-onestep-stable"),
    preset!("ac07-noise-moments"),
    preset!("ac08-kolmogorov-heat"),
    preset!("ac09-kolmogorov-stable"),
    preset!("ac10-partition"),
];

pub fn get(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// First comment line of a preset.
pub fn summary(text: &str) -> &str {
    text.lines()
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .map_or("", str::trim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for (name, text) in PRESETS {
            crate::validate(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!summary(text).is_empty(), "{name}");
        }
    }

    #[test]
    fn configs_round_trip_through_toml() {
        for (name, text) in PRESETS {
            let cfg = crate::ExperimentConfig::from_toml(text).unwrap();
            let again = crate::ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(cfg, again, "{name}");
        }
    }

    #[test]
    fn lookup() {
        assert!(get("ac10-partition").is_some());
        assert!(get("nope").is_none());
    }
}
