//! Conversion of measured deltas into gCO2e.
//!
//! Four addends per functional unit: user-device electricity, network
//! electricity (allocated by traffic volume), user-device embodied emissions
//! (allocated by time share of the device lifetime) and network embodied
//! emissions (proportional to network use-phase emissions).
//!
//! Every function is linear in its measured argument and passes negative
//! deltas through unchanged, so swapping the compared conditions negates the
//! result exactly. Nothing here rounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EmissionEntry, EmissionFactors};

/// Bytes in one MB as used by the transfer-intensity model (decimal).
pub const BYTES_PER_MB: f64 = 1e6;

/// Electricity emission factor, gCO2e per joule.
pub fn c_elec(f: &EmissionFactors) -> f64 {
    f.grid_intensity * f.joule_to_kwh
}

/// Use-phase emissions of a user-side energy delta (J), in gCO2e.
pub fn user_use_emissions(delta_energy_j: f64, f: &EmissionFactors) -> f64 {
    delta_energy_j * c_elec(f)
}

/// Carbon cost of moving one MB across the network, in µgCO2e/MB.
///
/// The electricity intensity of transfer halves every
/// `halving_period_years` after `base_year`.
pub fn transfer_intensity(f: &EmissionFactors) -> Result<f64> {
    if f.assessment_year < f.base_year {
        return Err(Error::Domain(format!(
            "assessment_year {} precedes base_year {}",
            f.assessment_year, f.base_year
        )));
    }
    let elapsed = f64::from(f.assessment_year - f.base_year);
    let kwh_per_mb = f.transfer_intensity_base * 1e-3 * (-elapsed / f.halving_period_years).exp2();
    Ok(kwh_per_mb * f.grid_intensity * 1e6)
}

/// Use-phase network emissions of a traffic delta (MB), in gCO2e.
pub fn network_use_emissions(delta_data_mb: f64, f: &EmissionFactors) -> Result<f64> {
    Ok(delta_data_mb * transfer_intensity(f)? * 1e-6)
}

/// Embodied user-device emissions allocated to a duration delta (s), in gCO2e.
pub fn user_embodied_emissions(delta_t_s: f64, f: &EmissionFactors) -> f64 {
    f.device_embodied_total * (delta_t_s / f.device_lifetime_seconds) * f.resource_share
}

/// Embodied network emissions for a network use-phase delta (g), in gCO2e.
pub fn network_embodied_emissions(delta_u_network_g: f64, f: &EmissionFactors) -> f64 {
    f.embodied_to_use_ratio * delta_u_network_g
}

/// Measured per-unit differences between two conditions (A minus B).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitDeltas {
    pub energy_j: f64,
    pub data_mb: f64,
    pub duration_s: f64,
}

impl UnitDeltas {
    pub fn from_bytes(energy_j: f64, data_bytes: f64, duration_s: f64) -> Self {
        Self {
            energy_j,
            data_mb: data_bytes / BYTES_PER_MB,
            duration_s,
        }
    }
}

/// All four emission components for one functional unit, plus their total.
pub fn emission_breakdown(delta: &UnitDeltas, f: &EmissionFactors) -> Result<EmissionEntry> {
    let use_network = network_use_emissions(delta.data_mb, f)?;
    Ok(EmissionEntry::new(
        user_use_emissions(delta.energy_j, f),
        use_network,
        user_embodied_emissions(delta.duration_s, f),
        network_embodied_emissions(use_network, f),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn defaults() -> EmissionFactors {
        EmissionFactors::default()
    }

    #[test]
    fn c_elec_defaults() {
        assert_relative_eq!(c_elec(&defaults()), 1.236_121e-4, max_relative = 1e-6);
        let c = c_elec(&defaults());
        assert!((1.23e-4..=1.25e-4).contains(&c));
        // reported to three significant figures as 1.24e-4
        assert_eq!(format!("{:.2e}", c), "1.24e-4");
    }

    #[test]
    fn c_elec_doubles_with_grid_intensity() {
        let f = EmissionFactors {
            grid_intensity: 890.0,
            ..defaults()
        };
        assert_relative_eq!(c_elec(&f), 2.472_242e-4, max_relative = 1e-6);
    }

    #[test]
    fn user_use_examples() {
        assert_eq!(user_use_emissions(0.0, &defaults()), 0.0);
        assert_relative_eq!(user_use_emissions(6281.0, &defaults()), 0.776_407, max_relative = 1e-5);
        assert_relative_eq!(user_use_emissions(-117.35, &defaults()), -0.014_506_0, max_relative = 1e-4);
    }

    #[test]
    fn transfer_intensity_examples() {
        // 0.06e-3 * 445 / 2^9 = 52.148...
        assert_relative_eq!(transfer_intensity(&defaults()).unwrap(), 52.148_437_5, max_relative = 1e-12);
        let same_year = EmissionFactors {
            assessment_year: 2015,
            ..defaults()
        };
        assert_relative_eq!(transfer_intensity(&same_year).unwrap(), 26_700.0, max_relative = 1e-12);
        let two_years = EmissionFactors {
            halving_period_years: 2.0,
            ..defaults()
        };
        // 26700 / 2^4.5
        assert_relative_eq!(transfer_intensity(&two_years).unwrap(), 1_179.984_441, max_relative = 1e-9);
    }

    #[test]
    fn transfer_intensity_rejects_year_before_base() {
        let f = EmissionFactors {
            assessment_year: 2010,
            ..defaults()
        };
        assert!(matches!(transfer_intensity(&f), Err(Error::Domain(_))));
    }

    #[test]
    fn transfer_intensity_decreases_with_year() {
        let mut prev = f64::INFINITY;
        for year in 2015..2040 {
            let f = EmissionFactors {
                assessment_year: year,
                ..defaults()
            };
            let t = transfer_intensity(&f).unwrap();
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn network_use_examples() {
        assert_eq!(network_use_emissions(0.0, &defaults()).unwrap(), 0.0);
        // nominal 52 µg/MB gives 5.2e-5 and 6.604e-5; the unrounded constant is 0.3 % higher
        assert_relative_eq!(network_use_emissions(1.0, &defaults()).unwrap(), 5.2e-5, max_relative = 5e-3);
        assert_relative_eq!(network_use_emissions(1.27, &defaults()).unwrap(), 6.604e-5, max_relative = 5e-3);
    }

    #[test]
    fn user_embodied_examples() {
        assert_eq!(user_embodied_emissions(0.0, &defaults()), 0.0);
        assert_relative_eq!(user_embodied_emissions(1.0, &defaults()), 1.408_359_5e-3, max_relative = 1e-7);
        assert_relative_eq!(user_embodied_emissions(3.69, &defaults()), 5.20e-3, max_relative = 1e-3);
    }

    #[test]
    fn network_embodied_examples() {
        assert_eq!(network_embodied_emissions(0.0, &defaults()), 0.0);
        assert_eq!(network_embodied_emissions(1.0, &defaults()), 0.21);
        assert_relative_eq!(network_embodied_emissions(6.604e-5, &defaults()), 1.387e-5, max_relative = 1e-3);
    }

    #[test]
    fn breakdown_of_zero_is_zero() {
        let e = emission_breakdown(&UnitDeltas::default(), &defaults()).unwrap();
        assert_eq!(e, EmissionEntry::default());
    }

    #[test]
    fn breakdown_outlook_adblock_session() {
        let d = UnitDeltas {
            energy_j: 117.35,
            data_mb: 1.27,
            duration_s: 3.69,
        };
        let e = emission_breakdown(&d, &defaults()).unwrap();
        assert_relative_eq!(e.total_g, 0.019_783, max_relative = 1e-3);
        assert_eq!(e.total_g, e.use_user_g + e.use_network_g + e.embodied_user_g + e.embodied_network_g);
    }

    proptest! {
        #[test]
        fn operations_are_linear(x in -1e6f64..1e6, a in -100f64..100.0) {
            let f = defaults();
            let tol = |v: f64| 1e-12 * v.abs().max(1e-300);
            let lhs = user_use_emissions(a * x, &f);
            prop_assert!((lhs - a * user_use_emissions(x, &f)).abs() <= tol(lhs) + 1e-18);
            let lhs = network_use_emissions(a * x, &f).unwrap();
            prop_assert!((lhs - a * network_use_emissions(x, &f).unwrap()).abs() <= tol(lhs) + 1e-18);
            let lhs = user_embodied_emissions(a * x, &f);
            prop_assert!((lhs - a * user_embodied_emissions(x, &f)).abs() <= tol(lhs) + 1e-18);
            let lhs = network_embodied_emissions(a * x, &f);
            prop_assert!((lhs - a * network_embodied_emissions(x, &f)).abs() <= tol(lhs) + 1e-18);
        }

        #[test]
        fn breakdown_negates_exactly(e in -1e5f64..1e5, d in -100f64..100.0, t in -500f64..500.0) {
            let f = defaults();
            let fwd = emission_breakdown(&UnitDeltas { energy_j: e, data_mb: d, duration_s: t }, &f).unwrap();
            let rev = emission_breakdown(&UnitDeltas { energy_j: -e, data_mb: -d, duration_s: -t }, &f).unwrap();
            prop_assert_eq!(fwd.use_user_g, -rev.use_user_g);
            prop_assert_eq!(fwd.use_network_g, -rev.use_network_g);
            prop_assert_eq!(fwd.embodied_user_g, -rev.embodied_user_g);
            prop_assert_eq!(fwd.embodied_network_g, -rev.embodied_network_g);
        }

        #[test]
        fn signs_are_preserved(x in 1e-6f64..1e6) {
            let f = defaults();
            prop_assert!(user_use_emissions(x, &f) > 0.0);
            prop_assert!(user_use_emissions(-x, &f) < 0.0);
            prop_assert!(network_use_emissions(-x, &f).unwrap() < 0.0);
            prop_assert!(user_embodied_emissions(-x, &f) < 0.0);
            prop_assert!(network_embodied_emissions(-x, &f) < 0.0);
        }
    }
}
