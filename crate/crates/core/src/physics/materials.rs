use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum MaterialLabel {
    Air = 0,
    SoftTissue = 1,
    Bone = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// g/cm^3
    pub density: f64,
    /// Linear attenuation, mm^-1, at the table energy.
    pub mu: f64,
}

/// Attenuation table for the three phantom materials.
///
/// JSON form:
/// `{"energy_kev": 60, "air": {"density": .., "mu": ..}, "soft_tissue": {..}, "bone": {..}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialTable {
    pub energy_kev: f64,
    pub air: Material,
    pub soft_tissue: Material,
    pub bone: Material,
}

impl Default for MaterialTable {
    /// Monoenergetic 60 keV values.
    fn default() -> Self {
        MaterialTable {
            energy_kev: 60.0,
            air: Material { density: 0.0012, mu: 0.0 },
            soft_tissue: Material { density: 1.06, mu: 0.0205 },
            bone: Material { density: 1.92, mu: 0.0586 },
        }
    }
}

impl MaterialTable {
    pub fn validate(&self) -> Result<()> {
        if self.air.mu != 0.0 {
            return Err(Error::config("air must have zero attenuation"));
        }
        if !(self.soft_tissue.mu > 0.0 && self.bone.mu > self.soft_tissue.mu) {
            return Err(Error::config("require bone mu > soft tissue mu > 0"));
        }
        if !(self.energy_kev > 0.0) {
            return Err(Error::config("table energy must be positive"));
        }
        Ok(())
    }

    pub fn get(&self, label: MaterialLabel) -> Material {
        match label {
            MaterialLabel::Air => self.air,
            MaterialLabel::SoftTissue => self.soft_tissue,
            MaterialLabel::Bone => self.bone,
        }
    }

    /// Attenuation used as the water reference for HU.
    pub fn mu_water(&self) -> f64 {
        self.soft_tissue.mu
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: MaterialTable = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let t = MaterialTable::default();
        t.validate().unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(MaterialTable::from_json(&s).unwrap(), t);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(MaterialTable::from_json(r#"{"energy_kev":60,"air":{"density":0,"mu":0},"soft_tissue":{"density":1,"mu":0.02},"bone":{"density":2,"mu":0.05},"lead":{"density":11,"mu":9}}"#).is_err());
        assert!(MaterialTable::from_json(r#"{"energy_kev":60,"air":{"density":0,"mu":0},"soft_tissue":{"density":1,"mu":0.06},"bone":{"density":2,"mu":0.05}}"#).is_err());
    }
}
