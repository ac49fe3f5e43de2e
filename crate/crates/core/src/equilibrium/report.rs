use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdmissibilityReport, DualityReport, EquivalenceReport, FirstOrderReport, SpikeReport};
use crate::error::Result;

/// Everything the verifier found about one pair, with one flag per check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub strategy: String,
    pub first_order: Option<FirstOrderReport>,
    pub spike: Option<SpikeReport>,
    pub duality: Option<DualityReport>,
    pub equivalence: Option<EquivalenceReport>,
    pub admissibility: Option<AdmissibilityReport>,
    pub verdicts: BTreeMap<String, bool>,
    pub passed: bool,
}

impl EquilibriumReport {
    pub fn new(strategy: impl Into<String>) -> Self {
        Self {
            strategy: strategy.into(),
            first_order: None,
            spike: None,
            duality: None,
            equivalence: None,
            admissibility: None,
            verdicts: BTreeMap::new(),
            passed: true,
        }
    }

    /// Recomputes the verdict flags from the attached sections.
    pub fn finish(&mut self) {
        let mut v = BTreeMap::new();
        if let Some(f) = &self.first_order {
            v.insert("first_order".to_string(), f.passed);
        }
        if let Some(s) = &self.spike {
            v.insert("spike".to_string(), s.passed);
            if let Some(d) = s.decomposition_passed {
                v.insert("spike_decomposition".to_string(), d);
            }
        }
        if let Some(d) = &self.duality {
            v.insert("duality".to_string(), d.passed);
            v.insert("duality_wiring".to_string(), d.wiring_passed);
            if let Some(s) = &d.scaling {
                v.insert("duality_se_scaling".to_string(), s.passed);
            }
        }
        if let Some(e) = &self.equivalence {
            v.insert("equivalence".to_string(), e.passed);
            if let Some(f) = e.first_order_passed {
                v.insert("equivalence_first_order".to_string(), f);
            }
        }
        if let Some(a) = &self.admissibility {
            v.insert("admissibility".to_string(), a.passed);
        }
        self.passed = v.values().all(|b| *b);
        self.verdicts = v;
    }

    /// The names of failing checks.
    pub fn failures(&self) -> Vec<&str> {
        self.verdicts.iter().filter(|(_, v)| !**v).map(|(k, _)| k.as_str()).collect()
    }

    /// Writes `<stem>.json` and, when present, `<stem>_spike.csv`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        if let Some(s) = &self.spike {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}_spike.csv")))?);
            s.write_csv(&mut f)?;
        }
        Ok(())
    }
}
