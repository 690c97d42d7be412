//! Feature schema of the stratification dataset: one CSV column per feature,
//! grouped into the clinical and echocardiographic blocks. EF is a single
//! measurement visible to both blocks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    Clinical,
    Echo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Numeric,
    Boolean,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: &'static str,
    pub kind: FeatureKind,
    pub clinical: bool,
    pub echo: bool,
    /// Optional features are never "missing"; an empty cell is its own category.
    pub optional: bool,
}

impl FeatureSpec {
    pub fn in_block(&self, block: Block) -> bool {
        match block {
            Block::Clinical => self.clinical,
            Block::Echo => self.echo,
        }
    }
}

const fn clinical(name: &'static str, kind: FeatureKind) -> FeatureSpec {
    FeatureSpec { name, kind, clinical: true, echo: false, optional: false }
}

const fn echo(name: &'static str, kind: FeatureKind) -> FeatureSpec {
    FeatureSpec { name, kind, clinical: false, echo: true, optional: false }
}

use FeatureKind::{Boolean, Categorical, Numeric};

pub const PATIENT_ID_COLUMN: &str = "patient_id";
pub const LABEL_COLUMN: &str = "label";

pub const FEATURES: [FeatureSpec; 33] = [
    clinical("Diagnosi", Categorical),
    FeatureSpec { name: "Diagnosi_Secondary", kind: Categorical, clinical: true, echo: false, optional: true },
    clinical("HFpEF", Boolean),
    FeatureSpec { name: "EF", kind: Numeric, clinical: true, echo: true, optional: false },
    clinical("NYHA", Categorical),
    clinical("Age", Numeric),
    clinical("BMI", Numeric),
    clinical("Sex", Categorical),
    clinical("Hypertension", Boolean),
    clinical("Dyslipidemia", Boolean),
    clinical("Diabetes", Boolean),
    clinical("COPD", Boolean),
    clinical("BetaBlocc", Boolean),
    clinical("ACE_SART", Boolean),
    clinical("AntiAldosterone", Boolean),
    echo("PARETE POST", Numeric),
    echo("SETTO", Numeric),
    echo("LVES_DIAM", Numeric),
    echo("LVED_DIAM", Numeric),
    echo("VDx", Numeric),
    echo("LVMI", Numeric),
    echo("ASx", Numeric),
    echo("TAPSE", Numeric),
    echo("RS", Numeric),
    echo("BBSx", Boolean),
    echo("BBDx", Boolean),
    echo("NT-proBNP", Numeric),
    echo("Creatinine", Numeric),
    echo("Glucose", Numeric),
    echo("FA", Boolean),
    echo("Flutter", Boolean),
    echo("PM", Boolean),
    echo("Hb", Numeric),
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURES.iter().position(|f| f.name == name)
}

/// Full CSV header in canonical order.
pub fn csv_header() -> Vec<&'static str> {
    std::iter::once(PATIENT_ID_COLUMN)
        .chain(FEATURES.iter().map(|f| f.name))
        .chain(std::iter::once(LABEL_COLUMN))
        .collect()
}
