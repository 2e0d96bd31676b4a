use serde::{Deserialize, Serialize};

/// One line of the metrics stream. `total` always equals
/// `L_G + λ·L_D + γ·L_A` with absent terms as zero; absent terms
/// serialize as null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    #[serde(rename = "L_G")]
    pub l_g: f64,
    #[serde(rename = "L_D")]
    pub l_d: Option<f64>,
    #[serde(rename = "L_A")]
    pub l_a: Option<f64>,
    pub total: f64,
    pub misprediction_rate: Option<f64>,
}

impl StepMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics always serialize")
    }
}
