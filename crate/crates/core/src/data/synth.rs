use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encode::{encode, EncodedDataset, UnknownPolicy};
use super::schema::{infer_schema, InferOptions};
use super::table::RawTable;
use crate::error::{Error, Result};

/// Category of feature `g` (the second feature) that marks the planted slice.
pub const MINORITY_CATEGORY: &str = "g0";
/// Name of the feature carrying [`MINORITY_CATEGORY`].
pub const GROUP_FEATURE: &str = "g";
pub const SPURIOUS_FEATURE: &str = "s";
pub const TARGET: &str = "y";

/// Probability that an informative feature copies the label before the
/// uniform fallback is drawn.
const SIGNAL: f64 = 0.6;
const GROUP_CARD: usize = 4;
const INFORMATIVE_CARD: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub k: usize,
    pub bias: f64,
    pub minority_frac: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 4000,
            k: 4,
            bias: 0.95,
            minority_frac: 0.1,
            seed: 43,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(Error::config(format!("synth.n must be >= 100, got {}", self.n)));
        }
        if self.k < 2 {
            return Err(Error::config(format!("synth.k must be >= 2, got {}", self.k)));
        }
        if !(0.5..=1.0).contains(&self.bias) {
            return Err(Error::config(format!("synth.bias must lie in [0.5, 1], got {}", self.bias)));
        }
        if !(self.minority_frac > 0.0 && self.minority_frac < 1.0) {
            return Err(Error::config(format!(
                "synth.minority_frac must lie in (0, 1), got {}",
                self.minority_frac
            )));
        }
        Ok(())
    }
}

/// Generates the raw table.
///
/// Columns: `s` (binary spurious, agrees with `y` with probability `bias`
/// outside the slice and 0.5 inside it), `g` (slice marker: `g0` on exactly
/// `round(n * minority_frac)` rows, `g1..g3` uniformly elsewhere), then
/// `x2..x{k-1}` (three-valued, copying the label with probability 0.6,
/// uniform otherwise) and the target `y`.
pub fn synth_table(spec: &SynthSpec) -> Result<RawTable> {
    spec.validate()?;
    let mut rng = crate::util::rng(spec.seed);
    let n = spec.n;

    let n_min = ((n as f64) * spec.minority_frac).round() as usize;
    let mut in_slice = vec![false; n];
    for flag in in_slice.iter_mut().take(n_min) {
        *flag = true;
    }
    in_slice.shuffle(&mut rng);

    let mut header = vec![SPURIOUS_FEATURE.to_string(), GROUP_FEATURE.to_string()];
    header.extend((2..spec.k).map(|j| format!("x{j}")));
    header.push(TARGET.to_string());

    let mut rows = Vec::with_capacity(n);
    for &minority in &in_slice {
        let y: usize = rng.gen_range(0..2);
        let agree_p = if minority { 0.5 } else { spec.bias };
        let s = if rng.gen_bool(agree_p) { y } else { 1 - y };
        let g = if minority {
            0
        } else {
            rng.gen_range(1..GROUP_CARD)
        };
        let mut row = vec![format!("s{s}"), format!("g{g}")];
        for _ in 2..spec.k {
            let v = if rng.gen_bool(SIGNAL) {
                y
            } else {
                rng.gen_range(0..INFORMATIVE_CARD)
            };
            row.push(format!("v{v}"));
        }
        row.push(format!("{y}"));
        rows.push(row);
    }
    RawTable::new(header, rows)
}

/// Generates and encodes a synthetic dataset with a planted slice.
pub fn synth_spurious(n: usize, k: usize, bias: f64, minority_frac: f64, seed: u64) -> Result<EncodedDataset> {
    let spec = SynthSpec {
        n,
        k,
        bias,
        minority_frac,
        seed,
    };
    let table = synth_table(&spec)?;
    let schema = infer_schema(&table, TARGET, &InferOptions::default())?;
    encode(&table, &schema, UnknownPolicy::Strict)
}
