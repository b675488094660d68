use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureKind, Schema};
use super::table::RawTable;
use crate::error::{Error, Result};

/// What to do with a categorical value missing from the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPolicy {
    #[default]
    Strict,
    /// Map to the reserved index `cardinality`.
    Unk,
}

/// Integer-coded categorical block, standardized continuous block and labels.
///
/// Categorical cells are stored row-major as `n × k`, continuous cells as
/// `n × c`. A categorical cell equal to the feature's cardinality is the
/// reserved unknown index.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub schema: Arc<Schema>,
    pub cat: Vec<u32>,
    pub cont: Vec<f64>,
    pub labels: Vec<u8>,
    pub row_ids: Vec<u64>,
}

impl EncodedDataset {
    pub fn new(
        schema: Arc<Schema>,
        cat: Vec<u32>,
        cont: Vec<f64>,
        labels: Vec<u8>,
        row_ids: Vec<u64>,
    ) -> Result<Self> {
        let n = labels.len();
        let (k, c) = (schema.k(), schema.c());
        if cat.len() != n * k || cont.len() != n * c || row_ids.len() != n {
            return Err(Error::shape(format!(
                "blocks disagree on row count: cat {} (k={k}), cont {} (c={c}), labels {n}, ids {}",
                cat.len(),
                cont.len(),
                row_ids.len()
            )));
        }
        let cards = schema.cardinalities();
        for (i, row) in cat.chunks(k.max(1)).enumerate().take(n) {
            for (j, &v) in row.iter().enumerate() {
                if v as usize > cards[j] {
                    return Err(Error::data(format!(
                        "row {i}: feature {j} index {v} exceeds cardinality {}",
                        cards[j]
                    )));
                }
            }
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::data(format!("row {i}: label {} not binary", labels[i])));
        }
        Ok(Self {
            schema,
            cat,
            cont,
            labels,
            row_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.schema.k()
    }

    pub fn c(&self) -> usize {
        self.schema.c()
    }

    pub fn cat_row(&self, i: usize) -> &[u32] {
        let k = self.k();
        &self.cat[i * k..(i + 1) * k]
    }

    pub fn cont_row(&self, i: usize) -> &[f64] {
        let c = self.c();
        &self.cont[i * c..(i + 1) * c]
    }

    pub fn cat_value(&self, i: usize, j: usize) -> u32 {
        self.cat[i * self.k() + j]
    }

    /// Rows at the given positions, in the given order.
    pub fn subset(&self, positions: &[usize]) -> Self {
        let (k, c) = (self.k(), self.c());
        let mut cat = Vec::with_capacity(positions.len() * k);
        let mut cont = Vec::with_capacity(positions.len() * c);
        let mut labels = Vec::with_capacity(positions.len());
        let mut row_ids = Vec::with_capacity(positions.len());
        for &p in positions {
            cat.extend_from_slice(self.cat_row(p));
            cont.extend_from_slice(self.cont_row(p));
            labels.push(self.labels[p]);
            row_ids.push(self.row_ids[p]);
        }
        Self {
            schema: self.schema.clone(),
            cat,
            cont,
            labels,
            row_ids,
        }
    }

    /// Rows with the given ids, in the given order.
    pub fn select_ids(&self, ids: &[u64]) -> Result<Self> {
        let index: HashMap<u64, usize> = self
            .row_ids
            .iter()
            .enumerate()
            .map(|(p, &id)| (id, p))
            .collect();
        let positions = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::data(format!("row id {id} not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset(&positions))
    }

    /// Raw string for a categorical cell.
    pub fn decode_category(&self, j: usize, idx: u32) -> Option<&str> {
        self.schema
            .vocabulary(j)
            .and_then(|v| v.get(idx as usize))
            .map(String::as_str)
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Reverses the encoding into a raw table in schema column order.
    pub fn to_table(&self) -> RawTable {
        let mut header: Vec<String> = self.schema.features.iter().map(|f| f.name.clone()).collect();
        header.push(self.schema.target_name.clone());
        let mut rows = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            let (mut j, mut l) = (0, 0);
            let mut row = Vec::with_capacity(header.len());
            for f in &self.schema.features {
                match &f.kind {
                    FeatureKind::Categorical { vocabulary, .. } => {
                        let idx = self.cat_value(i, j) as usize;
                        row.push(vocabulary.get(idx).cloned().unwrap_or_default());
                        j += 1;
                    }
                    FeatureKind::Continuous { mean, std } => {
                        row.push(format!("{}", self.cont_row(i)[l] * std + mean));
                        l += 1;
                    }
                }
            }
            row.push(self.schema.target_values[self.labels[i] as usize].clone());
            rows.push(row);
        }
        RawTable { header, rows }
    }
}

/// Maps raw strings onto schema indices and standardized reals.
pub fn encode(table: &RawTable, schema: &Schema, policy: UnknownPolicy) -> Result<EncodedDataset> {
    schema.validate()?;
    let col = |name: &str| {
        table
            .column_index(name)
            .ok_or_else(|| Error::data(format!("column {name:?} missing from table")))
    };
    let target_idx = col(&schema.target_name)?;

    struct CatCol<'a> {
        idx: usize,
        name: &'a str,
        lookup: HashMap<&'a str, u32>,
        card: u32,
    }
    let mut cat_cols = Vec::new();
    let mut cont_cols = Vec::new();
    for f in &schema.features {
        let idx = col(&f.name)?;
        match &f.kind {
            FeatureKind::Categorical { vocabulary, .. } => cat_cols.push(CatCol {
                idx,
                name: &f.name,
                lookup: vocabulary
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.as_str(), i as u32))
                    .collect(),
                card: vocabulary.len() as u32,
            }),
            FeatureKind::Continuous { mean, std } => cont_cols.push((idx, f.name.as_str(), *mean, *std)),
        }
    }

    let n = table.n_rows();
    let mut cat = Vec::with_capacity(n * cat_cols.len());
    let mut cont = Vec::with_capacity(n * cont_cols.len());
    let mut labels = Vec::with_capacity(n);
    for (r, row) in table.rows.iter().enumerate() {
        for cc in &cat_cols {
            let raw = row[cc.idx].as_str();
            if raw.is_empty() {
                return Err(Error::data(format!("row {r}: missing value for {:?}", cc.name)));
            }
            match cc.lookup.get(raw) {
                Some(&v) => cat.push(v),
                None if policy == UnknownPolicy::Unk => cat.push(cc.card),
                None => {
                    return Err(Error::data(format!(
                        "row {r}: unseen category {raw:?} for feature {:?}",
                        cc.name
                    )))
                }
            }
        }
        for &(idx, name, mean, std) in &cont_cols {
            let v: f64 = row[idx].parse().map_err(|_| {
                Error::data(format!("row {r}: {:?} is not numeric for {name:?}", row[idx]))
            })?;
            cont.push((v - mean) / std);
        }
        let y = &row[target_idx];
        let label = if *y == schema.target_values[1] {
            1
        } else if *y == schema.target_values[0] {
            0
        } else {
            return Err(Error::data(format!("row {r}: unknown target value {y:?}")));
        };
        labels.push(label);
    }
    EncodedDataset::new(
        Arc::new(schema.clone()),
        cat,
        cont,
        labels,
        (0..n as u64).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{infer_schema, InferOptions, KindHint};
    use proptest::prelude::*;

    fn table(header: &[&str], rows: &[Vec<String>]) -> RawTable {
        RawTable::new(header.iter().map(|s| s.to_string()).collect(), rows.to_vec()).unwrap()
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn categorical_indices() {
        let t = table(&["x", "y"], &[s(&["a", "0"]), s(&["b", "1"]), s(&["a", "0"])]);
        let schema = infer_schema(&t, "y", &InferOptions::default()).unwrap();
        let ds = encode(&t, &schema, UnknownPolicy::Strict).unwrap();
        assert_eq!(ds.cat, vec![0, 1, 0]);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.row_ids, vec![0, 1, 2]);
    }

    #[test]
    fn zscore() {
        let t = table(
            &["x", "v", "y"],
            &[s(&["a", "2", "0"]), s(&["b", "4", "1"]), s(&["a", "6", "0"])],
        );
        let mut opts = InferOptions::default();
        opts.overrides.insert("v".into(), KindHint::Continuous);
        let mut schema = infer_schema(&t, "y", &opts).unwrap();
        schema.features[1].kind = FeatureKind::Continuous { mean: 4.0, std: 2.0 };
        let ds = encode(&t, &schema, UnknownPolicy::Strict).unwrap();
        assert_eq!(ds.cont, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn fitted_columns_are_standardized() {
        let rows: Vec<Vec<String>> = (0..200)
            .map(|i| {
                let v = ((i * 7919) % 997) as f64 / 13.0;
                vec![format!("{v}"), format!("g{}", i % 3), format!("{}", i % 2)]
            })
            .collect();
        let t = table(&["v", "g", "y"], &rows);
        let mut opts = InferOptions::default();
        opts.overrides.insert("v".into(), KindHint::Continuous);
        let schema = infer_schema(&t, "y", &opts).unwrap();
        let ds = encode(&t, &schema, UnknownPolicy::Strict).unwrap();
        let (m, sd) = crate::data::schema::moments(&ds.cont);
        assert!(m.abs() < 1e-9, "{m}");
        assert!((sd - 1.0).abs() < 1e-9, "{sd}");
    }

    #[test]
    fn unseen_category() {
        let train = table(&["x", "y"], &[s(&["a", "0"]), s(&["b", "1"])]);
        let schema = infer_schema(&train, "y", &InferOptions::default()).unwrap();
        let test = table(&["x", "y"], &[s(&["a", "0"]), s(&["zzz", "1"])]);
        let err = encode(&test, &schema, UnknownPolicy::Strict).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("\"x\""), "{msg}");
        let ds = encode(&test, &schema, UnknownPolicy::Unk).unwrap();
        assert_eq!(ds.cat, vec![0, 2]);
    }

    #[test]
    fn bad_numeric() {
        let t = table(&["x", "v", "y"], &[s(&["a", "1", "0"]), s(&["b", "2", "1"])]);
        let mut opts = InferOptions::default();
        opts.overrides.insert("v".into(), KindHint::Continuous);
        let schema = infer_schema(&t, "y", &opts).unwrap();
        let bad = table(&["x", "v", "y"], &[s(&["a", "oops", "0"])]);
        assert!(encode(&bad, &schema, UnknownPolicy::Strict).is_err());
    }

    proptest! {
        #[test]
        fn decode_round_trip(cells in prop::collection::vec((0usize..5, 0usize..3, any::<bool>()), 2..60)) {
            let mut rows: Vec<Vec<String>> = cells
                .iter()
                .map(|(a, b, y)| vec![format!("a{a}"), format!("b{b}"), format!("{}", *y as u8)])
                .collect();
            // guarantee two distinct values everywhere
            rows.push(s(&["a_extra", "b_extra", "0"]));
            rows.push(s(&["a_other", "b_other", "1"]));
            let t = table(&["a", "b", "y"], &rows);
            let schema = infer_schema(&t, "y", &InferOptions::default()).unwrap();
            let ds = encode(&t, &schema, UnknownPolicy::Strict).unwrap();
            for i in 0..ds.n() {
                for j in 0..ds.k() {
                    prop_assert_eq!(ds.decode_category(j, ds.cat_value(i, j)).unwrap(), rows[i][j].as_str());
                }
            }
            prop_assert_eq!(ds.to_table(), t);
        }
    }
}
