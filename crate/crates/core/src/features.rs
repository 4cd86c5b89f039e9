//! The features data model: a `[m, n]` data matrix, a `[m, 1]` (frame
//! centers) or `[m, 2]` (onset/offset) time matrix, and a tree of
//! properties recording how the features were obtained.

use std::collections::BTreeMap;

use ndarray::{concatenate as nd_concatenate, Array2, Axis};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Tolerance, in seconds, when comparing the times of two features.
pub const TIMES_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    data: Array2<f64>,
    times: Array2<f64>,
    properties: Value,
}

impl Features {
    /// Builds validated features. `properties` must be a JSON object.
    pub fn new(data: Array2<f64>, times: Array2<f64>, properties: Value) -> Result<Self> {
        let f = Self {
            data,
            times,
            properties,
        };
        f.validate()?;
        Ok(f)
    }

    /// Features with `[m, 1]` center times.
    pub fn with_centers(data: Array2<f64>, centers: &[f64], properties: Value) -> Result<Self> {
        let times = Array2::from_shape_vec((centers.len(), 1), centers.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data, times, properties)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn times(&self) -> &Array2<f64> {
        &self.times
    }

    pub fn properties(&self) -> &Value {
        &self.properties
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>, Value) {
        (self.data, self.times, self.properties)
    }

    pub fn nframes(&self) -> usize {
        self.data.nrows()
    }

    pub fn ndims(&self) -> usize {
        self.data.ncols()
    }

    /// Returns a copy with new data of the same frame count, keeping times.
    pub fn with_data(&self, data: Array2<f64>, properties: Value) -> Result<Self> {
        Self::new(data, self.times.clone(), properties)
    }

    pub fn set_property(&mut self, key: &str, value: Value) {
        if let Value::Object(map) = &mut self.properties {
            map.insert(key.to_string(), value);
        }
    }

    /// Checks every invariant of the type: matching non-zero row counts,
    /// one or two time columns, strictly increasing times, onset < offset
    /// and finite values.
    pub fn validate(&self) -> Result<()> {
        let m = self.data.nrows();
        if m == 0 {
            return Err(Error::Invariant("features have no frames".into()));
        }
        if self.times.nrows() != m {
            return Err(Error::Invariant(format!(
                "data has {m} frames but times have {}",
                self.times.nrows()
            )));
        }
        let tcols = self.times.ncols();
        if tcols != 1 && tcols != 2 {
            return Err(Error::Invariant(format!(
                "times must have 1 or 2 columns, found {tcols}"
            )));
        }
        if let Some(v) = self.data.iter().chain(self.times.iter()).find(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("non-finite value {v}")));
        }
        let starts = self.times.column(0);
        for i in 1..m {
            if starts[i] <= starts[i - 1] {
                return Err(Error::Invariant(format!(
                    "times not strictly increasing at frame {i}"
                )));
            }
        }
        if tcols == 2 {
            for (i, row) in self.times.rows().into_iter().enumerate() {
                if row[0] >= row[1] {
                    return Err(Error::Invariant(format!(
                        "onset not before offset at frame {i}"
                    )));
                }
            }
        }
        if !self.properties.is_object() {
            return Err(Error::Invariant("properties must be an object".into()));
        }
        Ok(())
    }

    /// True when both features have the same time shape and values within
    /// [`TIMES_TOLERANCE`].
    pub fn same_times(&self, other: &Features) -> bool {
        self.times.dim() == other.times.dim()
            && self
                .times
                .iter()
                .zip(other.times.iter())
                .all(|(a, b)| (a - b).abs() <= TIMES_TOLERANCE)
    }

    /// Concatenates along the channel axis: columns of `self` then columns
    /// of `other`. Properties are merged under one key per source processor.
    pub fn concatenate(&self, other: &Features) -> Result<Features> {
        if self.nframes() != other.nframes() {
            return Err(Error::Shape(format!(
                "cannot concatenate {} frames with {} frames",
                self.nframes(),
                other.nframes()
            )));
        }
        if !self.same_times(other) {
            return Err(Error::Shape("cannot concatenate features with different times".into()));
        }
        let data = nd_concatenate(Axis(1), &[self.data.view(), other.data.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let mut props = Map::new();
        merge_properties(&mut props, &self.properties);
        merge_properties(&mut props, &other.properties);
        Features::new(data, self.times.clone(), Value::Object(props))
    }
}

/// Adds `source` to a merged property tree. A tree naming its processor is
/// namespaced under that name; an already merged tree is spread. Colliding
/// keys get a numeric suffix.
fn merge_properties(merged: &mut Map<String, Value>, source: &Value) {
    let Value::Object(map) = source else { return };
    let mut insert = |key: &str, value: Value| {
        let mut name = key.to_string();
        let mut i = 2;
        while merged.contains_key(&name) {
            name = format!("{key}#{i}");
            i += 1;
        }
        merged.insert(name, value);
    };
    match map.get("processor").and_then(Value::as_str) {
        Some(processor) => insert(processor, source.clone()),
        None => {
            for (k, v) in map {
                insert(k, v.clone());
            }
        }
    }
}

/// Features indexed by utterance name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeaturesCollection {
    items: BTreeMap<String, Features>,
}

impl FeaturesCollection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, features: Features) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::param("name", "features name is empty"));
        }
        self.items.insert(name, features);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Features> {
        self.items.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Features> {
        self.items.remove(name)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::collections::btree_map::Iter<'_, String, Features> {
        self.items.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.items.keys().map(String::as_str)
    }
}

impl FromIterator<(String, Features)> for FeaturesCollection {
    fn from_iter<I: IntoIterator<Item = (String, Features)>>(iter: I) -> Self {
        Self {
            items: iter.into_iter().collect(),
        }
    }
}

impl IntoIterator for FeaturesCollection {
    type Item = (String, Features);
    type IntoIter = std::collections::btree_map::IntoIter<String, Features>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.into_iter()
    }
}

impl<'a> IntoIterator for &'a FeaturesCollection {
    type Item = (&'a String, &'a Features);
    type IntoIter = std::collections::btree_map::Iter<'a, String, Features>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use serde_json::json;

    fn feats(m: usize, n: usize, processor: &str) -> Features {
        let data = Array::from_shape_fn((m, n), |(i, j)| (i * 10 + j) as f64);
        let centers: Vec<f64> = (0..m).map(|i| 0.0125 + 0.01 * i as f64).collect();
        Features::with_centers(data, &centers, json!({"processor": processor})).unwrap()
    }

    #[test]
    fn mfcc_plus_pitch() {
        let c = feats(98, 13, "mfcc").concatenate(&feats(98, 3, "pitch")).unwrap();
        assert_eq!(c.data().dim(), (98, 16));
        assert_eq!(c.properties()["mfcc"]["processor"], "mfcc");
        assert_eq!(c.properties()["pitch"]["processor"], "pitch");
    }

    #[test]
    fn empty_channels_identity() {
        let x = feats(10, 4, "a");
        let c = x.concatenate(&feats(10, 0, "b")).unwrap();
        assert_eq!(c.data(), x.data());
    }

    #[test]
    fn frame_count_mismatch() {
        assert!(matches!(
            feats(98, 13, "a").concatenate(&feats(97, 3, "b")),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn time_mismatch() {
        let a = feats(5, 2, "a");
        let b = Features::with_centers(Array2::zeros((5, 1)), &[0.0, 1.0, 2.0, 3.0, 4.0], json!({}))
            .unwrap();
        assert!(a.concatenate(&b).is_err());
    }

    #[test]
    fn colliding_processors() {
        let c = feats(3, 1, "x").concatenate(&feats(3, 1, "x")).unwrap();
        let keys: Vec<_> = c.properties().as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, vec!["x", "x#2"]);
    }

    #[test]
    fn invariants() {
        let data = Array2::<f64>::zeros((3, 2));
        assert!(Features::with_centers(data.clone(), &[0.0, 0.0, 1.0], json!({})).is_err());
        assert!(Features::with_centers(Array2::zeros((0, 2)), &[], json!({})).is_err());
        let bad = Array2::from_shape_vec((3, 2), vec![0.0, 1.0, 1.0, 0.5, 2.0, 3.0]).unwrap();
        assert!(Features::new(data.clone(), bad, json!({})).is_err());
        let mut nan = data.clone();
        nan[[1, 1]] = f64::NAN;
        assert!(Features::with_centers(nan, &[0.0, 1.0, 2.0], json!({})).is_err());
        let good = Array2::from_shape_vec((3, 2), vec![0.0, 1.0, 0.5, 1.5, 2.0, 3.0]).unwrap();
        assert!(Features::new(data, good, json!({})).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn concatenate_associative(m in 1usize..20, na in 0usize..5, nb in 0usize..5, nc in 0usize..5) {
            let (a, b, c) = (feats(m, na, "a"), feats(m, nb, "b"), feats(m, nc, "c"));
            let left = a.concatenate(&b).unwrap().concatenate(&c).unwrap();
            let right = a.concatenate(&b.concatenate(&c).unwrap()).unwrap();
            proptest::prop_assert_eq!(left.data(), right.data());
            proptest::prop_assert_eq!(left.properties(), right.properties());
        }
    }
}
