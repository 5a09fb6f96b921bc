use std::ops::{Add, AddAssign};
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub rot: u64,
    pub hoisted_rot_groups: u64,
    pub hoisted_rot_total: u64,
    pub mult: u64,
    pub mult_plain: u64,
    pub rescale: u64,
    pub add: u64,
}

impl OpCount {
    /// Plain plus hoisted rotations.
    pub fn rotations(&self) -> u64 {
        self.rot + self.hoisted_rot_total
    }

    pub fn delta(&self, other: &OpCount) -> OpCountDelta {
        let d = |a: u64, b: u64| a as i64 - b as i64;
        OpCountDelta {
            rot: d(self.rot, other.rot),
            hoisted_rot_groups: d(self.hoisted_rot_groups, other.hoisted_rot_groups),
            hoisted_rot_total: d(self.hoisted_rot_total, other.hoisted_rot_total),
            mult: d(self.mult, other.mult),
            mult_plain: d(self.mult_plain, other.mult_plain),
            rescale: d(self.rescale, other.rescale),
            add: d(self.add, other.add),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCountDelta {
    pub rot: i64,
    pub hoisted_rot_groups: i64,
    pub hoisted_rot_total: i64,
    pub mult: i64,
    pub mult_plain: i64,
    pub rescale: i64,
    pub add: i64,
}

impl OpCountDelta {
    pub fn is_zero(&self) -> bool {
        *self == OpCountDelta::default()
    }
}

impl Add for OpCount {
    type Output = OpCount;
    fn add(mut self, o: OpCount) -> OpCount {
        self += o;
        self
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, o: OpCount) {
        self.rot += o.rot;
        self.hoisted_rot_groups += o.hoisted_rot_groups;
        self.hoisted_rot_total += o.hoisted_rot_total;
        self.mult += o.mult;
        self.mult_plain += o.mult_plain;
        self.rescale += o.rescale;
        self.add += o.add;
    }
}

impl std::iter::Sum for OpCount {
    fn sum<I: Iterator<Item = OpCount>>(iter: I) -> OpCount {
        iter.fold(OpCount::default(), |a, b| a + b)
    }
}

/// Per-layer tallies. Updates take a lock, so parallel workers may share one instance.
#[derive(Debug)]
pub struct Counters {
    current: Mutex<String>,
    table: Mutex<IndexMap<String, OpCount>>,
}

impl Default for Counters {
    fn default() -> Self {
        Counters { current: Mutex::new("unlabeled".into()), table: Mutex::new(IndexMap::new()) }
    }
}

impl Counters {
    pub fn set_layer(&self, label: &str) {
        *self.current.lock().expect("counter lock") = label.to_string();
    }

    pub fn layer(&self) -> String {
        self.current.lock().expect("counter lock").clone()
    }

    pub(crate) fn bump(&self, f: impl FnOnce(&mut OpCount)) {
        let label = self.current.lock().expect("counter lock").clone();
        let mut table = self.table.lock().expect("counter lock");
        f(table.entry(label).or_default());
    }

    pub fn snapshot(&self) -> IndexMap<String, OpCount> {
        self.table.lock().expect("counter lock").clone()
    }

    pub fn get(&self, label: &str) -> OpCount {
        self.table.lock().expect("counter lock").get(label).copied().unwrap_or_default()
    }

    pub fn total(&self) -> OpCount {
        self.table.lock().expect("counter lock").values().copied().sum()
    }

    pub fn reset(&self) {
        self.table.lock().expect("counter lock").clear();
    }

    /// `{layer -> counts}` JSON table, layers in first-use order.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.snapshot()).expect("counts serialize")
    }
}
