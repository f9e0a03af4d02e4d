//! Calibrated item banks.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::irt::{ItemParams, KernelParams};

/// One calibrated item with its precomputed information kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub item_id: String,
    pub item_type: String,
    pub tags: BTreeSet<String>,
    pub params: ItemParams,
    pub kernel: KernelParams,
}

impl Item {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }
}

/// Flat on-disk representation of an [`Item`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankRecord {
    pub item_id: String,
    pub item_type: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub a: f64,
    pub c: f64,
    pub d: f64,
    pub h: f64,
    pub mu: f64,
    pub nu: f64,
}

impl From<&Item> for BankRecord {
    fn from(item: &Item) -> Self {
        Self {
            item_id: item.item_id.clone(),
            item_type: item.item_type.clone(),
            tags: item.tags.iter().cloned().collect(),
            a: item.params.a,
            c: item.params.c,
            d: item.params.d,
            h: item.kernel.h,
            mu: item.kernel.mu,
            nu: item.kernel.nu,
        }
    }
}

impl TryFrom<BankRecord> for Item {
    type Error = Error;

    fn try_from(r: BankRecord) -> Result<Self> {
        let params = ItemParams::new(r.a, r.c, r.d)
            .map_err(|e| Error::Malformed(format!("item {}: {e}", r.item_id)))?;
        let kernel = KernelParams::new(r.h, r.mu, r.nu)
            .map_err(|e| Error::Malformed(format!("item {}: {e}", r.item_id)))?;
        if r.item_id.is_empty() {
            return Err(Error::Malformed("empty item_id".into()));
        }
        Ok(Self {
            item_id: r.item_id,
            item_type: r.item_type,
            tags: r.tags.into_iter().collect(),
            params,
            kernel,
        })
    }
}

/// An item bank indexed by id and by item type. Item order is preserved.
#[derive(Debug, Clone, Default)]
pub struct ItemBank {
    items: Vec<Item>,
    by_id: HashMap<String, usize>,
    by_type: BTreeMap<String, Vec<usize>>,
}

impl ItemBank {
    pub fn new(items: Vec<Item>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(items.len());
        let mut by_type: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if by_id.insert(item.item_id.clone(), i).is_some() {
                return Err(Error::DuplicateItem(item.item_id.clone()));
            }
            by_type.entry(item.item_type.clone()).or_default().push(i);
        }
        Ok(Self {
            items,
            by_id,
            by_type,
        })
    }

    pub fn from_records(records: Vec<BankRecord>) -> Result<Self> {
        let items = records
            .into_iter()
            .map(Item::try_from)
            .collect::<Result<Vec<_>>>()?;
        Self::new(items)
    }

    pub fn records(&self) -> Vec<BankRecord> {
        self.items.iter().map(BankRecord::from).collect()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&Item> {
        self.by_id.get(item_id).map(|&i| &self.items[i])
    }

    pub fn has_type(&self, item_type: &str) -> bool {
        self.by_type.contains_key(item_type)
    }

    pub fn item_types(&self) -> impl Iterator<Item = &str> {
        self.by_type.keys().map(String::as_str)
    }

    pub fn of_type<'a>(&'a self, item_type: &str) -> impl Iterator<Item = &'a Item> + 'a {
        self.by_type
            .get(item_type)
            .into_iter()
            .flatten()
            .map(move |&i| &self.items[i])
    }

    pub fn count_of_type(&self, item_type: &str) -> usize {
        self.by_type.get(item_type).map_or(0, Vec::len)
    }
}
