use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Something that can be registered under a stable name.
pub trait Named {
    fn name(&self) -> &'static str;
}

/// Name-keyed table of interchangeable strategies.
pub struct Registry<T: ?Sized + Named> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Arc<T>>,
    order: Vec<&'static str>,
    aliases: BTreeMap<&'static str, &'static str>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
            order: Vec::new(),
            aliases: BTreeMap::new(),
        }
    }

    /// Panics on duplicate names; registration happens once at construction.
    pub fn register(mut self, entry: Arc<T>) -> Self {
        let name = entry.name();
        assert!(
            self.entries.insert(name, entry).is_none(),
            "{} `{name}` registered twice",
            self.kind
        );
        self.order.push(name);
        self
    }

    pub fn alias(mut self, alias: &'static str, target: &'static str) -> Self {
        assert!(
            self.entries.contains_key(target),
            "alias to unknown {} `{target}`",
            self.kind
        );
        self.aliases.insert(alias, target);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        let key = self.aliases.get(name).copied().unwrap_or(name);
        self.entries.get(key).cloned().ok_or_else(|| Error::Lookup {
            kind: self.kind,
            name: name.to_string(),
        })
    }

    /// Canonical names in registration order.
    pub fn names(&self) -> &[&'static str] {
        &self.order
    }

    pub fn iter(&self) -> impl Iterator<Item = Arc<T>> + '_ {
        self.order.iter().map(|n| self.entries[n].clone())
    }
}
