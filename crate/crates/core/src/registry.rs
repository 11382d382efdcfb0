//! Name-keyed strategy registry used for encoders, perturbations, forgery kinds,
//! fillers, mixers and caption clients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Maps names to boxed strategy factories. Lookup is by exact name.
pub struct Registry<F: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Box<F>>,
}

impl<F: ?Sized> Registry<F> {
    pub fn new(kind: &'static str) -> Self {
        Registry { kind, entries: BTreeMap::new() }
    }

    /// Registers `entry` under `name`, replacing any previous entry with that name.
    pub fn register(&mut self, name: impl Into<String>, entry: Box<F>) -> &mut Self {
        self.entries.insert(name.into(), entry);
        self
    }

    pub fn get(&self, name: &str) -> Result<&F> {
        self.entries.get(name).map(|b| &**b).ok_or_else(|| {
            Error::validation(format!(
                "unknown {} '{}' (registered: {})",
                self.kind,
                name,
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}
