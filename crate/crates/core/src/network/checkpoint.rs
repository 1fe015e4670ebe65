use std::path::Path;

use super::{Network, NetworkConfig};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::kv::KvRecord;

/// Archive entry holding the `key=value` network configuration.
pub const CONFIG_ENTRY: &str = "config.txt";

impl Network {
    /// Parameters as DTSR entries plus the configuration record.
    pub fn to_archive(&self) -> Result<Archive> {
        let mut ar = Archive::new();
        ar.insert_text(CONFIG_ENTRY, &self.cfg.to_kv().to_string())?;
        self.params.write_archive(&mut ar, "")?;
        Ok(ar)
    }

    pub fn from_archive(ar: &Archive) -> Result<Self> {
        let kv = KvRecord::parse(&ar.text(CONFIG_ENTRY)?)?;
        kv.reject_unknown(super::config::CONFIG_KEYS)?;
        let cfg = NetworkConfig::from_kv(&kv)?;
        let mut net = Network::new(&cfg)?;
        net.params.read_archive(ar, "")?;
        let expected = net.params.len() + 1;
        if ar.len() != expected {
            return Err(Error::Parse(format!(
                "checkpoint has {} entries, configuration implies {expected}",
                ar.len()
            )));
        }
        Ok(net)
    }
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    net.to_archive()?.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    Network::from_archive(&Archive::load(path)?)
}
