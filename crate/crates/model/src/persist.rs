use std::path::Path;

use lfv_autodiff::{checkpoint, Real};
use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{ModelError, Result};
use crate::network::Network;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    channels: usize,
}

impl<T: Real> Network<T> {
    /// Writes `<base>.bin` and `<base>.json`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            channels: self.channels(),
        };
        let value = serde_json::to_value(&header).expect("header serializes");
        Ok(checkpoint::save(&self.store, base, value)?)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (store, value) = checkpoint::load::<T>(base)?;
        let header: Header = serde_json::from_value(value)
            .map_err(|e| ModelError::Config(format!("checkpoint header: {e}")))?;
        let mut net = Network::new(header.config, header.channels)?;
        net.store.copy_from(&store)?;
        Ok(net)
    }
}
