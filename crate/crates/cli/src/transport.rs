use std::time::Duration;

use kcc_core::ingest::{Transport, TransportError};
use reqwest::blocking::Client;

/// Blocking HTTP transport for the KKMS export endpoint.
pub struct HttpTransport {
    client: Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> reqwest::Result<Self> {
        Ok(HttpTransport { client: Client::builder().timeout(timeout).build()? })
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<String, TransportError> {
        let res = self.client.get(url).send().map_err(classify)?;
        let status = res.status();
        if !status.is_success() {
            return Err(TransportError::Status(status.as_u16()));
        }
        res.text().map_err(classify)
    }
}

fn classify(e: reqwest::Error) -> TransportError {
    if e.is_timeout() {
        TransportError::Timeout
    } else {
        TransportError::Unreachable(e.to_string())
    }
}
