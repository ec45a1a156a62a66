//! Line-delimited JSON logger on stderr, filtered by `SCENESYNC_LOG`.

use std::io::Write;

use log::{Level, LevelFilter, Log, Metadata, Record};

pub const ENV_VAR: &str = "SCENESYNC_LOG";

struct JsonLines {
    level: LevelFilter,
}

impl Log for JsonLines {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= self.level
    }

    fn log(&self, r: &Record) {
        if !self.enabled(r.metadata()) {
            return;
        }
        let line = serde_json::json!({
            "level": r.level().as_str().to_ascii_lowercase(),
            "target": r.target(),
            "message": r.args().to_string(),
        });
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{line}");
    }

    fn flush(&self) {
        let _ = std::io::stderr().flush();
    }
}

fn parse_level(v: &str) -> Option<LevelFilter> {
    match v.trim().to_ascii_lowercase().as_str() {
        "error" => Some(LevelFilter::Error),
        "warn" => Some(LevelFilter::Warn),
        "info" => Some(LevelFilter::Info),
        "debug" => Some(LevelFilter::Debug),
        _ => None,
    }
}

/// Installs the logger; unset or unrecognized values mean `warn`.
pub fn init() {
    let raw = std::env::var(ENV_VAR).ok();
    let level = raw.as_deref().and_then(parse_level);
    let filter = level.unwrap_or(LevelFilter::Warn);
    if log::set_boxed_logger(Box::new(JsonLines { level: filter })).is_ok() {
        log::set_max_level(filter);
    }
    if let (Some(v), None) = (raw, level) {
        log::log!(Level::Warn, "ignoring {ENV_VAR}={v:?}; expected error, warn, info or debug");
    }
}
