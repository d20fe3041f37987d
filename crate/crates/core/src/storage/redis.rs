//! Redis deployment of the log store.
//!
//! Key schema, per participant log and transaction:
//!
//! * `data-<log>-<txn>`: opaque user data, written only by the owner;
//! * `state-<log>-<txn>`: transaction state as a small integer
//!   (1 = VOTE_YES, 2 = ABORT, 3 = COMMIT; absent = NONE).
//!
//! Access control is a deployment concern: each participant gets read-write
//! access to `data-<self>*` and `state-*` only.

use std::sync::Mutex;
use std::time::Duration;

use redis::{Client, Connection, Script};

use super::{LogStore, Origin, StorageError};
use crate::types::{LogId, LogState, RecordType, TxnId};

/// Atomic LogOnce: optional data write, set-if-not-exists on the state key,
/// then read the state back.
pub const LOG_ONCE_SCRIPT: &str = r"
if ARGV[1] ~= '' then
  redis.call('set', KEYS[1], ARGV[1])
end
redis.call('setnx', KEYS[2], ARGV[2])
local state = tonumber(redis.call('get', KEYS[2]))
return {state}
";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RedisConfig {
    pub endpoint: String,
    pub timeout: Duration,
}

impl RedisConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RedisConfig { endpoint: endpoint.into(), timeout: Duration::from_millis(2000) }
    }
}

pub struct RedisStore {
    conn: Mutex<Connection>,
    log_once: Script,
}

fn unavailable(e: redis::RedisError) -> StorageError {
    StorageError::Unavailable(e.to_string())
}

pub fn data_key(log: LogId, txn: TxnId) -> String {
    format!("data-{log}-{txn}")
}

pub fn state_key(log: LogId, txn: TxnId) -> String {
    format!("state-{log}-{txn}")
}

fn decode(code: i64) -> Result<LogState, StorageError> {
    LogState::from_code(code).ok_or(StorageError::BadStateCode(code))
}

impl RedisStore {
    pub fn connect(cfg: &RedisConfig) -> Result<Self, StorageError> {
        let client = Client::open(cfg.endpoint.as_str()).map_err(unavailable)?;
        let conn = client.get_connection_with_timeout(cfg.timeout).map_err(unavailable)?;
        conn.set_read_timeout(Some(cfg.timeout)).map_err(unavailable)?;
        conn.set_write_timeout(Some(cfg.timeout)).map_err(unavailable)?;
        Ok(RedisStore { conn: Mutex::new(conn), log_once: Script::new(LOG_ONCE_SCRIPT) })
    }

    /// LogOnce that also stores the participant's user data in the same
    /// atomic script invocation.
    pub fn log_once_with_data(&self, log: LogId, txn: TxnId, rec: RecordType, data: &[u8]) -> Result<LogState, StorageError> {
        if !rec.is_vote() {
            return Err(StorageError::NotAVote(rec));
        }
        let mut conn = self.conn.lock().unwrap();
        let reply: Vec<i64> = self
            .log_once
            .key(data_key(log, txn))
            .key(state_key(log, txn))
            .arg(data)
            .arg(LogState::from(rec).code())
            .invoke(&mut *conn)
            .map_err(unavailable)?;
        let code = reply.first().copied().ok_or(StorageError::BadStateCode(-1))?;
        decode(code)
    }

    /// Deletes both keys of a slot so a scenario can be rerun.
    pub fn clear(&self, log: LogId, txn: TxnId) -> Result<(), StorageError> {
        let mut conn = self.conn.lock().unwrap();
        redis::cmd("DEL").arg(data_key(log, txn)).arg(state_key(log, txn)).query::<()>(&mut *conn).map_err(unavailable)
    }

    /// Raw state-key value, for inspection.
    pub fn state_code(&self, log: LogId, txn: TxnId) -> Result<Option<i64>, StorageError> {
        let mut conn = self.conn.lock().unwrap();
        redis::cmd("GET").arg(state_key(log, txn)).query(&mut *conn).map_err(unavailable)
    }
}

impl LogStore for RedisStore {
    fn log_once(&self, _origin: Origin, log: LogId, txn: TxnId, rec: RecordType) -> Result<LogState, StorageError> {
        self.log_once_with_data(log, txn, rec, &[])
    }

    /// Unconditional set of the state key. Only the owner writes decisions, so
    /// the write cannot contradict the global decision.
    fn log(&self, _origin: Origin, log: LogId, txn: TxnId, rec: RecordType) -> Result<(), StorageError> {
        let mut conn = self.conn.lock().unwrap();
        redis::cmd("SET").arg(state_key(log, txn)).arg(LogState::from(rec).code()).query::<()>(&mut *conn).map_err(unavailable)
    }

    fn read_state(&self, log: LogId, txn: TxnId) -> Result<LogState, StorageError> {
        self.state_code(log, txn)?.map_or(Ok(LogState::None), decode)
    }
}
