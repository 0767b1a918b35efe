//! Lease-based lock service. Every catalog mutation runs under a
//! time-bounded lease; a holder that dies simply stops renewing, and the
//! lease becomes reapable by anyone after its ttl. Reaping cost is
//! proportional to the number of expired leases (expiry-ordered index),
//! not to the number of live clients.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use thiserror::Error;

use super::types::HolderId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockMode {
    Shared,
    Exclusive,
}

/// A granted time-bounded claim on a named catalog resource.
#[derive(Debug, Clone)]
pub struct LockLease {
    pub lease_id: u64,
    pub holder: HolderId,
    pub resource: String,
    pub mode: LockMode,
    pub expires_at: u64,
}

#[derive(Debug, Error)]
pub enum LeaseError {
    #[error("resource '{resource}' is held by {holder}")]
    Conflict { resource: String, holder: HolderId },
    #[error("lease {0} does not exist or has been reaped")]
    Expired(u64),
    #[error("caller is not the holder of lease {0}")]
    NotHolder(u64),
}

#[derive(Default)]
struct ResourceLocks {
    exclusive: Option<u64>,
    shared: HashSet<u64>,
}

impl ResourceLocks {
    fn is_empty(&self) -> bool {
        self.exclusive.is_none() && self.shared.is_empty()
    }
}

#[derive(Default)]
struct LeaseTable {
    by_id: HashMap<u64, LockLease>,
    resources: HashMap<String, ResourceLocks>,
    // (expires_at, lease_id): range scans make reap O(expired).
    expiry: BTreeSet<(u64, u64)>,
    next_id: u64,
}

impl LeaseTable {
    fn remove(&mut self, lease_id: u64) -> Option<LockLease> {
        let lease = self.by_id.remove(&lease_id)?;
        self.expiry.remove(&(lease.expires_at, lease_id));
        if let Some(locks) = self.resources.get_mut(&lease.resource) {
            if locks.exclusive == Some(lease_id) {
                locks.exclusive = None;
            }
            locks.shared.remove(&lease_id);
            if locks.is_empty() {
                self.resources.remove(&lease.resource);
            }
        }
        Some(lease)
    }

    /// Drops every lease on `resource` that is past `now`, so expired
    /// holders never block a new acquisition.
    fn reap_resource(&mut self, resource: &str, now: u64, reaped: &mut Vec<u64>) {
        let Some(locks) = self.resources.get(resource) else {
            return;
        };
        let mut dead: Vec<u64> = Vec::new();
        if let Some(ex) = locks.exclusive {
            if self.by_id.get(&ex).map(|l| l.expires_at <= now) == Some(true) {
                dead.push(ex);
            }
        }
        for &id in &locks.shared {
            if self.by_id.get(&id).map(|l| l.expires_at <= now) == Some(true) {
                dead.push(id);
            }
        }
        for id in dead {
            self.remove(id);
            reaped.push(id);
        }
    }
}

pub struct LeaseService {
    table: Mutex<LeaseTable>,
    /// Injected outage: while set, acquisitions block (a hung lock server,
    /// not an error). Cleared by the fault scheduler.
    stall: Mutex<Option<Instant>>,
    stall_cv: Condvar,
}

impl LeaseService {
    pub fn new() -> Self {
        Self {
            table: Mutex::new(LeaseTable::default()),
            stall: Mutex::new(None),
            stall_cv: Condvar::new(),
        }
    }

    /// Grants a lease or fails fast with the identity of the blocking
    /// holder. Expired blockers are reaped inline, so a dead client delays
    /// a new acquisition by at most its ttl.
    pub fn acquire(
        &self,
        holder: &HolderId,
        resource: &str,
        mode: LockMode,
        ttl_ms: u64,
        now: u64,
    ) -> Result<LockLease, LeaseError> {
        self.wait_if_stalled();
        let mut t = self.table.lock().unwrap();
        let mut reaped = Vec::new();
        t.reap_resource(resource, now, &mut reaped);

        if let Some(locks) = t.resources.get(resource) {
            let blocking = match mode {
                LockMode::Exclusive => locks
                    .exclusive
                    .or_else(|| locks.shared.iter().next().copied()),
                LockMode::Shared => locks.exclusive,
            };
            if let Some(id) = blocking {
                let holder = t.by_id[&id].holder.clone();
                return Err(LeaseError::Conflict {
                    resource: resource.to_string(),
                    holder,
                });
            }
        }

        t.next_id += 1;
        let lease = LockLease {
            lease_id: t.next_id,
            holder: holder.clone(),
            resource: resource.to_string(),
            mode,
            expires_at: now + ttl_ms,
        };
        t.by_id.insert(lease.lease_id, lease.clone());
        t.expiry.insert((lease.expires_at, lease.lease_id));
        let locks = t.resources.entry(resource.to_string()).or_default();
        match mode {
            LockMode::Exclusive => locks.exclusive = Some(lease.lease_id),
            LockMode::Shared => {
                locks.shared.insert(lease.lease_id);
            }
        }
        Ok(lease)
    }

    pub fn renew(
        &self,
        lease_id: u64,
        holder: &HolderId,
        ttl_ms: u64,
        now: u64,
    ) -> Result<(), LeaseError> {
        let mut t = self.table.lock().unwrap();
        let lease = t.by_id.get(&lease_id).ok_or(LeaseError::Expired(lease_id))?;
        if lease.holder != *holder {
            return Err(LeaseError::NotHolder(lease_id));
        }
        if lease.expires_at <= now {
            t.remove(lease_id);
            return Err(LeaseError::Expired(lease_id));
        }
        let old = lease.expires_at;
        t.expiry.remove(&(old, lease_id));
        let lease = t.by_id.get_mut(&lease_id).unwrap();
        lease.expires_at = now + ttl_ms;
        let new = lease.expires_at;
        t.expiry.insert((new, lease_id));
        Ok(())
    }

    pub fn release(&self, lease_id: u64, holder: &HolderId) -> Result<(), LeaseError> {
        let mut t = self.table.lock().unwrap();
        match t.by_id.get(&lease_id) {
            None => Err(LeaseError::Expired(lease_id)),
            Some(l) if l.holder != *holder => Err(LeaseError::NotHolder(lease_id)),
            Some(_) => {
                t.remove(lease_id);
                Ok(())
            }
        }
    }

    /// Removes every lease expired as of `now`. Idempotent; cost scales
    /// with the expired count.
    pub fn reap_expired(&self, now: u64) -> Vec<u64> {
        let mut t = self.table.lock().unwrap();
        let dead: Vec<u64> = t
            .expiry
            .range(..(now, 0))
            .map(|&(_, id)| id)
            .collect();
        for &id in &dead {
            t.remove(id);
        }
        dead
    }

    /// A lease is live when it exists, is held by `holder`, and has not
    /// expired. Transaction commits revalidate through this.
    pub fn check_live(
        &self,
        lease_id: u64,
        holder: &HolderId,
        now: u64,
    ) -> Result<LockLease, LeaseError> {
        let t = self.table.lock().unwrap();
        let lease = t.by_id.get(&lease_id).ok_or(LeaseError::Expired(lease_id))?;
        if lease.holder != *holder {
            return Err(LeaseError::NotHolder(lease_id));
        }
        if lease.expires_at <= now {
            return Err(LeaseError::Expired(lease_id));
        }
        Ok(lease.clone())
    }

    pub fn list(&self) -> Vec<LockLease> {
        let t = self.table.lock().unwrap();
        let mut all: Vec<_> = t.by_id.values().cloned().collect();
        all.sort_by_key(|l| l.lease_id);
        all
    }

    pub fn live_count(&self, now: u64) -> usize {
        let t = self.table.lock().unwrap();
        t.by_id.values().filter(|l| l.expires_at > now).count()
    }

    /// Fault injection: block acquisitions until the deadline passes.
    pub fn stall_until(&self, deadline: Instant) {
        let mut s = self.stall.lock().unwrap();
        *s = Some(deadline);
    }

    pub fn clear_stall(&self) {
        let mut s = self.stall.lock().unwrap();
        *s = None;
        self.stall_cv.notify_all();
    }

    fn wait_if_stalled(&self) {
        let mut s = self.stall.lock().unwrap();
        loop {
            match *s {
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        *s = None;
                        self.stall_cv.notify_all();
                        return;
                    }
                    let (guard, _) = self
                        .stall_cv
                        .wait_timeout(s, deadline - now)
                        .unwrap();
                    s = guard;
                }
                None => return,
            }
        }
    }
}

impl Default for LeaseService {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn holder(uid: u32, tag: &str) -> HolderId {
        HolderId::new(uid, tag)
    }

    #[test]
    fn shared_leases_coexist() {
        let svc = LeaseService::new();
        let a = svc
            .acquire(&holder(1, "a"), "db:1", LockMode::Shared, 1000, 0)
            .unwrap();
        let b = svc
            .acquire(&holder(2, "b"), "db:1", LockMode::Shared, 1000, 0)
            .unwrap();
        assert_ne!(a.lease_id, b.lease_id);
    }

    #[test]
    fn exclusive_conflict_names_holder() {
        let svc = LeaseService::new();
        svc.acquire(&holder(1, "alice"), "db:1", LockMode::Shared, 1000, 0)
            .unwrap();
        let err = svc
            .acquire(&holder(2, "bob"), "db:1", LockMode::Exclusive, 1000, 0)
            .unwrap_err();
        match err {
            LeaseError::Conflict { holder: h, .. } => assert_eq!(h.tag, "alice"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn expired_blocker_is_reaped_on_acquire() {
        let svc = LeaseService::new();
        svc.acquire(&holder(1, "dead"), "db:1", LockMode::Exclusive, 100, 0)
            .unwrap();
        // Past the ttl the resource is acquirable again.
        let l = svc
            .acquire(&holder(2, "live"), "db:1", LockMode::Exclusive, 100, 200)
            .unwrap();
        assert_eq!(l.holder.tag, "live");
    }

    #[test]
    fn reap_touches_only_expired() {
        let svc = LeaseService::new();
        for i in 0..150 {
            svc.acquire(
                &holder(i, &format!("c{i}")),
                &format!("res:{i}"),
                LockMode::Exclusive,
                10_000,
                0,
            )
            .unwrap();
        }
        for i in 0..3 {
            svc.acquire(
                &holder(200 + i, "shortlived"),
                &format!("short:{i}"),
                LockMode::Exclusive,
                10,
                0,
            )
            .unwrap();
        }
        let reaped = svc.reap_expired(100);
        assert_eq!(reaped.len(), 3);
        assert_eq!(svc.reap_expired(100), Vec::<u64>::new());
        assert_eq!(svc.live_count(100), 150);
    }

    #[test]
    fn release_requires_holder() {
        let svc = LeaseService::new();
        let l = svc
            .acquire(&holder(1, "a"), "r", LockMode::Exclusive, 1000, 0)
            .unwrap();
        assert!(matches!(
            svc.release(l.lease_id, &holder(2, "b")),
            Err(LeaseError::NotHolder(_))
        ));
        svc.release(l.lease_id, &holder(1, "a")).unwrap();
        assert!(matches!(
            svc.release(l.lease_id, &holder(1, "a")),
            Err(LeaseError::Expired(_))
        ));
    }

    #[test]
    fn renew_extends_expiry() {
        let svc = LeaseService::new();
        let l = svc
            .acquire(&holder(1, "a"), "r", LockMode::Exclusive, 100, 0)
            .unwrap();
        svc.renew(l.lease_id, &holder(1, "a"), 100, 50).unwrap();
        // Would have expired at 100 without the renewal.
        assert!(svc.check_live(l.lease_id, &holder(1, "a"), 120).is_ok());
    }
}
