use std::collections::HashMap;
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::thread;

use super::{ExecFailure, Executor, FailureKind, Timeouts};
use crate::data::Payload;
use crate::feature::FeatureId;
use crate::fixtures::{self, FixtureFeature};

/// Runs registry features in-process. Source text must reference a registry
/// entry with a `native:<name>` line.
#[derive(Debug, Default)]
pub struct NativeExecutor {
    loaded: RwLock<HashMap<FeatureId, Arc<FixtureFeature>>>,
    timeouts: Timeouts,
}

impl NativeExecutor {
    pub fn new(timeouts: Timeouts) -> Self {
        NativeExecutor {
            loaded: RwLock::default(),
            timeouts,
        }
    }
}

impl Executor for NativeExecutor {
    fn load(&self, feature: &FeatureId, source: &str) -> Result<(), ExecFailure> {
        let name = fixtures::native_name(source).ok_or_else(|| {
            ExecFailure::new(FailureKind::LoadError, "source has no `native:<name>` line")
        })?;
        let resolved = fixtures::resolve(name).map_err(|e| ExecFailure::new(FailureKind::LoadError, e.to_string()))?;
        self.loaded
            .write()
            .expect("registry lock poisoned")
            .insert(feature.clone(), Arc::new(resolved));
        Ok(())
    }

    fn eval(&self, feature: &FeatureId, payloads: &[&Payload]) -> Result<Vec<f64>, ExecFailure> {
        let resolved = self
            .loaded
            .read()
            .expect("registry lock poisoned")
            .get(feature)
            .cloned()
            .ok_or_else(|| ExecFailure::new(FailureKind::LoadError, format!("feature {feature} is not loaded")))?;

        // A detached thread computes values so a stuck call can be abandoned.
        let owned: Vec<Payload> = payloads.iter().map(|p| (*p).clone()).collect();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for p in &owned {
                if tx.send(resolved.eval(p)).is_err() {
                    return;
                }
            }
        });

        let mut values = Vec::with_capacity(payloads.len());
        for i in 0..payloads.len() {
            match rx.recv_timeout(self.timeouts.call) {
                Ok(Ok(v)) => values.push(v),
                Ok(Err(e)) => return Err(ExecFailure::new(FailureKind::RuntimeException, e.to_string()).at(i)),
                Err(_) => {
                    return Err(ExecFailure::new(
                        FailureKind::Timeout,
                        format!("no result within {:?}", self.timeouts.call),
                    )
                    .at(i))
                }
            }
        }
        Ok(values)
    }
}
