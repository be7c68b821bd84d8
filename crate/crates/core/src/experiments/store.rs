use std::path::{Path, PathBuf};

use super::{report_from_log, CellData, RunReport, RunSpec};
use crate::error::{Error, Result};
use crate::optim::Trainer;

/// Per-run output directories `root/<fingerprint>/seed-<n>/` holding
/// `spec.json`, `state.bin` while training, then `log.csv`, `best.ckpt`
/// and `report.json`. A finished run is read back instead of retrained;
/// an interrupted one resumes from its last saved state.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
    checkpoint_every: usize,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>, checkpoint_every: usize) -> Self {
        Self {
            root: root.into(),
            checkpoint_every: checkpoint_every.max(1),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, spec: &RunSpec) -> PathBuf {
        self.root.join(spec.fingerprint()).join(format!("seed-{}", spec.seed()))
    }

    fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn finished(&self, spec: &RunSpec) -> Result<Option<RunReport>> {
        let path = self.run_dir(spec).join("report.json");
        if !path.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: RunReport =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, 0, e.to_string()))?;
        if report.spec != *spec {
            return Err(Error::State(format!("{} belongs to a different run spec", path.display())));
        }
        Ok(Some(report))
    }

    pub(super) fn run(&self, spec: &RunSpec, data: &CellData) -> Result<RunReport> {
        if let Some(r) = self.finished(spec)? {
            return Ok(r);
        }
        let dir = self.run_dir(spec);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Self::write_json(&dir.join("spec.json"), spec)?;
        let state = dir.join("state.bin");
        let mut trainer = if state.is_file() {
            let t = Trainer::load_state(&state)?;
            if t.config() != &spec.hint || t.schedule() != &spec.schedule {
                return Err(Error::State(format!("{} was written for a different run", state.display())));
            }
            t
        } else {
            Trainer::new(spec.model.build(spec.seed()), spec.hint, spec.schedule)?
        };
        let td = data.train_data();
        while !trainer.is_done() {
            trainer.run_epoch(&td, &mut |_, _| Ok(()))?;
            if trainer.epochs_done() % self.checkpoint_every == 0 && !trainer.is_done() {
                trainer.save_state(&state)?;
            }
        }
        let outcome = trainer.finish(&td)?;
        let log_path = dir.join("log.csv");
        let mut csv = Vec::new();
        outcome.log.write_csv(&mut csv).expect("write to memory");
        std::fs::write(&log_path, csv).map_err(|e| Error::io(&log_path, e))?;
        outcome.best.save(dir.join("best.ckpt"))?;
        let report = report_from_log(spec, outcome.log)?;
        Self::write_json(&dir.join("report.json"), &report)?;
        if state.is_file() {
            std::fs::remove_file(&state).map_err(|e| Error::io(&state, e))?;
        }
        Ok(report)
    }
}
