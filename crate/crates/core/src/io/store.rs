use std::fs::File;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::tensor::TensorContainer;
use crate::dataset::{read_trials_csv, write_trials_csv, DeviceKind, EmbeddingMatrix, Sampling, TrialRecord};
use crate::error::{Error, Result};
use crate::preprocess::{ContinuousRecording, EpochSet, Event, FmriRun, PreprocessReport, TimedEvent};
use crate::synth::{ContinuousSynth, RawRecordings, SynthConfig};

pub const TRIALS_FILE: &str = "trials.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const SYNTH_CONFIG_FILE: &str = "synth_config.json";
pub const REPORT_FILE: &str = "preprocess_report.json";
const EMBEDDINGS_DIR: &str = "embeddings";
const RECORDINGS_DIR: &str = "recordings";
const EPOCHS_DIR: &str = "epochs";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn attr<T: DeserializeOwned>(c: &TensorContainer, key: &str) -> Result<T> {
    let v = c
        .attributes
        .get(key)
        .ok_or_else(|| Error::contract(format!("container attribute `{key}` is missing")))?;
    Ok(serde_json::from_value(v.clone())?)
}

fn set_attr<T: Serialize>(c: &mut TensorContainer, key: &str, value: &T) -> Result<()> {
    c.attributes.insert(key.into(), serde_json::to_value(value)?);
    Ok(())
}

pub fn write_trials(dir: &Path, trials: &[TrialRecord]) -> Result<()> {
    write_trials_csv(create(&dir.join(TRIALS_FILE))?, trials)
}

pub fn read_trials(dir: &Path) -> Result<Vec<TrialRecord>> {
    read_trials_csv(open(&dir.join(TRIALS_FILE))?)
}

pub fn write_embeddings(dir: &Path, emb: &EmbeddingMatrix) -> Result<()> {
    let mut c = TensorContainer::new();
    c.insert_f64("embeddings", emb.data.clone().into_dyn())?;
    set_attr(&mut c, "image_ids", &emb.image_ids)?;
    c.write(&dir.join(EMBEDDINGS_DIR))
}

pub fn read_embeddings(dir: &Path) -> Result<EmbeddingMatrix> {
    let c = TensorContainer::read(&dir.join(EMBEDDINGS_DIR))?;
    EmbeddingMatrix::new(attr(&c, "image_ids")?, c.get2("embeddings")?)
}

/// One row of `events.csv`: an onset in recording `recording`, given as a
/// sample index (M/EEG) or seconds from the first volume (fMRI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventRow {
    recording: usize,
    trial_id: usize,
    image_id: usize,
    sample: Option<usize>,
    onset_s: Option<f64>,
}

/// Continuous recordings with their trial table and target embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStore {
    pub config: SynthConfig,
    pub raw: RawRecordings,
    pub trials: Vec<TrialRecord>,
    pub embeddings: EmbeddingMatrix,
}

impl From<ContinuousSynth> for RawStore {
    fn from(s: ContinuousSynth) -> Self {
        RawStore { config: s.config, raw: s.raw, trials: s.trials, embeddings: s.embeddings }
    }
}

impl RawStore {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(SYNTH_CONFIG_FILE), &self.config)?;
        write_trials(dir, &self.trials)?;
        write_embeddings(dir, &self.embeddings)?;
        let mut c = TensorContainer::new();
        let mut rows = Vec::new();
        let mut rates = Vec::new();
        match &self.raw {
            RawRecordings::Meeg(recs) => {
                set_attr(&mut c, "kind", &"meeg")?;
                for (k, rec) in recs.iter().enumerate() {
                    c.insert_f64(format!("recording.{k}"), rec.data.clone().into_dyn())?;
                    if let Some(p) = &rec.channel_positions {
                        c.insert_f64(format!("positions.{k}"), p.clone().into_dyn())?;
                    }
                    rates.push(rec.sampling_rate);
                    rows.extend(rec.events.iter().map(|e| EventRow {
                        recording: k,
                        trial_id: e.trial_id,
                        image_id: e.image_id,
                        sample: Some(e.sample),
                        onset_s: None,
                    }));
                }
            }
            RawRecordings::Fmri(runs) => {
                set_attr(&mut c, "kind", &"fmri")?;
                for (k, run) in runs.iter().enumerate() {
                    c.insert_f64(format!("recording.{k}"), run.data.clone().into_dyn())?;
                    rates.push(run.tr_seconds);
                    rows.extend(run.events.iter().map(|e| EventRow {
                        recording: k,
                        trial_id: e.trial_id,
                        image_id: e.image_id,
                        sample: None,
                        onset_s: Some(e.onset_s),
                    }));
                }
            }
        }
        // Hz for M/EEG, seconds per volume for fMRI.
        set_attr(&mut c, "rates", &rates)?;
        c.write(&dir.join(RECORDINGS_DIR))?;
        let mut w = csv::Writer::from_writer(create(&dir.join(EVENTS_FILE))?);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(dir.join(EVENTS_FILE), e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let config: SynthConfig = read_json(&dir.join(SYNTH_CONFIG_FILE))?;
        let trials = read_trials(dir)?;
        let embeddings = read_embeddings(dir)?;
        let c = TensorContainer::read(&dir.join(RECORDINGS_DIR))?;
        let kind: String = attr(&c, "kind")?;
        let rates: Vec<f64> = attr(&c, "rates")?;
        let mut r = csv::Reader::from_reader(open(&dir.join(EVENTS_FILE))?);
        let rows: Vec<EventRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        let events_of = |k: usize| rows.iter().filter(move |e| e.recording == k);
        let missing = |what: &str, k: usize| Error::contract(format!("event of recording {k} has no {what}"));
        let raw = match kind.as_str() {
            "meeg" => RawRecordings::Meeg(
                rates
                    .iter()
                    .enumerate()
                    .map(|(k, &rate)| {
                        let positions = c.tensors.contains_key(&format!("positions.{k}"));
                        Ok(ContinuousRecording {
                            data: c.get2(&format!("recording.{k}"))?,
                            sampling_rate: rate,
                            channel_positions: if positions { Some(c.get2(&format!("positions.{k}"))?) } else { None },
                            events: events_of(k)
                                .map(|e| {
                                    Ok(Event {
                                        sample: e.sample.ok_or_else(|| missing("sample", k))?,
                                        image_id: e.image_id,
                                        trial_id: e.trial_id,
                                    })
                                })
                                .collect::<Result<_>>()?,
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
            "fmri" => RawRecordings::Fmri(
                rates
                    .iter()
                    .enumerate()
                    .map(|(k, &tr)| {
                        Ok(FmriRun {
                            data: c.get2(&format!("recording.{k}"))?,
                            tr_seconds: tr,
                            events: events_of(k)
                                .map(|e| {
                                    Ok(TimedEvent {
                                        onset_s: e.onset_s.ok_or_else(|| missing("onset_s", k))?,
                                        image_id: e.image_id,
                                        trial_id: e.trial_id,
                                    })
                                })
                                .collect::<Result<_>>()?,
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
            other => return Err(Error::contract(format!("unknown recording kind `{other}`"))),
        };
        Ok(RawStore { config, raw, trials, embeddings })
    }
}

/// Epoched data ready for decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStore {
    pub device: DeviceKind,
    pub epochs: EpochSet,
    pub trials: Vec<TrialRecord>,
    pub embeddings: EmbeddingMatrix,
    pub positions: Option<Array2<f64>>,
}

impl EpochStore {
    pub fn n_subjects(&self) -> usize {
        self.trials.iter().map(|t| t.subject_id + 1).max().unwrap_or(0)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_trials(dir, &self.trials)?;
        write_embeddings(dir, &self.embeddings)?;
        let mut c = TensorContainer::new();
        c.insert_f64("epochs", self.epochs.data.clone().into_dyn())?;
        if let Some(p) = &self.positions {
            c.insert_f64("positions", p.clone().into_dyn())?;
        }
        set_attr(&mut c, "device", &self.device)?;
        set_attr(&mut c, "window", &self.epochs.window)?;
        set_attr(&mut c, "sampling", &self.epochs.sampling)?;
        set_attr(&mut c, "trial_ids", &self.epochs.trial_ids)?;
        c.write(&dir.join(EPOCHS_DIR))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let c = TensorContainer::read(&dir.join(EPOCHS_DIR))?;
        let data: Array3<f64> = c.get3("epochs")?;
        let trial_ids: Vec<usize> = attr(&c, "trial_ids")?;
        if trial_ids.len() != data.shape()[0] {
            return Err(Error::Shape { axis: "epoch trial ids", expected: data.shape()[0], got: trial_ids.len() });
        }
        let trials = read_trials(dir)?;
        if let Some(&bad) = trial_ids.iter().find(|&&t| t >= trials.len()) {
            return Err(Error::contract(format!("epoch refers to trial {bad}, table has {}", trials.len())));
        }
        let sampling: Sampling = attr(&c, "sampling")?;
        Ok(EpochStore {
            device: attr(&c, "device")?,
            epochs: EpochSet { data, window: attr(&c, "window")?, sampling, trial_ids },
            trials,
            embeddings: read_embeddings(dir)?,
            positions: if c.tensors.contains_key("positions") { Some(c.get2("positions")?) } else { None },
        })
    }
}

pub fn write_report(dir: &Path, report: &PreprocessReport) -> Result<()> {
    write_json(&dir.join(REPORT_FILE), report)
}
