//! JSON-lines trace files, one per device: `trace-dev<k>.jsonl`, each line
//! `{"iter": i, "dev": k, "nodes": [...]}` in increasing iteration order.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MiniBatch, MiniBatchSource};
use crate::{DeviceId, Error, NodeId, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: u64,
    pub dev: usize,
    pub nodes: Vec<NodeId>,
}

pub fn trace_file_name(device: DeviceId) -> String {
    format!("trace-dev{device}.jsonl")
}

/// Passes batches through from an inner source while appending them to
/// per-device trace files.
pub struct RecordingSource<S> {
    inner: S,
    dir: PathBuf,
    writers: Vec<BufWriter<File>>,
}

impl<S: MiniBatchSource> RecordingSource<S> {
    pub fn create(inner: S, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let writers = (0..inner.num_devices())
            .map(|d| {
                let path = dir.join(trace_file_name(d));
                File::create(&path)
                    .map(BufWriter::new)
                    .map_err(|e| Error::io(path, e))
            })
            .collect::<Result<_>>()?;
        Ok(RecordingSource {
            inner,
            dir,
            writers,
        })
    }

    /// Flushes all trace files and returns the wrapped source.
    pub fn finish(mut self) -> Result<S> {
        for (d, w) in self.writers.iter_mut().enumerate() {
            w.flush()
                .map_err(|e| Error::io(self.dir.join(trace_file_name(d)), e))?;
        }
        Ok(self.inner)
    }
}

impl<S: MiniBatchSource> MiniBatchSource for RecordingSource<S> {
    fn num_devices(&self) -> usize {
        self.inner.num_devices()
    }

    fn fetch(&mut self, device: DeviceId, iteration: u64) -> Result<MiniBatch> {
        let batch = self.inner.fetch(device, iteration)?;
        let record = TraceRecord {
            iter: batch.iteration,
            dev: batch.device,
            nodes: batch.nodes.clone(),
        };
        let path = || self.dir.join(trace_file_name(device));
        let w = &mut self.writers[device];
        serde_json::to_writer(&mut *w, &record)
            .map_err(|e| Error::io(path(), std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| Error::io(path(), e))?;
        Ok(batch)
    }
}

struct TraceReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

/// Replays trace files written by [`RecordingSource`].
pub struct ReplaySource {
    readers: Vec<TraceReader>,
    num_nodes: usize,
}

impl ReplaySource {
    pub fn open(dir: impl AsRef<Path>, num_devices: usize, num_nodes: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let extra = dir.join(trace_file_name(num_devices));
        if extra.exists() {
            return Err(Error::input(format!(
                "{} exists but the run has only {num_devices} devices",
                extra.display()
            )));
        }
        let readers = (0..num_devices)
            .map(|d| {
                let path = dir.join(trace_file_name(d));
                let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
                Ok(TraceReader {
                    path,
                    lines: BufReader::new(file).lines(),
                    line_no: 0,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ReplaySource { readers, num_nodes })
    }
}

impl MiniBatchSource for ReplaySource {
    fn num_devices(&self) -> usize {
        self.readers.len()
    }

    fn fetch(&mut self, device: DeviceId, iteration: u64) -> Result<MiniBatch> {
        let num_nodes = self.num_nodes;
        let reader = self
            .readers
            .get_mut(device)
            .ok_or_else(|| Error::input(format!("no trace for device {device}")))?;
        reader.line_no += 1;
        let at = |r: &TraceReader, msg: String| Error::InputAt {
            path: r.path.clone(),
            line: r.line_no,
            msg,
        };
        let line = match reader.lines.next() {
            Some(line) => line.map_err(|e| Error::io(&reader.path, e))?,
            None => {
                return Err(at(
                    reader,
                    format!("trace ends before iteration {iteration}"),
                ))
            }
        };
        let record: TraceRecord = serde_json::from_str(&line)
            .map_err(|e| at(reader, format!("malformed trace record: {e}")))?;
        if record.iter != iteration || record.dev != device {
            return Err(at(
                reader,
                format!(
                    "expected iteration {iteration} of device {device}, found iteration {} of device {}",
                    record.iter, record.dev
                ),
            ));
        }
        if let Some(bad) = record.nodes.iter().find(|&&v| v as usize >= num_nodes) {
            return Err(at(
                reader,
                format!("node {bad} does not exist in a graph of {num_nodes} nodes"),
            ));
        }
        let mut seen = HashSet::with_capacity(record.nodes.len());
        if let Some(dup) = record.nodes.iter().find(|&&v| !seen.insert(v)) {
            return Err(at(reader, format!("node {dup} repeated within one minibatch")));
        }
        Ok(MiniBatch {
            iteration,
            device,
            nodes: record.nodes,
        })
    }
}

/// In-memory trace; lets one sampled stream drive several cache
/// configurations.
#[derive(Clone, Debug, Default)]
pub struct MemoryTrace {
    batches: Vec<Vec<MiniBatch>>,
}

impl MemoryTrace {
    /// Samples iterations `1..=iterations` for every device of `source`.
    pub fn capture(source: &mut dyn MiniBatchSource, iterations: u64) -> Result<Self> {
        let mut batches = vec![Vec::with_capacity(iterations as usize); source.num_devices()];
        for it in 1..=iterations {
            for (d, list) in batches.iter_mut().enumerate() {
                list.push(source.fetch(d, it)?);
            }
        }
        Ok(MemoryTrace { batches })
    }

    pub fn from_batches(batches: Vec<Vec<MiniBatch>>) -> Self {
        MemoryTrace { batches }
    }

    pub fn len(&self) -> u64 {
        self.batches.first().map_or(0, |b| b.len() as u64)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A cursor that replays this trace.
    pub fn replay(&self) -> MemoryReplay<'_> {
        MemoryReplay { trace: self }
    }
}

pub struct MemoryReplay<'a> {
    trace: &'a MemoryTrace,
}

impl MiniBatchSource for MemoryReplay<'_> {
    fn num_devices(&self) -> usize {
        self.trace.batches.len()
    }

    fn fetch(&mut self, device: DeviceId, iteration: u64) -> Result<MiniBatch> {
        iteration
            .checked_sub(1)
            .and_then(|i| self.trace.batches.get(device)?.get(i as usize))
            .cloned()
            .ok_or_else(|| {
                Error::input(format!(
                    "in-memory trace has no iteration {iteration} for device {device}"
                ))
            })
    }
}
