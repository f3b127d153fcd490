use std::io::Read;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::time::Duration;

use super::{IngestError, Source, SourceHandle, SourceItem, SourceKind, StopToken};
use crate::markers::{spawn_line_reader, MarkerDecoder, MarkerError, MarkerSink};
use crate::model::{DenyList, EventMarker, StreamDescriptor};

const POLL: Duration = Duration::from_millis(50);

/// Markers read as JSON lines from any byte stream: stdin, a named pipe,
/// a file. Malformed and policy-violating lines are logged and skipped.
///
/// The reader runs on its own thread. Stopping the source does not unblock
/// a read in progress; that thread ends with the stream.
pub struct LineMarkerSource {
    handle: SourceHandle,
    rx: Receiver<EventMarker>,
}

struct ChannelSink(Mutex<Sender<EventMarker>>);

impl MarkerSink for ChannelSink {
    fn emit(&self, marker: EventMarker) -> Result<(), MarkerError> {
        let tx = self.0.lock().map_err(|_| MarkerError::Sink("poisoned".into()))?;
        tx.send(marker).map_err(|_| MarkerError::Sink("source dropped".into()))
    }
}

/// Marker source named `source` fed by `reader`.
pub fn line_marker_source<R: Read + Send + 'static>(reader: R, source: &str, deny: DenyList) -> LineMarkerSource {
    let (tx, rx) = mpsc::channel();
    spawn_line_reader(reader, MarkerDecoder::new(source, deny), ChannelSink(Mutex::new(tx)));
    LineMarkerSource { handle: SourceHandle::new(StreamDescriptor::marker(source), SourceKind::External), rx }
}

impl Source for LineMarkerSource {
    fn handle(&self) -> &SourceHandle {
        &self.handle
    }

    fn handle_mut(&mut self) -> &mut SourceHandle {
        &mut self.handle
    }

    fn next_item(&mut self, stop: &StopToken) -> Result<Option<SourceItem>, IngestError> {
        loop {
            if stop.is_stopped() {
                return Ok(None);
            }
            match self.rx.recv_timeout(POLL) {
                Ok(m) => return Ok(Some(SourceItem::Marker(m))),
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => return Ok(None),
            }
        }
    }
}
