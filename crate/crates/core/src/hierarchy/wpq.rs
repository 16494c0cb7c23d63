use std::collections::VecDeque;

use crate::persist::{PersistRecord, PersistTrace, PmImage};

/// A FIFO resource: one request at a time, each occupying it for a service
/// time.
#[derive(Debug, Clone, Copy, Default)]
pub struct Server {
    free_at: f64,
    pub busy: f64,
}

impl Server {
    /// Returns the completion time of a request arriving at `arrival`.
    pub fn serve(&mut self, arrival: f64, service: f64) -> f64 {
        let start = arrival.max(self.free_at);
        self.free_at = start + service;
        self.busy += service;
        self.free_at
    }
}

#[derive(Debug, Clone, Default)]
struct Channel {
    /// Drain completion time of each queued record (index into `records`).
    queue: VecDeque<(f64, usize)>,
    last_accept: f64,
    last_drain: f64,
}

/// Persistent-memory controller: per-channel bounded write-pending queues
/// inside the persistent domain. Acceptance into a WPQ is durability.
#[derive(Debug, Clone)]
pub struct PmController {
    channels: Vec<Channel>,
    capacity: usize,
    drain_cycles: f64,
    seq: u64,
    accepted: PersistTrace,
    drained: PmImage,
    pub bytes_in: u64,
    pub bytes_drained: u64,
    pub stall_cycles: f64,
}

impl PmController {
    pub fn new(channels: usize, capacity: usize, drain_cycles: f64) -> Self {
        assert!(channels > 0 && capacity > 0);
        PmController {
            channels: vec![Channel::default(); channels],
            capacity,
            drain_cycles,
            seq: 0,
            accepted: PersistTrace::default(),
            drained: PmImage::new(),
            bytes_in: 0,
            bytes_drained: 0,
            stall_cycles: 0.0,
        }
    }

    pub fn channel_of(&self, block: u64) -> usize {
        ((block / 128) % self.channels.len() as u64) as usize
    }

    fn drain_until(&mut self, ch: usize, t: f64) {
        while let Some(&(done, idx)) = self.channels[ch].queue.front() {
            if done > t {
                break;
            }
            self.channels[ch].queue.pop_front();
            let rec = &self.accepted.records[idx];
            self.bytes_drained += rec.mask.count_ones() as u64;
            self.drained.apply(rec);
        }
    }

    /// Enqueues a write arriving at `arrival`; returns the acceptance
    /// (durability) time. Stalls while the queue is full.
    pub fn enqueue(&mut self, arrival: f64, mut rec: PersistRecord) -> f64 {
        let ch = self.channel_of(rec.block);
        let mut t = arrival.max(self.channels[ch].last_accept);
        self.drain_until(ch, t);
        if self.channels[ch].queue.len() >= self.capacity {
            let (front_done, _) = self.channels[ch].queue[0];
            self.stall_cycles += front_done - t;
            t = front_done;
            self.drain_until(ch, t);
        }
        let start = t.max(self.channels[ch].last_drain);
        let done = start + self.drain_cycles;
        let c = &mut self.channels[ch];
        c.last_drain = done;
        c.last_accept = t;
        rec.timestamp = t;
        rec.seq = self.seq;
        self.seq += 1;
        self.bytes_in += rec.mask.count_ones() as u64;
        let idx = self.accepted.records.len();
        self.accepted.records.push(rec);
        c.queue.push_back((done, idx));
        t
    }

    pub fn queued(&self, block: u64) -> usize {
        self.channels[self.channel_of(block)].queue.len()
    }

    pub fn accepted(&self) -> &PersistTrace {
        &self.accepted
    }

    /// Drains every queue and returns the ordered persist trace together
    /// with the image produced by the drains.
    pub fn finish(mut self) -> (PersistTrace, PmImage, u64, u64) {
        for ch in 0..self.channels.len() {
            self.drain_until(ch, f64::INFINITY);
        }
        let mut trace = self.accepted;
        trace.sort();
        (trace, self.drained, self.bytes_in, self.bytes_drained)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(block: u64, mask: u128, v: u8) -> PersistRecord {
        PersistRecord { timestamp: 0.0, seq: 0, block, mask, data: [v; 128], writers: vec![] }
    }

    #[test]
    fn server_queues() {
        let mut s = Server::default();
        assert_eq!(s.serve(0.0, 5.0), 5.0);
        assert_eq!(s.serve(1.0, 5.0), 10.0);
        assert_eq!(s.serve(20.0, 1.0), 21.0);
    }

    #[test]
    fn empty_queue_accepts_immediately() {
        let mut pmc = PmController::new(1, 2, 100.0);
        assert_eq!(pmc.enqueue(7.0, rec(0, 1, 1)), 7.0);
    }

    #[test]
    fn full_queue_waits_one_drain_interval() {
        let mut pmc = PmController::new(1, 2, 100.0);
        pmc.enqueue(0.0, rec(0, 1, 1));
        pmc.enqueue(0.0, rec(0, 1, 2));
        assert_eq!(pmc.enqueue(0.0, rec(0, 1, 3)), 100.0);
        assert!(pmc.stall_cycles > 0.0);
    }

    #[test]
    fn later_entry_supersedes_in_drain_order() {
        let mut pmc = PmController::new(2, 4, 10.0);
        pmc.enqueue(0.0, rec(0, 0b11, 1));
        pmc.enqueue(1.0, rec(0, 0b01, 2));
        let (trace, img, bin, bout) = pmc.finish();
        assert_eq!(trace.len(), 2);
        assert_eq!(img.read(0), 2);
        assert_eq!(img.read(1), 1);
        assert_eq!(bin, bout);
    }
}
