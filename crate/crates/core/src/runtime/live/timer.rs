//! A timer thread with sub-millisecond resolution. Tokio's timer wheel rounds
//! to whole milliseconds, which is too coarse for emulated service times.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use parking_lot::{Condvar, Mutex};
use tokio::sync::oneshot;

type Job = Box<dyn FnOnce() + Send>;

struct Entry {
    at: Instant,
    seq: u64,
    job: Job,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Default)]
struct State {
    heap: BinaryHeap<Entry>,
    seq: u64,
    stopped: bool,
}

#[derive(Default)]
struct Shared {
    state: Mutex<State>,
    wakeup: Condvar,
}

#[derive(Clone)]
pub struct Timer {
    shared: Arc<Shared>,
}

pub struct TimerThread {
    timer: Timer,
    handle: Option<JoinHandle<()>>,
}

impl TimerThread {
    pub fn spawn() -> Self {
        let shared = Arc::new(Shared::default());
        let worker = shared.clone();
        let handle = std::thread::Builder::new()
            .name("offload-timer".into())
            .spawn(move || run(&worker))
            .expect("spawn timer thread");
        Self {
            timer: Timer { shared },
            handle: Some(handle),
        }
    }

    pub fn timer(&self) -> Timer {
        self.timer.clone()
    }
}

impl Drop for TimerThread {
    fn drop(&mut self) {
        self.timer.shared.state.lock().stopped = true;
        self.timer.shared.wakeup.notify_all();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn run(shared: &Shared) {
    let mut state = shared.state.lock();
    loop {
        if state.stopped {
            return;
        }
        let now = Instant::now();
        match state.heap.peek() {
            Some(top) if top.at <= now => {
                let entry = state.heap.pop().expect("peeked");
                drop(state);
                (entry.job)();
                state = shared.state.lock();
            }
            Some(top) => {
                let at = top.at;
                shared.wakeup.wait_until(&mut state, at);
            }
            None => shared.wakeup.wait(&mut state),
        }
    }
}

impl Timer {
    /// Runs `job` on the timer thread at `at`. Jobs due at the same instant
    /// run in scheduling order.
    pub fn schedule(&self, at: Instant, job: impl FnOnce() + Send + 'static) {
        let mut state = self.shared.state.lock();
        let seq = state.seq;
        state.seq += 1;
        let earliest = state.heap.peek().is_none_or(|top| at < top.at);
        state.heap.push(Entry {
            at,
            seq,
            job: Box::new(job),
        });
        drop(state);
        if earliest {
            self.shared.wakeup.notify_one();
        }
    }

    pub async fn sleep_until(&self, at: Instant) {
        if at <= Instant::now() {
            return;
        }
        let (tx, rx) = oneshot::channel();
        self.schedule(at, move || {
            let _ = tx.send(());
        });
        let _ = rx.await;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc;
    use std::time::Duration;

    #[test]
    fn fires_in_time_order_with_small_lateness() {
        let t = TimerThread::spawn();
        let (tx, rx) = mpsc::channel();
        let base = Instant::now() + Duration::from_millis(5);
        for (i, offset_us) in [3000u64, 500, 1500, 500].into_iter().enumerate() {
            let tx = tx.clone();
            let at = base + Duration::from_micros(offset_us);
            t.timer()
                .schedule(at, move || tx.send((i, at, Instant::now())).unwrap());
        }
        let got: Vec<_> = (0..4)
            .map(|_| rx.recv_timeout(Duration::from_secs(2)).unwrap())
            .collect();
        assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), [1, 3, 2, 0]);
        for (_, at, fired) in got {
            assert!(fired >= at);
            assert!(fired - at < Duration::from_millis(2), "late by {:?}", fired - at);
        }
    }

    #[test]
    fn async_sleep() {
        let t = TimerThread::spawn();
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let at = Instant::now() + Duration::from_micros(1500);
        rt.block_on(t.timer().sleep_until(at));
        assert!(Instant::now() >= at);
    }
}
