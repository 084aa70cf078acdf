//! Deterministic discrete-event core: a virtual clock, an ordered event
//! queue, and a run loop that drives all other components.
//!
//! Events are totally ordered by `(fire_time, seq)` where `seq` is a
//! monotone insertion counter, so events scheduled for the same instant
//! fire in FIFO order and a run is exactly reproducible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use thiserror::Error;

/// Simulated time as integer nanoseconds since scenario start.
///
/// Integer time keeps replays bit-exact; the `u64` range covers ~584
/// simulated years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    /// Whole seconds and the nanosecond remainder, as printed in traces.
    pub const fn split_secs(self) -> (u64, u32) {
        (self.0 / 1_000_000_000, (self.0 % 1_000_000_000) as u32)
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub const fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (secs, nanos) = self.split_secs();
        write!(f, "+{}.{:09}s", secs, nanos)
    }
}

/// Handle returned by [`Engine::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(u64);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A dequeued event as seen by the world's handler.
#[derive(Debug)]
pub struct Event<T, P> {
    pub id: EventId,
    pub time: SimTime,
    pub target: T,
    pub payload: P,
}

/// Outcome of [`Engine::run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub events_processed: u64,
    /// Time of the last processed event: `min(until, last event time)`.
    pub final_time: SimTime,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("cannot schedule events after run completion")]
    Finished,
}

#[derive(Debug, Error)]
pub enum RunError<E> {
    #[error("run rejected: {0}")]
    Rejected(&'static str),
    #[error("event {id} for {target} at {time} failed: {source}")]
    Handler {
        id: EventId,
        time: SimTime,
        target: String,
        #[source]
        source: E,
    },
}

/// Components driven by the engine. Handlers may schedule further events
/// through the `engine` argument; a handler error aborts the run.
pub trait World<T, P> {
    type Error: std::error::Error;

    fn handle(
        &mut self,
        engine: &mut Engine<T, P>,
        event: Event<T, P>,
    ) -> Result<(), Self::Error>;
}

struct Queued<T, P> {
    fire_time: SimTime,
    seq: u64,
    target: T,
    payload: P,
}

impl<T, P> PartialEq for Queued<T, P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_time == other.fire_time && self.seq == other.seq
    }
}

impl<T, P> Eq for Queued<T, P> {}

impl<T, P> PartialOrd for Queued<T, P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T, P> Ord for Queued<T, P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the smallest (time, seq) pops first.
        (other.fire_time, other.seq).cmp(&(self.fire_time, self.seq))
    }
}

/// Single-threaded event loop with a deterministic total order on events.
pub struct Engine<T, P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<T, P>>,
    cancelled: HashSet<u64>,
    running: bool,
    finished: bool,
}

impl<T, P> Engine<T, P> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
            running: false,
            finished: false,
        }
    }

    /// Current simulation clock. Inside a handler this is the firing
    /// event's timestamp.
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    /// Enqueues an event at `now + delay`. Equal fire times dequeue in
    /// scheduling order.
    pub fn schedule(
        &mut self,
        delay: SimTime,
        target: T,
        payload: P,
    ) -> Result<EventId, ScheduleError> {
        if self.finished {
            return Err(ScheduleError::Finished);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued {
            fire_time: self.now + delay,
            seq,
            target,
            payload,
        });
        Ok(EventId(seq))
    }

    /// Removes a scheduled event. Cancelling an already-fired or unknown
    /// id is a no-op.
    pub fn cancel(&mut self, id: EventId) {
        self.cancelled.insert(id.0);
    }

    /// Processes every event with `fire_time <= until` in `(fire_time, seq)`
    /// order, then marks the engine finished. The clock ends at the last
    /// processed event's time.
    pub fn run<W>(&mut self, until: SimTime, world: &mut W) -> Result<RunSummary, RunError<W::Error>>
    where
        W: World<T, P>,
        T: Copy + fmt::Debug,
    {
        if self.finished {
            return Err(RunError::Rejected("engine already finished"));
        }
        if self.running {
            return Err(RunError::Rejected("engine already running"));
        }
        self.running = true;
        let result = self.run_loop(until, world);
        self.running = false;
        self.finished = true;
        result
    }

    fn run_loop<W>(
        &mut self,
        until: SimTime,
        world: &mut W,
    ) -> Result<RunSummary, RunError<W::Error>>
    where
        W: World<T, P>,
        T: Copy + fmt::Debug,
    {
        let mut processed = 0u64;
        while let Some(head) = self.queue.peek() {
            if head.fire_time > until {
                break;
            }
            let queued = self.queue.pop().expect("peeked event");
            if self.cancelled.remove(&queued.seq) {
                continue;
            }
            self.now = queued.fire_time;
            let id = EventId(queued.seq);
            let target = queued.target;
            let event = Event {
                id,
                time: queued.fire_time,
                target,
                payload: queued.payload,
            };
            world.handle(self, event).map_err(|source| RunError::Handler {
                id,
                time: self.now,
                target: format!("{:?}", target),
                source,
            })?;
            processed += 1;
        }
        Ok(RunSummary {
            events_processed: processed,
            final_time: self.now,
        })
    }
}

impl<T, P> Default for Engine<T, P> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    struct Tag(u32);

    #[derive(Debug, Error)]
    #[error("handler failed on purpose")]
    struct Boom;

    /// Records every handled event; optionally fails on a marked payload.
    struct Log {
        seen: Vec<(SimTime, Tag, u32)>,
        fail_on: Option<u32>,
    }

    impl Log {
        fn new() -> Self {
            Log { seen: Vec::new(), fail_on: None }
        }
    }

    impl World<Tag, u32> for Log {
        type Error = Boom;

        fn handle(
            &mut self,
            _engine: &mut Engine<Tag, u32>,
            event: Event<Tag, u32>,
        ) -> Result<(), Boom> {
            if self.fail_on == Some(event.payload) {
                return Err(Boom);
            }
            self.seen.push((event.time, event.target, event.payload));
            Ok(())
        }
    }

    #[test]
    fn display_formats_nanosecond_timestamps() {
        assert_eq!(SimTime::from_nanos(20_256_000_000).to_string(), "+20.256000000s");
        assert_eq!(SimTime::ZERO.to_string(), "+0.000000000s");
    }

    #[test]
    fn fixed_delay_fires_at_offset() {
        let mut engine = Engine::new();
        engine.schedule(SimTime::from_millis(10), Tag(0), 1).unwrap();
        let mut log = Log::new();
        let summary = engine.run(SimTime::from_secs(1), &mut log).unwrap();
        assert_eq!(summary.events_processed, 1);
        assert_eq!(log.seen, vec![(SimTime::from_millis(10), Tag(0), 1)]);
    }

    #[test]
    fn same_time_events_dequeue_fifo() {
        let mut engine = Engine::new();
        let t = SimTime::from_secs(5);
        engine.schedule(t, Tag(0), 1).unwrap();
        engine.schedule(t, Tag(0), 2).unwrap();
        engine.schedule(t, Tag(0), 3).unwrap();
        let mut log = Log::new();
        engine.run(SimTime::from_secs(5), &mut log).unwrap();
        let order: Vec<u32> = log.seen.iter().map(|(_, _, p)| *p).collect();
        assert_eq!(order, vec![1, 2, 3]);
    }

    #[test]
    fn zero_delay_event_runs_after_earlier_same_time_events() {
        // A handler scheduling at delay 0 must run after events already
        // queued for the same instant.
        struct Chaser {
            order: Vec<u32>,
        }
        impl World<Tag, u32> for Chaser {
            type Error = Boom;
            fn handle(
                &mut self,
                engine: &mut Engine<Tag, u32>,
                event: Event<Tag, u32>,
            ) -> Result<(), Boom> {
                if event.payload == 1 {
                    engine.schedule(SimTime::ZERO, Tag(0), 99).unwrap();
                }
                self.order.push(event.payload);
                Ok(())
            }
        }
        let mut engine = Engine::new();
        let t = SimTime::from_secs(5);
        engine.schedule(t, Tag(0), 1).unwrap();
        engine.schedule(t, Tag(0), 2).unwrap();
        let mut world = Chaser { order: Vec::new() };
        engine.run(SimTime::from_secs(5), &mut world).unwrap();
        assert_eq!(world.order, vec![1, 2, 99]);
    }

    #[test]
    fn empty_queue_run_ends_at_zero() {
        let mut engine: Engine<Tag, u32> = Engine::new();
        let mut log = Log::new();
        let summary = engine.run(SimTime::from_secs(1), &mut log).unwrap();
        assert_eq!(summary.events_processed, 0);
        assert_eq!(summary.final_time, SimTime::ZERO);
    }

    #[test]
    fn run_stops_at_until_inclusive() {
        let mut engine = Engine::new();
        for (i, s) in [1u64, 2, 3].iter().enumerate() {
            engine.schedule(SimTime::from_secs(*s), Tag(0), i as u32).unwrap();
        }
        let mut log = Log::new();
        let summary = engine.run(SimTime::from_secs(2), &mut log).unwrap();
        assert_eq!(summary.events_processed, 2);
        assert_eq!(summary.final_time, SimTime::from_secs(2));
    }

    #[test]
    fn clock_ends_at_last_event_when_until_is_later() {
        let mut engine = Engine::new();
        engine.schedule(SimTime::from_secs(25), Tag(0), 0).unwrap();
        let mut log = Log::new();
        let summary = engine.run(SimTime::from_secs(30), &mut log).unwrap();
        assert_eq!(summary.final_time, SimTime::from_secs(25));
    }

    #[test]
    fn now_inside_handler_matches_event_time() {
        struct Probe {
            observed: Option<SimTime>,
        }
        impl World<Tag, u32> for Probe {
            type Error = Boom;
            fn handle(
                &mut self,
                engine: &mut Engine<Tag, u32>,
                _event: Event<Tag, u32>,
            ) -> Result<(), Boom> {
                self.observed = Some(engine.now());
                Ok(())
            }
        }
        let mut engine = Engine::new();
        let t = SimTime::from_nanos(20_256_000_000);
        engine.schedule(t, Tag(0), 0).unwrap();
        let mut world = Probe { observed: None };
        engine.run(SimTime::from_secs(30), &mut world).unwrap();
        assert_eq!(world.observed, Some(t));
    }

    #[test]
    fn scheduling_after_completion_is_rejected() {
        let mut engine: Engine<Tag, u32> = Engine::new();
        let mut log = Log::new();
        engine.run(SimTime::from_secs(1), &mut log).unwrap();
        assert_eq!(
            engine.schedule(SimTime::ZERO, Tag(0), 0),
            Err(ScheduleError::Finished)
        );
    }

    #[test]
    fn handler_error_aborts_with_event_identity() {
        let mut engine = Engine::new();
        engine.schedule(SimTime::from_secs(1), Tag(0), 1).unwrap();
        engine.schedule(SimTime::from_secs(2), Tag(7), 2).unwrap();
        engine.schedule(SimTime::from_secs(3), Tag(0), 3).unwrap();
        let mut log = Log::new();
        log.fail_on = Some(2);
        let err = engine.run(SimTime::from_secs(10), &mut log).unwrap_err();
        match err {
            RunError::Handler { time, target, .. } => {
                assert_eq!(time, SimTime::from_secs(2));
                assert_eq!(target, "Tag(7)");
            }
            other => panic!("unexpected error: {other}"),
        }
        // The failing event's successors were not processed.
        assert_eq!(log.seen.len(), 1);
    }

    #[test]
    fn cancelled_events_are_skipped() {
        let mut engine = Engine::new();
        let keep = engine.schedule(SimTime::from_secs(1), Tag(0), 1).unwrap();
        let drop = engine.schedule(SimTime::from_secs(2), Tag(0), 2).unwrap();
        assert_ne!(keep, drop);
        engine.cancel(drop);
        assert_eq!(engine.pending(), 1);
        let mut log = Log::new();
        let summary = engine.run(SimTime::from_secs(10), &mut log).unwrap();
        assert_eq!(summary.events_processed, 1);
        assert_eq!(log.seen[0].2, 1);
    }

    proptest! {
        /// Dequeue order equals an insertion-order-stable sort by fire time.
        #[test]
        fn dequeue_order_is_stable_sort_by_fire_time(times in proptest::collection::vec(0u64..1_000, 1..200)) {
            let mut engine = Engine::new();
            for (i, t) in times.iter().enumerate() {
                engine.schedule(SimTime::from_nanos(*t), Tag(0), i as u32).unwrap();
            }
            let mut log = Log::new();
            engine.run(SimTime::from_nanos(1_000), &mut log).unwrap();

            let mut expected: Vec<(u64, u32)> =
                times.iter().enumerate().map(|(i, t)| (*t, i as u32)).collect();
            expected.sort_by_key(|(t, _)| *t); // sort_by_key is stable
            let got: Vec<(u64, u32)> =
                log.seen.iter().map(|(t, _, p)| (t.as_nanos(), *p)).collect();
            prop_assert_eq!(got, expected);
        }

        /// Replaying the same schedule yields the identical processing order.
        #[test]
        fn replay_is_deterministic(times in proptest::collection::vec(0u64..1_000, 1..100)) {
            let run = || {
                let mut engine = Engine::new();
                for (i, t) in times.iter().enumerate() {
                    engine.schedule(SimTime::from_nanos(*t), Tag(0), i as u32).unwrap();
                }
                let mut log = Log::new();
                engine.run(SimTime::from_nanos(1_000), &mut log).unwrap();
                log.seen
            };
            prop_assert_eq!(run(), run());
        }
    }
}
