use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand_chacha::ChaCha8Rng;

use super::{
    generate_logs, recent_busy_time, route, service_time, station_rng, EventCensus, LogEntity, Pass1Order,
    ProductTrace, QueueLog, Rqm, SimConfig, SimRun, Snapshot, Station, PRODUCTS_PER_LOG,
};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
enum Event {
    LogArrival(usize),
    ConveyorExit(usize),
    CanterDone,
    Rqm7Exit(usize),
    KockumsDone,
    MkvDone,
    TrimmerArrival(usize, u8),
    TrimmerDone,
}

impl Event {
    fn kind(self) -> &'static str {
        match self {
            Event::LogArrival(_) => "log_arrival",
            Event::ConveyorExit(_) => "conveyor_exit",
            Event::CanterDone => "canter_done",
            Event::Rqm7Exit(_) => "rqm7_exit",
            Event::KockumsDone => "kockums_done",
            Event::MkvDone => "mkv_done",
            Event::TrimmerArrival(..) => "trimmer_arrival",
            Event::TrimmerDone => "trimmer_done",
        }
    }
}

struct Scheduled {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so that the max-heap pops the earliest (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

/// Single-server station with a FIFO queue.
struct Server<T> {
    queue: VecDeque<T>,
    current: Option<(T, f64)>,
    busy: Vec<(f64, f64)>,
    rng: ChaCha8Rng,
}

impl<T: Copy> Server<T> {
    fn new(seed: u64, station: Station) -> Self {
        Self { queue: VecDeque::new(), current: None, busy: Vec::new(), rng: station_rng(seed, station.stream()) }
    }

    fn finish(&mut self, now: f64) -> T {
        let (item, start) = self.current.take().expect("completion without a job in service");
        self.busy.push((start, now));
        item
    }
}

#[derive(Clone, Copy)]
enum CanterJob {
    Pass1(usize),
    Pass2(usize),
}

struct Line<'a> {
    config: &'a SimConfig,
    logs: Vec<LogEntity>,
    routes: Vec<Rqm>,
    snapshots: Vec<Snapshot>,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    /// Logs on each of RQM4, RQM5 (in transit or waiting), then RQM7.
    on_conveyor: [usize; 3],
    /// Logs waiting at the canter from RQM4 and RQM5, with their exit times.
    waiting: [VecDeque<(usize, f64)>; 2],
    rqm7: VecDeque<usize>,
    canter: Server<CanterJob>,
    kockums: Server<(usize, u8)>,
    mkv: Server<usize>,
    trimmer: Server<(usize, u8)>,
    traces: Vec<ProductTrace>,
    census: EventCensus,
    queue_log: QueueLog,
}

fn conveyor_name(rqm: Rqm) -> &'static str {
    match rqm {
        Rqm::Rqm4 => "rqm4",
        Rqm::Rqm5 => "rqm5",
    }
}

impl<'a> Line<'a> {
    fn schedule(&mut self, time: f64, event: Event) {
        self.heap.push(Scheduled { time, seq: self.seq, event });
        self.seq += 1;
    }

    fn snapshot(&self, now: f64) -> Snapshot {
        let w = self.config.u_trim_window;
        let mut busy = recent_busy_time(&self.trimmer.busy, now - w, now);
        if let Some((_, start)) = self.trimmer.current {
            busy += now - start.max(now - w);
        }
        Snapshot {
            q_trim: self.trimmer.queue.len(),
            u_trim: (busy / w).clamp(0.0, 1.0),
            q_rqm4: self.on_conveyor[0],
            q_rqm5: self.on_conveyor[1],
            q_rqm7: self.on_conveyor[2],
        }
    }

    fn handle(&mut self, now: f64, event: Event) {
        *self.census.entry(event.kind().to_string()).or_default() += 1;
        match event {
            Event::LogArrival(i) => {
                let snap = self.snapshot(now);
                let rqm = route(self.config, &self.logs[i], snap.q_rqm4, snap.q_rqm5);
                self.snapshots.push(snap);
                self.routes.push(rqm);
                self.on_conveyor[rqm as usize] += 1;
                self.queue_log.enter(conveyor_name(rqm), (i, 0));
                self.schedule(now + self.config.quantize(self.config.transit(rqm)), Event::ConveyorExit(i));
                if i + 1 < self.logs.len() {
                    self.schedule(self.logs[i + 1].arrival_time, Event::LogArrival(i + 1));
                }
            }
            Event::ConveyorExit(i) => {
                self.waiting[self.routes[i] as usize].push_back((i, now));
                self.start_canter(now);
            }
            Event::CanterDone => {
                match self.canter.finish(now) {
                    CanterJob::Pass1(i) => {
                        self.to_kockums(now, i, [1, 2]);
                        self.on_conveyor[2] += 1;
                        self.queue_log.enter("rqm7", (i, 0));
                        self.schedule(now + self.config.quantize(self.config.transit_rqm7), Event::Rqm7Exit(i));
                    }
                    CanterJob::Pass2(i) => {
                        self.to_kockums(now, i, [3, 4]);
                        self.queue_log.enter("mkv", (i, 0));
                        self.mkv.queue.push_back(i);
                        self.start_mkv(now);
                    }
                }
                self.start_canter(now);
            }
            Event::Rqm7Exit(i) => {
                self.rqm7.push_back(i);
                self.start_canter(now);
            }
            Event::KockumsDone => {
                let product = self.kockums.finish(now);
                let at = now + self.config.quantize(self.config.transfer_kockums);
                self.schedule(at, Event::TrimmerArrival(product.0, product.1));
                self.start_kockums(now);
            }
            Event::MkvDone => {
                let i = self.mkv.finish(now);
                let at = now + self.config.quantize(self.config.transfer_mkv);
                for k in 5..=PRODUCTS_PER_LOG as u8 {
                    self.schedule(at, Event::TrimmerArrival(i, k));
                }
                self.start_mkv(now);
            }
            Event::TrimmerArrival(i, k) => {
                let log = &self.logs[i];
                self.traces.push(ProductTrace {
                    features: self.snapshots[i].product(log, self.routes[i], k),
                    delta_t: now - log.arrival_time,
                });
                self.queue_log.enter("trimmer", (i, k));
                self.trimmer.queue.push_back((i, k));
                self.start_trimmer(now);
            }
            Event::TrimmerDone => {
                self.trimmer.finish(now);
                self.start_trimmer(now);
            }
        }
    }

    fn to_kockums(&mut self, now: f64, log: usize, products: [u8; 2]) {
        for k in products {
            self.queue_log.enter("kockums", (log, k));
            self.kockums.queue.push_back((log, k));
        }
        self.start_kockums(now);
    }

    fn next_pass1(&mut self) -> Option<usize> {
        let pick = match self.config.pass1_order {
            Pass1Order::Rqm5First => {
                if self.waiting[1].is_empty() {
                    0
                } else {
                    1
                }
            }
            Pass1Order::Fifo => match (self.waiting[0].front(), self.waiting[1].front()) {
                (Some(a), Some(b)) => usize::from(b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)).is_lt()),
                (None, _) => 1,
                (_, None) => 0,
            },
        };
        let (i, _) = self.waiting[pick].pop_front()?;
        self.on_conveyor[pick] -= 1;
        self.queue_log.exit(if pick == 0 { "rqm4" } else { "rqm5" }, (i, 0));
        Some(i)
    }

    fn start_canter(&mut self, now: f64) {
        if self.canter.current.is_some() {
            return;
        }
        let job = if let Some(i) = self.rqm7.pop_front() {
            self.on_conveyor[2] -= 1;
            self.queue_log.exit("rqm7", (i, 0));
            CanterJob::Pass2(i)
        } else if let Some(i) = self.next_pass1() {
            CanterJob::Pass1(i)
        } else {
            return;
        };
        let log = match job {
            CanterJob::Pass1(i) | CanterJob::Pass2(i) => &self.logs[i],
        };
        let nominal = self.config.canter_nominal(log.lg, log.dia_moy);
        let d = service_time(self.config, &mut self.canter.rng, nominal);
        self.canter.current = Some((job, now));
        self.schedule(now + d, Event::CanterDone);
    }

    fn start_kockums(&mut self, now: f64) {
        if self.kockums.current.is_some() {
            return;
        }
        if let Some(p) = self.kockums.queue.pop_front() {
            self.queue_log.exit("kockums", p);
            let d = service_time(self.config, &mut self.kockums.rng, self.config.kockums_time);
            self.kockums.current = Some((p, now));
            self.schedule(now + d, Event::KockumsDone);
        }
    }

    fn start_mkv(&mut self, now: f64) {
        if self.mkv.current.is_some() {
            return;
        }
        if let Some(i) = self.mkv.queue.pop_front() {
            self.queue_log.exit("mkv", (i, 0));
            let d = service_time(self.config, &mut self.mkv.rng, self.config.mkv_time);
            self.mkv.current = Some((i, now));
            self.schedule(now + d, Event::MkvDone);
        }
    }

    fn start_trimmer(&mut self, now: f64) {
        if self.trimmer.current.is_some() {
            return;
        }
        if let Some(p) = self.trimmer.queue.pop_front() {
            self.queue_log.exit("trimmer", p);
            let d = service_time(self.config, &mut self.trimmer.rng, self.config.trimmer_time);
            self.trimmer.current = Some((p, now));
            self.schedule(now + d, Event::TrimmerDone);
        }
    }
}

/// Runs the complete line until every product has left the trimmer.
pub fn simulate_full(config: &SimConfig) -> Result<SimRun> {
    let logs = generate_logs(config)?;
    let n = logs.len();
    let seed = config.seed;
    let mut line = Line {
        config,
        routes: Vec::with_capacity(n),
        snapshots: Vec::with_capacity(n),
        heap: BinaryHeap::new(),
        seq: 0,
        on_conveyor: [0; 3],
        waiting: [VecDeque::new(), VecDeque::new()],
        rqm7: VecDeque::new(),
        canter: Server::new(seed, Station::Canter),
        kockums: Server::new(seed, Station::Kockums),
        mkv: Server::new(seed, Station::Mkv),
        trimmer: Server::new(seed, Station::Trimmer),
        traces: Vec::with_capacity(n * PRODUCTS_PER_LOG),
        census: EventCensus::new(),
        queue_log: QueueLog::default(),
        logs,
    };
    line.schedule(line.logs[0].arrival_time, Event::LogArrival(0));
    let mut end_time = 0.0;
    while let Some(Scheduled { time, event, .. }) = line.heap.pop() {
        end_time = time;
        line.handle(time, event);
    }
    Ok(SimRun {
        logs: line.logs,
        routes: line.routes,
        traces: line.traces,
        busy: [line.canter.busy, line.kockums.busy, line.mkv.busy, line.trimmer.busy],
        end_time,
        census: line.census,
        queue_log: line.queue_log,
    })
}
