//! Live bridge between an interactive simulation and operator consoles.

pub mod protocol;
pub mod server;

use std::io;
use std::thread;
use std::time::{Duration, Instant};

use uchain::World;

pub use protocol::{decode, encode, Action, Hello, Message, PilotCommand, ProtocolError, Snapshot};
pub use server::{Drained, TelemetryServer, DEFAULT_PORT, WS_PATH};

/// Speed given to the head by a forward or backward key, m/s.
pub const PILOT_SPEED: f64 = 0.2;

/// Applies one tick's worth of commands. With nobody connected, or right
/// after a client drops, the head is stopped whatever was queued.
pub fn apply(world: &mut World, d: &Drained) -> Option<usize> {
    if d.lost_client || d.clients == 0 {
        world.set_pilot_velocity(0.0);
    } else {
        match d.motion {
            Some(Action::Forward) => world.set_pilot_velocity(PILOT_SPEED),
            Some(Action::Backward) => world.set_pilot_velocity(-PILOT_SPEED),
            Some(Action::Stop) => world.set_pilot_velocity(0.0),
            Some(Action::LaunchOverride) | None => {}
        }
    }
    if d.launch {
        world.request_launch()
    } else {
        None
    }
}

/// A world driven by the commands arriving at a server.
pub struct Interactive {
    world: World,
    server: TelemetryServer,
    seq: u64,
    last: Snapshot,
}

impl Interactive {
    pub fn new(world: World, server: TelemetryServer) -> Self {
        let last = Snapshot::of(&world, 0);
        Self {
            world,
            server,
            seq: 0,
            last,
        }
    }

    /// Binds on `addr` with a hello built from the world.
    pub fn bind(world: World, addr: impl std::net::ToSocketAddrs) -> io::Result<Self> {
        let hello = Hello::new(world.env(), world.manual_launch());
        let server = TelemetryServer::bind(addr, &hello)?;
        Ok(Self::new(world, server))
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn server(&self) -> &TelemetryServer {
        &self.server
    }

    pub fn into_world(self) -> World {
        self.world
    }

    /// Drains commands and steps once. Returns the halfway frame and the
    /// new state frame, not yet published.
    pub fn advance(&mut self) -> (Snapshot, Snapshot) {
        let drained = self.server.drain();
        if let Some(id) = apply(&mut self.world, &drained) {
            log::info!("operator launched relay {id}");
        }
        self.world.step();
        let cur = Snapshot::of(&self.world, self.seq + 2);
        let mid = Snapshot::midway(&self.last, &cur, self.seq + 1);
        self.seq += 2;
        self.last = cur.clone();
        (mid, cur)
    }

    /// One decision tick with both frames published at once.
    pub fn tick(&mut self) {
        let (mid, cur) = self.advance();
        self.server.publish(&mid);
        self.server.publish(&cur);
    }

    /// Real-time loop: one decision tick per `period`, frames spread evenly
    /// over it. Stops once sim time reaches `horizon_s`.
    pub fn run(&mut self, period: Duration, horizon_s: f64) {
        let mut next = Instant::now();
        while self.world.time() < horizon_s - 1e-9 {
            let (mid, cur) = self.advance();
            self.server.publish(&mid);
            next += period / 2;
            sleep_until(next);
            self.server.publish(&cur);
            next += period / 2;
            sleep_until(next);
        }
    }
}

fn sleep_until(t: Instant) {
    let now = Instant::now();
    if t > now {
        thread::sleep(t - now);
    }
}
