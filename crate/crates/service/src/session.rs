//! Per-session worker. One task owns the simulator and planner state and
//! applies commands in receipt order; planning runs on the blocking pool,
//! one step at a time.

use std::collections::VecDeque;
use std::future::Future;
use std::pin::Pin;
use std::sync::Arc;

use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use vismpc_core::grid::{Image, Pixel};
use vismpc_core::planner::{EpisodeRunner, GoalPair, GoalSpec, MpcController, StepOutcome};
use vismpc_core::sim::{random_scene_with, render, SceneConfig, WorldState};

use crate::error::ServiceError;
use crate::wire::{encode_frame, ClientCommand, CommandReply, GoalAck, Heatmap, Mode, ServerEvent, SessionRequest, SessionView, StepEvent};
use crate::ServiceConfig;

/// Number of recent step events kept per session.
pub const RECENT_EVENTS: usize = 32;
const EVENT_BUFFER: usize = 256;

type Reply<T> = oneshot::Sender<Result<T, ServiceError>>;
pub type PendingReply = Pin<Box<dyn Future<Output = CommandReply> + Send>>;

enum Command {
    SetGoal(Vec<GoalPair>, Reply<GoalAck>),
    Step(Reply<StepEvent>),
    Run(Reply<SessionView>),
    Pause(Reply<SessionView>),
    Reset(SessionRequest, Reply<SessionView>),
    View(Reply<SessionView>),
    Recent(Reply<Vec<StepEvent>>),
}

/// Cloneable handle used by the HTTP layer.
#[derive(Clone)]
pub struct SessionHandle {
    id: u64,
    commands: mpsc::Sender<Command>,
    events: broadcast::Sender<ServerEvent>,
}

impl SessionHandle {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServerEvent> {
        self.events.subscribe()
    }

    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ServiceError> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(make(tx)).await.map_err(|_| ServiceError::Closed)?;
        rx.await.map_err(|_| ServiceError::Closed)?
    }

    /// Queues a command and returns a future for its reply. Commands reach
    /// the worker in the order `enqueue` is awaited.
    async fn enqueue<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> PendingReply
    where
        T: serde::Serialize + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        let sent = self.commands.send(make(tx)).await;
        Box::pin(async move {
            let result = match sent {
                Ok(()) => rx.await.unwrap_or(Err(ServiceError::Closed)),
                Err(_) => Err(ServiceError::Closed),
            };
            CommandReply::from_result(result)
        })
    }

    /// Queues a socket command; the returned future resolves to its reply.
    pub async fn submit(&self, cmd: ClientCommand) -> PendingReply {
        match cmd {
            ClientCommand::Goal { pairs } => self.enqueue(|r| Command::SetGoal(pairs, r)).await,
            ClientCommand::Step => self.enqueue(Command::Step).await,
            ClientCommand::Run => self.enqueue(Command::Run).await,
            ClientCommand::Pause => self.enqueue(Command::Pause).await,
            ClientCommand::Reset(req) => self.enqueue(|r| Command::Reset(req, r)).await,
            ClientCommand::Frame => self.enqueue(Command::View).await,
        }
    }

    pub async fn set_goal(&self, pairs: Vec<GoalPair>) -> Result<GoalAck, ServiceError> {
        self.call(|r| Command::SetGoal(pairs, r)).await
    }

    /// Executes one step and returns its event once planning finishes.
    pub async fn step(&self) -> Result<StepEvent, ServiceError> {
        self.call(Command::Step).await
    }

    pub async fn run(&self) -> Result<SessionView, ServiceError> {
        self.call(Command::Run).await
    }

    pub async fn pause(&self) -> Result<SessionView, ServiceError> {
        self.call(Command::Pause).await
    }

    pub async fn reset(&self, req: SessionRequest) -> Result<SessionView, ServiceError> {
        self.call(|r| Command::Reset(req, r)).await
    }

    pub async fn view(&self) -> Result<SessionView, ServiceError> {
        self.call(Command::View).await
    }

    pub async fn recent(&self) -> Result<Vec<StepEvent>, ServiceError> {
        self.call(Command::Recent).await
    }
}

/// Builds the initial world for a request.
fn build_world(config: &ServiceConfig, req: &SessionRequest) -> Result<WorldState, ServiceError> {
    let seed = req.seed.unwrap_or(config.seed);
    let params = req.params.unwrap_or_default();
    if req.objects.is_none() && req.pusher.is_none() {
        let n = req.n_objects.unwrap_or(config.objects);
        return Ok(random_scene_with(seed, n, config.grid, config.grid, params)?);
    }
    let scene = SceneConfig {
        width: config.grid,
        height: config.grid,
        seed,
        n_objects: req.n_objects.unwrap_or(config.objects),
        objects: req.objects.clone(),
        pusher: req.pusher,
        params,
    };
    Ok(scene.build()?)
}

fn check_pairs(pairs: &[GoalPair], width: usize, height: usize) -> Result<GoalSpec, ServiceError> {
    for pair in pairs {
        if !pair.designated.in_bounds(width, height) || !pair.goal.in_bounds(width, height) {
            return Err(ServiceError::GoalOutOfBounds {
                pair: *pair,
                width,
                height,
            });
        }
    }
    Ok(GoalSpec::new(pairs.to_vec())?)
}

struct InFlight {
    generation: u64,
    task: JoinHandle<(EpisodeRunner, vismpc_core::Result<StepOutcome>)>,
    reply: Option<Reply<StepEvent>>,
}

struct Worker {
    id: u64,
    config: Arc<ServiceConfig>,
    seed: u64,
    max_steps: usize,
    world: WorldState,
    frame: Image,
    pixels: Vec<Pixel>,
    steps: usize,
    runner: Option<EpisodeRunner>,
    goal: Option<GoalSpec>,
    pending: Option<GoalSpec>,
    mode: Mode,
    /// Bumped on reset so a step started before it is discarded.
    generation: u64,
    events: broadcast::Sender<ServerEvent>,
    recent: VecDeque<StepEvent>,
}

impl Worker {
    fn new(
        id: u64,
        config: Arc<ServiceConfig>,
        req: &SessionRequest,
        events: broadcast::Sender<ServerEvent>,
    ) -> Result<Self, ServiceError> {
        let world = build_world(&config, req)?;
        let frame = render(&world);
        Ok(Self {
            id,
            seed: req.seed.unwrap_or(config.seed),
            max_steps: req.steps.unwrap_or(config.steps),
            config,
            world,
            frame,
            pixels: Vec::new(),
            steps: 0,
            runner: None,
            goal: None,
            pending: None,
            mode: Mode::Idle,
            generation: 0,
            events,
            recent: VecDeque::with_capacity(RECENT_EVENTS),
        })
    }

    fn view(&self) -> SessionView {
        SessionView {
            id: self.id,
            seed: self.seed,
            mode: self.mode,
            step: self.steps,
            max_steps: self.max_steps,
            width: self.world.width,
            height: self.world.height,
            frame: encode_frame(&self.frame),
            goal: self.goal.clone(),
            pending_goal: self.pending.clone(),
            pixels: self.pixels.clone(),
            pusher: self.world.pusher,
        }
    }

    fn emit(&self, event: ServerEvent) {
        // No subscribers is fine.
        let _ = self.events.send(event);
    }

    fn set_mode(&mut self, mode: Mode) {
        if self.mode != mode {
            self.mode = mode;
            self.emit(ServerEvent::Mode { mode, step: self.steps });
        }
    }

    fn reset(&mut self, req: &SessionRequest) -> Result<SessionView, ServiceError> {
        let fresh = Worker::new(self.id, self.config.clone(), req, self.events.clone())?;
        let generation = self.generation + 1;
        *self = Worker { generation, ..fresh };
        let view = self.view();
        self.emit(ServerEvent::Reset(view.clone()));
        Ok(view)
    }

    /// Applies any pending goal and hands the runner to the blocking pool.
    fn start_step(&mut self, reply: Option<Reply<StepEvent>>, inflight: &mut Option<InFlight>) -> Result<(), ServiceError> {
        if inflight.is_some() {
            return Err(ServiceError::Conflict("a step is already in progress".into()));
        }
        if self.steps >= self.max_steps {
            return Err(ServiceError::Conflict(format!("episode finished after {} steps", self.max_steps)));
        }
        if let Some(goal) = self.pending.take() {
            match self.runner.as_mut() {
                Some(r) => r.set_goal(goal.clone())?,
                None => {
                    let ctrl = Box::new(MpcController::new(self.config.model.clone(), self.config.plan.clone()));
                    self.runner = Some(EpisodeRunner::new(self.world.clone(), goal.clone(), ctrl, self.seed)?);
                }
            }
            self.goal = Some(goal);
        }
        let mut runner = self.runner.take().ok_or(vismpc_core::Error::NoGoal)?;
        let task = tokio::task::spawn_blocking(move || {
            let outcome = runner.step();
            (runner, outcome)
        });
        *inflight = Some(InFlight {
            generation: self.generation,
            task,
            reply,
        });
        Ok(())
    }

    fn finish_step(&mut self, done: InFlight, joined: Result<(EpisodeRunner, vismpc_core::Result<StepOutcome>), tokio::task::JoinError>) {
        let InFlight { generation, reply, .. } = done;
        let result = match joined {
            Err(e) => Err(ServiceError::BadRequest(format!("step task failed: {e}"))),
            Ok(_) if generation != self.generation => Err(ServiceError::Conflict("session was reset during the step".into())),
            Ok((runner, outcome)) => {
                let result = outcome.map_err(ServiceError::from).map(|o| {
                    self.world = runner.world().clone();
                    self.frame = o.frame.clone();
                    self.pixels = o.pixels.clone();
                    self.steps = runner.steps_taken();
                    self.event(&o, runner.goal())
                });
                self.runner = Some(runner);
                result
            }
        };
        match &result {
            Ok(event) => {
                if self.recent.len() == RECENT_EVENTS {
                    self.recent.pop_front();
                }
                self.recent.push_back(event.clone());
                self.emit(ServerEvent::Step(event.clone()));
                if self.steps >= self.max_steps {
                    self.set_mode(Mode::Idle);
                }
            }
            Err(e) if generation == self.generation => {
                self.emit(ServerEvent::Error { message: e.to_string() });
                self.set_mode(Mode::Idle);
            }
            Err(_) => {}
        }
        if let Some(reply) = reply {
            let _ = reply.send(result);
        }
    }

    fn event(&self, o: &StepOutcome, goal: &GoalSpec) -> StepEvent {
        StepEvent {
            session: self.id,
            step: o.t,
            width: o.frame.width(),
            height: o.frame.height(),
            frame: encode_frame(&o.frame),
            goal: goal.clone(),
            pixels: o.pixels.clone(),
            objective: o.objective,
            action: o.action.to_array(),
            heatmaps: o.distributions.iter().map(Heatmap::encode).collect(),
        }
    }

    fn has_goal(&self) -> bool {
        self.goal.is_some() || self.pending.is_some()
    }

    fn handle(&mut self, cmd: Command, inflight: &mut Option<InFlight>) {
        match cmd {
            Command::SetGoal(pairs, reply) => {
                let result = check_pairs(&pairs, self.world.width, self.world.height).map(|goal| {
                    self.pending = Some(goal);
                    let ack = GoalAck {
                        pairs,
                        applies_at_step: self.steps + usize::from(inflight.is_some()),
                    };
                    self.emit(ServerEvent::Goal(ack.clone()));
                    ack
                });
                let _ = reply.send(result);
            }
            Command::Step(reply) => {
                if self.mode == Mode::Running {
                    let _ = reply.send(Err(ServiceError::Conflict("session is running".into())));
                } else if !self.has_goal() {
                    let _ = reply.send(Err(vismpc_core::Error::NoGoal.into()));
                } else {
                    let (tx, rx) = oneshot::channel();
                    match self.start_step(Some(tx), inflight) {
                        Ok(()) => {
                            // Forward the eventual result without blocking the worker.
                            tokio::spawn(async move {
                                let result = rx.await.unwrap_or(Err(ServiceError::Closed));
                                let _ = reply.send(result);
                            });
                        }
                        Err(e) => {
                            let _ = reply.send(Err(e));
                        }
                    }
                }
            }
            Command::Run(reply) => {
                let result = if !self.has_goal() {
                    Err(vismpc_core::Error::NoGoal.into())
                } else if self.steps >= self.max_steps {
                    Err(ServiceError::Conflict(format!("episode finished after {} steps", self.max_steps)))
                } else {
                    self.set_mode(Mode::Running);
                    Ok(self.view())
                };
                let _ = reply.send(result);
            }
            Command::Pause(reply) => {
                if self.mode == Mode::Running {
                    self.set_mode(Mode::Paused);
                }
                let _ = reply.send(Ok(self.view()));
            }
            Command::Reset(req, reply) => {
                let _ = reply.send(self.reset(&req));
            }
            Command::View(reply) => {
                let _ = reply.send(Ok(self.view()));
            }
            Command::Recent(reply) => {
                let _ = reply.send(Ok(self.recent.iter().cloned().collect()));
            }
        }
    }
}

async fn wait(inflight: &mut Option<InFlight>) -> Result<(EpisodeRunner, vismpc_core::Result<StepOutcome>), tokio::task::JoinError> {
    match inflight {
        Some(f) => (&mut f.task).await,
        None => std::future::pending().await,
    }
}

async fn worker_loop(mut worker: Worker, mut commands: mpsc::Receiver<Command>) {
    let mut inflight: Option<InFlight> = None;
    loop {
        if worker.mode == Mode::Running && inflight.is_none() {
            if let Err(e) = worker.start_step(None, &mut inflight) {
                worker.emit(ServerEvent::Error { message: e.to_string() });
                worker.set_mode(Mode::Idle);
            }
        }
        tokio::select! {
            cmd = commands.recv() => match cmd {
                Some(cmd) => worker.handle(cmd, &mut inflight),
                None => break,
            },
            joined = wait(&mut inflight) => {
                let done = inflight.take().expect("awaited an in-flight step");
                worker.finish_step(done, joined);
            }
        }
    }
}

/// Starts a session worker and returns its handle with the initial view.
pub fn spawn_session(id: u64, config: Arc<ServiceConfig>, req: &SessionRequest) -> Result<(SessionHandle, SessionView), ServiceError> {
    let (events, _) = broadcast::channel(EVENT_BUFFER);
    let worker = Worker::new(id, config, req, events.clone())?;
    let view = worker.view();
    let (tx, rx) = mpsc::channel(64);
    tokio::spawn(worker_loop(worker, rx));
    Ok((
        SessionHandle {
            id,
            commands: tx,
            events,
        },
        view,
    ))
}
