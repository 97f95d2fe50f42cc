//! GridWorld mazes with one-step SONAR observations.
//!
//! Each agent owns one [`Maze`]. The agent observes the categories of the
//! four neighbouring cells (up, down, right, left), each coded as −1 (hell or
//! outside the grid), +1 (goal) or 0 (free or source), giving 81 states.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{FedRlError, Result};
use crate::rng::SimRng;

/// Number of distinct SONAR states.
pub const NUM_STATES: usize = 81;
/// Number of movement actions.
pub const NUM_ACTIONS: usize = 4;
/// Default per-episode step limit.
pub const DEFAULT_STEP_LIMIT: usize = 100;

pub const REWARD_GOAL: f64 = 1.0;
pub const REWARD_HELL: f64 = -1.0;
pub const REWARD_CLOSER: f64 = 0.1;
pub const REWARD_AWAY: f64 = -0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Hell,
    Goal,
    Source,
    Free,
}

impl CellKind {
    fn symbol(self) -> char {
        match self {
            CellKind::Hell => 'H',
            CellKind::Goal => 'G',
            CellKind::Source => 'S',
            CellKind::Free => '.',
        }
    }

    fn from_symbol(c: char) -> Option<Self> {
        match c {
            'H' => Some(CellKind::Hell),
            'G' => Some(CellKind::Goal),
            'S' => Some(CellKind::Source),
            '.' => Some(CellKind::Free),
            _ => None,
        }
    }

    fn sonar_code(self) -> i8 {
        match self {
            CellKind::Hell => -1,
            CellKind::Goal => 1,
            CellKind::Source | CellKind::Free => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Right,
    Left,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Right, Action::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Right => (0, 1),
            Action::Left => (0, -1),
        }
    }
}

/// Cell coordinate; row 0 is the top of the maze.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Observation of the four neighbouring cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SonarState {
    pub up: i8,
    pub down: i8,
    pub right: i8,
    pub left: i8,
}

impl SonarState {
    pub fn new(up: i8, down: i8, right: i8, left: i8) -> Result<Self> {
        for v in [up, down, right, left] {
            if !(-1..=1).contains(&v) {
                return Err(FedRlError::Contract(format!("sonar code {v} outside [-1, 1]")));
            }
        }
        Ok(Self { up, down, right, left })
    }

    /// Base-3 index of `(up+1, down+1, right+1, left+1)`, most significant first.
    pub fn index(self) -> usize {
        [self.up, self.down, self.right, self.left]
            .iter()
            .fold(0usize, |acc, &v| acc * 3 + (v + 1) as usize)
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= NUM_STATES {
            return Err(FedRlError::Contract(format!("state index {index} >= {NUM_STATES}")));
        }
        let digit = |p: u32| ((index / 3usize.pow(p)) % 3) as i8 - 1;
        Ok(Self { up: digit(3), down: digit(2), right: digit(1), left: digit(0) })
    }
}

/// Why an episode ended, if it did.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalKind {
    ReachedGoal,
    HitHell,
    StepLimit,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    /// Observation after the move. On a hell collision the agent stays where
    /// it was, so this is the pre-move observation.
    pub next_state: SonarState,
    pub reward: f64,
    pub terminal: bool,
    pub terminal_kind: TerminalKind,
}

/// One agent's environment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Maze {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    id: usize,
    source: Pos,
    /// Manhattan distance from each cell to the nearest goal.
    goal_distance: Vec<usize>,
}

impl Maze {
    /// Builds a maze from a row-major cell grid and validates it: exactly one
    /// source, at least one goal, and a goal reachable from the source
    /// without crossing hell cells.
    pub fn from_cells(width: usize, height: usize, cells: Vec<CellKind>, id: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(FedRlError::InvalidMaze("empty grid".into()));
        }
        if cells.len() != width * height {
            return Err(FedRlError::InvalidMaze(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        let sources: Vec<usize> =
            (0..cells.len()).filter(|&i| cells[i] == CellKind::Source).collect();
        if sources.len() != 1 {
            return Err(FedRlError::InvalidMaze(format!(
                "expected exactly one source, found {}",
                sources.len()
            )));
        }
        let goals: Vec<Pos> = (0..cells.len())
            .filter(|&i| cells[i] == CellKind::Goal)
            .map(|i| Pos::new(i / width, i % width))
            .collect();
        if goals.is_empty() {
            return Err(FedRlError::InvalidMaze("no goal cell".into()));
        }
        let goal_distance = (0..cells.len())
            .map(|i| {
                let (r, c) = (i / width, i % width);
                goals.iter().map(|g| g.row.abs_diff(r) + g.col.abs_diff(c)).min().unwrap_or(0)
            })
            .collect();
        let maze = Self {
            width,
            height,
            cells,
            id,
            source: Pos::new(sources[0] / width, sources[0] % width),
            goal_distance,
        };
        if maze.shortest_path_len().is_none() {
            return Err(FedRlError::InvalidMaze("goal unreachable from source".into()));
        }
        Ok(maze)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }

    pub fn source(&self) -> Pos {
        self.source
    }

    pub fn cells(&self) -> &[CellKind] {
        &self.cells
    }

    pub fn cell(&self, pos: Pos) -> Option<CellKind> {
        (pos.row < self.height && pos.col < self.width)
            .then(|| self.cells[pos.row * self.width + pos.col])
    }

    pub fn goal_distance(&self, pos: Pos) -> Option<usize> {
        (pos.row < self.height && pos.col < self.width)
            .then(|| self.goal_distance[pos.row * self.width + pos.col])
    }

    pub fn hell_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == CellKind::Hell).count()
    }

    fn neighbor(&self, pos: Pos, action: Action) -> Option<Pos> {
        let (dr, dc) = action.delta();
        let r = pos.row.checked_add_signed(dr)?;
        let c = pos.col.checked_add_signed(dc)?;
        (r < self.height && c < self.width).then_some(Pos::new(r, c))
    }

    /// Neighbour category; outside the grid reads as hell.
    fn neighbor_kind(&self, pos: Pos, action: Action) -> CellKind {
        self.neighbor(pos, action).and_then(|p| self.cell(p)).unwrap_or(CellKind::Hell)
    }

    /// SONAR observation at `pos`.
    pub fn encode_state(&self, pos: Pos) -> Result<SonarState> {
        match self.cell(pos) {
            None => Err(FedRlError::Contract(format!(
                "position ({}, {}) outside {}x{} maze",
                pos.row, pos.col, self.width, self.height
            ))),
            Some(CellKind::Hell) => Err(FedRlError::Contract(format!(
                "position ({}, {}) is a hell cell",
                pos.row, pos.col
            ))),
            Some(_) => {
                let code = |a| self.neighbor_kind(pos, a).sonar_code();
                Ok(SonarState {
                    up: code(Action::Up),
                    down: code(Action::Down),
                    right: code(Action::Right),
                    left: code(Action::Left),
                })
            }
        }
    }

    /// Applies one deterministic move from `pos` and returns the outcome
    /// together with the agent's new position. Step limits are enforced by
    /// [`EpisodeCursor`].
    pub fn step(&self, pos: Pos, action: Action) -> Result<(StepOutcome, Pos)> {
        let here = self.encode_state(pos)?;
        let target = self.neighbor(pos, action);
        let kind = target.and_then(|p| self.cell(p)).unwrap_or(CellKind::Hell);
        let outcome = match (kind, target) {
            (CellKind::Hell, _) | (_, None) => {
                return Ok((
                    StepOutcome {
                        next_state: here,
                        reward: REWARD_HELL,
                        terminal: true,
                        terminal_kind: TerminalKind::HitHell,
                    },
                    pos,
                ))
            }
            (CellKind::Goal, Some(next)) => (
                StepOutcome {
                    next_state: self.encode_state(next)?,
                    reward: REWARD_GOAL,
                    terminal: true,
                    terminal_kind: TerminalKind::ReachedGoal,
                },
                next,
            ),
            (CellKind::Free | CellKind::Source, Some(next)) => {
                let before = self.goal_distance[pos.row * self.width + pos.col];
                let after = self.goal_distance[next.row * self.width + next.col];
                let reward = if after < before { REWARD_CLOSER } else { REWARD_AWAY };
                (
                    StepOutcome {
                        next_state: self.encode_state(next)?,
                        reward,
                        terminal: false,
                        terminal_kind: TerminalKind::None,
                    },
                    next,
                )
            }
        };
        Ok(outcome)
    }

    /// Length of the shortest hell-free path from source to any goal.
    pub fn shortest_path_len(&self) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.cells.len()];
        let start = self.source.row * self.width + self.source.col;
        dist[start] = 0;
        let mut queue = VecDeque::from([self.source]);
        while let Some(p) = queue.pop_front() {
            let d = dist[p.row * self.width + p.col];
            if self.cells[p.row * self.width + p.col] == CellKind::Goal {
                return Some(d);
            }
            for a in Action::ALL {
                if let Some(n) = self.neighbor(p, a) {
                    let idx = n.row * self.width + n.col;
                    if self.cells[idx] != CellKind::Hell && dist[idx] == usize::MAX {
                        dist[idx] = d + 1;
                        queue.push_back(n);
                    }
                }
            }
        }
        None
    }
}

impl fmt::Display for Maze {
    /// Text format: `width height`, then `height` rows of `H`, `G`, `S`, `.`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", self.width, self.height)?;
        for row in self.cells.chunks(self.width) {
            let line: String = row.iter().map(|c| c.symbol()).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

impl FromStr for Maze {
    type Err = FedRlError;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) =
            lines.next().ok_or(FedRlError::MazeParse { line: 1, msg: "empty input".into() })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| FedRlError::MazeParse { line: 1, msg: e.to_string() })?;
        let [width, height] = dims[..] else {
            return Err(FedRlError::MazeParse { line: 1, msg: "expected `width height`".into() });
        };
        let mut cells = Vec::with_capacity(width * height);
        let mut rows = 0;
        for (lineno, line) in lines {
            let line = line.trim_end();
            if line.chars().count() != width {
                return Err(FedRlError::MazeParse {
                    line: lineno + 1,
                    msg: format!("expected {width} cells, got {}", line.chars().count()),
                });
            }
            for ch in line.chars() {
                cells.push(CellKind::from_symbol(ch).ok_or_else(|| FedRlError::MazeParse {
                    line: lineno + 1,
                    msg: format!("unknown cell symbol {ch:?}"),
                })?);
            }
            rows += 1;
        }
        if rows != height {
            return Err(FedRlError::MazeParse {
                line: rows + 1,
                msg: format!("expected {height} rows, got {rows}"),
            });
        }
        Maze::from_cells(width, height, cells, 0)
    }
}

/// Upper bound on generation attempts before giving up.
pub const MAX_GENERATION_ATTEMPTS: usize = 100_000;

/// Generates a solvable maze deterministically from `seed`.
///
/// The source is the bottom-left cell and the goal the top-right cell. Hell
/// cells are scattered uniformly over the remaining cells at `hell_density`.
/// A layout is kept only if walking up or right through non-hell cells from
/// the source never gets stuck before the goal, so one reactive policy
/// ("step up or right onto a free cell") solves every generated maze.
pub fn generate_maze(seed: u64, width: usize, height: usize, hell_density: f64) -> Result<Maze> {
    if !(0.0..=0.4).contains(&hell_density) {
        return Err(FedRlError::Config(format!("hell density {hell_density} outside [0, 0.4]")));
    }
    if width < 2 || height < 2 {
        return Err(FedRlError::Config(format!("maze must be at least 2x2, got {width}x{height}")));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let total = width * height;
    let source = (height - 1) * width;
    let goal = width - 1;
    let hell_cells = (hell_density * (total - 2) as f64).round() as usize;
    let mut open: Vec<usize> = (0..total).filter(|&i| i != source && i != goal).collect();
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mut cells = vec![CellKind::Free; total];
        cells[source] = CellKind::Source;
        cells[goal] = CellKind::Goal;
        open.shuffle(&mut rng);
        for &i in &open[..hell_cells] {
            cells[i] = CellKind::Hell;
        }
        if !monotone_walks_reach_goal(&cells, width, source) {
            continue;
        }
        if let Ok(maze) = Maze::from_cells(width, height, cells, 0) {
            return Ok(maze);
        }
    }
    Err(FedRlError::MazeGeneration { seed, density: hell_density, attempts: MAX_GENERATION_ATTEMPTS })
}

/// True if every non-hell cell reachable from `source` by up/right moves has
/// a non-hell up or right neighbour, unless it is a goal.
fn monotone_walks_reach_goal(cells: &[CellKind], width: usize, source: usize) -> bool {
    let mut seen = vec![false; cells.len()];
    let mut stack = vec![source];
    seen[source] = true;
    while let Some(c) = stack.pop() {
        if cells[c] == CellKind::Goal {
            continue;
        }
        let up = (c >= width).then(|| c - width);
        let right = (c % width + 1 < width).then(|| c + 1);
        let mut stuck = true;
        for next in [up, right].into_iter().flatten() {
            if cells[next] != CellKind::Hell {
                stuck = false;
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        if stuck {
            return false;
        }
    }
    true
}

/// Walks one episode through a maze and enforces the step limit.
#[derive(Clone, Debug)]
pub struct EpisodeCursor<'a> {
    maze: &'a Maze,
    pos: Pos,
    steps: usize,
    step_limit: usize,
    done: bool,
}

impl<'a> EpisodeCursor<'a> {
    pub fn new(maze: &'a Maze, step_limit: usize) -> Self {
        Self { maze, pos: maze.source(), steps: 0, step_limit: step_limit.max(1), done: false }
    }

    pub fn position(&self) -> Pos {
        self.pos
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn state(&self) -> SonarState {
        // The cursor only ever rests on traversable cells.
        self.maze.encode_state(self.pos).expect("cursor on a traversable cell")
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(FedRlError::Contract("step on a finished episode".into()));
        }
        let (mut outcome, next) = self.maze.step(self.pos, action)?;
        self.pos = next;
        self.steps += 1;
        if !outcome.terminal && self.steps >= self.step_limit {
            outcome.terminal = true;
            outcome.terminal_kind = TerminalKind::StepLimit;
        }
        self.done = outcome.terminal;
        Ok(outcome)
    }
}
