use serde::{Deserialize, Serialize};

/// Cell coordinate: `x` is the column, `y` the row, origin at the top-left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub const fn new(x: usize, y: usize) -> Self {
        Pos { x, y }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn is_adjacent(self, other: Pos) -> bool {
        self.manhattan(other) == 1
    }

    /// Target cell of `action`; moves off the grid leave the position unchanged.
    pub fn moved(self, action: GridAction, n: usize) -> Pos {
        match action {
            GridAction::Up if self.y > 0 => Pos::new(self.x, self.y - 1),
            GridAction::Down if self.y + 1 < n => Pos::new(self.x, self.y + 1),
            GridAction::Left if self.x > 0 => Pos::new(self.x - 1, self.y),
            GridAction::Right if self.x + 1 < n => Pos::new(self.x + 1, self.y),
            _ => self,
        }
    }

    pub fn neighbors(self, n: usize) -> impl Iterator<Item = Pos> {
        GridAction::MOVES
            .into_iter()
            .map(move |a| self.moved(a, n))
            .filter(move |p| *p != self)
    }

    pub(crate) fn encode(self, n: usize) -> [f64; 2] {
        let d = (n - 1) as f64;
        [self.x as f64 / d, self.y as f64 / d]
    }

    pub(crate) fn decode(x: f64, y: f64, n: usize) -> Pos {
        let d = (n - 1) as f64;
        Pos::new((x * d).round() as usize, (y * d).round() as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GridAction {
    Noop = 0,
    Up = 1,
    Down = 2,
    Left = 3,
    Right = 4,
    Collect = 5,
}

impl GridAction {
    pub const MOVES: [GridAction; 4] =
        [GridAction::Up, GridAction::Down, GridAction::Left, GridAction::Right];

    pub fn from_index(i: usize) -> Option<GridAction> {
        Some(match i {
            0 => GridAction::Noop,
            1 => GridAction::Up,
            2 => GridAction::Down,
            3 => GridAction::Left,
            4 => GridAction::Right,
            5 => GridAction::Collect,
            _ => return None,
        })
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Corner cells, labelled clockwise from the top-left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Corner {
    A = 0,
    B = 1,
    C = 2,
    D = 3,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::A, Corner::B, Corner::C, Corner::D];

    pub fn pos(self, n: usize) -> Pos {
        let m = n - 1;
        match self {
            Corner::A => Pos::new(0, 0),
            Corner::B => Pos::new(m, 0),
            Corner::C => Pos::new(m, m),
            Corner::D => Pos::new(0, m),
        }
    }

    pub fn at(p: Pos, n: usize) -> Option<Corner> {
        Corner::ALL.into_iter().find(|c| c.pos(n) == p)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> char {
        (b'A' + self as u8) as char
    }
}

/// One greedy step from `from` toward `to` that strictly reduces Manhattan
/// distance. Horizontal moves are tried before vertical ones; a candidate is
/// skipped when `avoid` rejects its target and another reducing move exists.
pub(crate) fn greedy_step(from: Pos, to: Pos, n: usize, avoid: impl Fn(Pos) -> bool) -> GridAction {
    let mut candidates = Vec::with_capacity(2);
    if to.x < from.x {
        candidates.push(GridAction::Left);
    } else if to.x > from.x {
        candidates.push(GridAction::Right);
    }
    if to.y < from.y {
        candidates.push(GridAction::Up);
    } else if to.y > from.y {
        candidates.push(GridAction::Down);
    }
    candidates
        .iter()
        .copied()
        .find(|a| {
            let p = from.moved(*a, n);
            p == to || !avoid(p)
        })
        .or_else(|| candidates.first().copied())
        .unwrap_or(GridAction::Noop)
}

/// Breadth-first distance from every cell to the nearest cell in `goals`,
/// treating `blocked` cells as walls. Unreachable cells hold `usize::MAX`.
pub(crate) fn distance_field(n: usize, goals: &[Pos], blocked: impl Fn(Pos) -> bool) -> Vec<usize> {
    let mut dist = vec![usize::MAX; n * n];
    let mut queue = std::collections::VecDeque::new();
    for g in goals {
        if !blocked(*g) && dist[g.y * n + g.x] == usize::MAX {
            dist[g.y * n + g.x] = 0;
            queue.push_back(*g);
        }
    }
    while let Some(p) = queue.pop_front() {
        let d = dist[p.y * n + p.x];
        for q in p.neighbors(n) {
            if !blocked(q) && dist[q.y * n + q.x] == usize::MAX {
                dist[q.y * n + q.x] = d + 1;
                queue.push_back(q);
            }
        }
    }
    dist
}

/// Move that descends `dist`, horizontal moves first (Left, Right, Up, Down).
pub(crate) fn descend(from: Pos, dist: &[usize], n: usize) -> GridAction {
    let here = dist[from.y * n + from.x];
    for a in [GridAction::Left, GridAction::Right, GridAction::Up, GridAction::Down] {
        let p = from.moved(a, n);
        if p != from && dist[p.y * n + p.x] < here {
            return a;
        }
    }
    GridAction::Noop
}
