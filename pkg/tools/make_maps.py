"""Regenerate the Traffic Junction route tables under src/cgibnet/data/maps.

Routes are walks across the grid: start at an entrance on the border, travel in
one direction, optionally turn once, and continue until the next cell would be
off-grid. Run from the repository root::

    python tools/make_maps.py
"""

from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "cgibnet" / "data" / "maps"

STEP = {"E": (0, 1), "W": (0, -1), "S": (1, 0), "N": (-1, 0)}


def walk(start, heading, size, turn_at=None, new_heading=None):
    rows, cols = size
    r, c = start
    cells = [(r, c)]
    while True:
        if turn_at is not None and (r, c) == turn_at:
            heading = new_heading
        dr, dc = STEP[heading]
        r, c = r + dr, c + dc
        if not (0 <= r < rows and 0 <= c < cols):
            return cells
        cells.append((r, c))


def write_map(name, size, agents, max_steps, spawn_depth, routes, note):
    lines = [
        f"# Traffic Junction map '{name}'. {note}",
        "# route <name> <entrance> <r,c> ...  (cells in travel order; the car exits",
        "# after the last cell)",
        "version 1",
        f"name {name}",
        f"grid {size[0]} {size[1]}",
        f"agents {agents}",
        f"max_steps {max_steps}",
        f"spawn_depth {spawn_depth}",
    ]
    for rname, entrance, cells in routes:
        lines.append(f"route {rname} {entrance} " + " ".join(f"{r},{c}" for r, c in cells))
    (OUT / f"{name}.txt").write_text("\n".join(lines) + "\n")


def easy():
    size = (7, 7)
    routes = [
        ("W_straight", "W", walk((3, 0), "E", size)),
        ("W_turn", "W", walk((3, 0), "E", size, (3, 3), "S")),
        ("N_straight", "N", walk((0, 3), "S", size)),
        ("N_turn", "N", walk((0, 3), "S", size, (3, 3), "E")),
    ]
    write_map("easy", size, 4, 20, 3, routes,
              "Two one-way single-lane roads crossing at (3,3).")


def medium():
    size = (14, 14)
    routes = [
        ("E_straight", "W", walk((7, 0), "E", size)),
        ("E_right", "W", walk((7, 0), "E", size, (7, 6), "S")),
        ("W_straight", "E", walk((6, 13), "W", size)),
        ("W_right", "E", walk((6, 13), "W", size, (6, 7), "N")),
        ("S_straight", "N", walk((0, 6), "S", size)),
        ("S_right", "N", walk((0, 6), "S", size, (6, 6), "W")),
        ("N_straight", "S", walk((13, 7), "N", size)),
        ("N_right", "S", walk((13, 7), "N", size, (7, 7), "E")),
    ]
    write_map("medium", size, 8, 40, 3, routes,
              "One two-way road in each direction; lanes keep to the right.")


def hard():
    size = (18, 18)
    routes = []
    for row in (6, 12):  # eastbound lanes, first right turn onto southbound col 5
        routes.append((f"E{row}_straight", f"W{row}", walk((row, 0), "E", size)))
        routes.append((f"E{row}_right", f"W{row}", walk((row, 0), "E", size, (row, 5), "S")))
    for row in (5, 11):  # westbound lanes, first right turn onto northbound col 12
        routes.append((f"W{row}_straight", f"E{row}", walk((row, 17), "W", size)))
        routes.append((f"W{row}_right", f"E{row}", walk((row, 17), "W", size, (row, 12), "N")))
    for col in (5, 11):  # southbound lanes, first right turn onto westbound row 5
        routes.append((f"S{col}_straight", f"N{col}", walk((0, col), "S", size)))
        routes.append((f"S{col}_right", f"N{col}", walk((0, col), "S", size, (5, col), "W")))
    for col in (6, 12):  # northbound lanes, first right turn onto eastbound row 12
        routes.append((f"N{col}_straight", f"S{col}", walk((17, col), "N", size)))
        routes.append((f"N{col}_right", f"S{col}", walk((17, col), "N", size, (12, col), "E")))
    write_map("hard", size, 16, 60, 3, routes,
              "Two two-way roads in each direction (four junctions).")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    easy()
    medium()
    hard()
