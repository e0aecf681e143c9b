"""Figure-data export: one CSV per preset, plus an optional PNG rendering.

The CSV files carry exactly the logged floats (``repr`` formatting is
locale independent and round-trips), so a parsed file reproduces the series
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .sim import RunLog


@dataclass(frozen=True)
class PlotPreset:
    columns: tuple[str, ...]
    labels: tuple[str, ...]
    title: str


PRESETS: dict[str, PlotPreset] = {
    "gyro": PlotPreset(("t", "gyro_x", "dem_roll"),
                       ("time [s]", "roll rate [rad/s]", "roll correction [-]"),
                       "Roll gyro and course correction"),
    "height": PlotPreset(("t", "us_down"), ("time [s]", "ultrasonic height [m]"),
                         "Downward ultrasonic trace"),
    "wall": PlotPreset(("t", "us_side", "wall_corr"),
                       ("time [s]", "side distance [m]", "roll steering [rad]"),
                       "Wall distance and steering"),
    "start_landing": PlotPreset(("t", "us_down", "throttle"),
                                ("time [s]", "ultrasonic height [m]", "throttle [-]"),
                                "Start and landing"),
}


class UnknownSeriesError(KeyError):
    def __init__(self, missing: Sequence[str], available: Sequence[str]):
        self.missing = list(missing)
        self.available = list(available)
        what = ", ".join(self.missing) if self.missing else "(empty selection)"
        super().__init__(f"unknown series: {what}; available: {', '.join(self.available)}")

    def __str__(self) -> str:
        return self.args[0]


def select(log: RunLog, selection: Sequence[str] | str) -> dict[str, np.ndarray]:
    """Pick series by preset name or explicit column list."""
    if isinstance(selection, str):
        if selection not in PRESETS:
            raise UnknownSeriesError([selection], list(PRESETS) + log.names)
        selection = PRESETS[selection].columns
    missing = [s for s in selection if s not in log.columns]
    if not selection or missing:
        raise UnknownSeriesError(missing, log.names)
    return {s: log[s] for s in selection}


def format_columns(series: dict[str, np.ndarray]) -> str:
    names = list(series)
    lines = [",".join(names)]
    cols = [series[n].tolist() for n in names]
    for row in zip(*cols):
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_columns(text: str) -> dict[str, np.ndarray]:
    rows = text.strip().splitlines()
    names = rows[0].split(",")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]], dtype=float)
    data = data.reshape(len(rows) - 1, len(names))
    return {n: data[:, i].copy() for i, n in enumerate(names)}


def render_png(series: dict[str, np.ndarray], path: Path, preset: PlotPreset | None = None):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(series)
    t = series[names[0]]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    labels = preset.labels if preset else tuple(names)
    ax.plot(t, series[names[1]], lw=0.8, color="tab:red", label=labels[1])
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    if len(names) > 2:
        ax2 = ax.twinx()
        for name, label in zip(names[2:], labels[2:]):
            ax2.plot(t, series[name], lw=0.8, color="tab:blue", label=label)
        ax2.set_ylabel(labels[2])
    if preset:
        ax.set_title(preset.title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_plot_data(log: RunLog, selection: Sequence[str] | str, out_dir: str | Path,
                   name: str | None = None, png: bool = True) -> list[Path]:
    """Write ``<name>.csv`` (and ``<name>.png``) into ``out_dir``."""
    series = select(log, selection)
    preset = PRESETS.get(selection) if isinstance(selection, str) else None
    name = name or (selection if isinstance(selection, str) else "selection")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    csv_path.write_text(format_columns(series))
    paths = [csv_path]
    if png:
        png_path = out / f"{name}.png"
        render_png(series, png_path, preset)
        paths.append(png_path)
    return paths
