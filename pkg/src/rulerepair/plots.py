"""Static plot data: CSV tables and small hand-written SVG figures."""
from __future__ import annotations

import csv
import io
from xml.sax.saxutils import escape

from .world_model import Trajectory

_W, _H, _PAD = 640, 360, 48
_COLORS = ("#555555", "#1f77b4", "#d62728")


def profile_csv(dt: float, **trajectories: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trajectory", "k", "t", "s", "s_dot", "s_ddot", "d"])
    for name, traj in trajectories.items():
        for x in traj.states:
            w.writerow([name, x.t_index, f"{x.t_index * dt:.6g}", f"{x.s:.6g}", f"{x.s_dot:.6g}",
                        f"{x.s_ddot:.6g}", f"{x.d:.6g}"])
    return buf.getvalue()


class _Axes:
    def __init__(self, x_rng, y_rng):
        self.x0, self.x1 = x_rng
        self.y0, self.y1 = y_rng
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1

    def px(self, x):
        return _PAD + (x - self.x0) / (self.x1 - self.x0) * (_W - 2 * _PAD)

    def py(self, y):
        return _H - _PAD - (y - self.y0) / (self.y1 - self.y0) * (_H - 2 * _PAD)

    def frame(self, xlabel, ylabel, title):
        out = [f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" height="{_H - 2 * _PAD}" '
               'fill="none" stroke="#000"/>']
        for frac in (0.0, 0.5, 1.0):
            xv = self.x0 + frac * (self.x1 - self.x0)
            yv = self.y0 + frac * (self.y1 - self.y0)
            out.append(f'<text x="{self.px(xv):.1f}" y="{_H - _PAD + 16}" font-size="11" '
                       f'text-anchor="middle">{xv:.3g}</text>')
            out.append(f'<text x="{_PAD - 6}" y="{self.py(yv) + 4:.1f}" font-size="11" '
                       f'text-anchor="end">{yv:.3g}</text>')
        out.append(f'<text x="{_W / 2}" y="{_H - 8}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
        out.append(f'<text x="14" y="{_H / 2}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 14 {_H / 2})">{escape(ylabel)}</text>')
        out.append(f'<text x="{_W / 2}" y="20" font-size="13" text-anchor="middle">{escape(title)}</text>')
        return out


def _doc(body) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">\n' + "\n".join(body) + "\n</svg>\n")


def velocity_svg(dt: float, title: str = "velocity profile", **trajectories: Trajectory) -> str:
    ts = [x.t_index * dt for tr in trajectories.values() for x in tr.states]
    vs = [x.s_dot for tr in trajectories.values() for x in tr.states]
    ax = _Axes((min(ts), max(ts)), (min(0.0, min(vs)), max(vs) * 1.05 + 1e-9))
    body = ax.frame("t [s]", "velocity [m/s]", title)
    for i, (name, tr) in enumerate(trajectories.items()):
        c = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{ax.px(x.t_index * dt):.1f},{ax.py(x.s_dot):.1f}" for x in tr.states)
        body.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="2"/>')
        body.append(f'<text x="{_W - _PAD - 4}" y="{_PAD + 16 + 14 * i}" font-size="11" fill="{c}" '
                    f'text-anchor="end">{escape(name)}</text>')
    return _doc(body)


def reach_svg(rs, dt: float, title: str = "reachable positions", **trajectories: Trajectory) -> str:
    """Position-domain projection: one bar per cell and step, trajectories on top."""
    rows = [(tau, c) for tau in range(rs.k_cut, rs.horizon + 1) for c in rs.cells(tau)]
    s_vals = [c.s_lo for _, c in rows] + [c.s_hi for _, c in rows]
    s_vals += [x.s for tr in trajectories.values() for x in tr.states]
    ax = _Axes((0.0, (rs.horizon + 0.5) * dt), (min(s_vals), max(s_vals)))
    body = ax.frame("t [s]", "s [m]", title)
    half = 0.3 * dt
    for tau, c in rows:
        x0, x1 = ax.px(tau * dt - half), ax.px(tau * dt + half)
        y0, y1 = ax.py(c.s_hi), ax.py(c.s_lo)
        body.append(f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{x1 - x0:.1f}" height="{max(y1 - y0, 0.5):.1f}" '
                    'fill="#2ca02c" fill-opacity="0.15" stroke="#2ca02c" stroke-width="0.5"/>')
    for i, (name, tr) in enumerate(trajectories.items()):
        c = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{ax.px(x.t_index * dt):.1f},{ax.py(x.s):.1f}" for x in tr.states)
        body.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        body.append(f'<text x="{_PAD + 6}" y="{_PAD + 16 + 14 * i}" font-size="11" fill="{c}">{escape(name)}</text>')
    return _doc(body)
