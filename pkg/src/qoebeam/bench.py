"""Monte-Carlo benchmark: MOS statistics over random drops and antenna sweeps.

A sweep walks the grid {service} x {MBS antennas} x {homogeneous, one point
per SBS antenna count}, solves `drops` independent channel drops at every
point and writes per-user results, per-drop timings, per-point summaries and
one MOS-versus-antennas chart per service.

Drops are seeded from disjoint substreams of a master seed, so any drop can
be recomputed in isolation and the homogeneous arm of a drop shares its
macro-tier fading with the two-tier arm (the small-cell transmitters are
removed, the users stay).  Results are sorted before writing: repeated runs
of the same config produce byte-identical CSV files.
"""

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelSet, Topology, drop_rng, drop_users, generate_channels
from .qoe import QoeRequirement, VideoServiceParams, WebServiceParams, calibrate_web
from .video import spca_solve_video, video_problem
from .web import spca_solve_web, web_problem

KB = 8000.0   # bits per kilobyte


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


# ============================================================
# configuration
# ============================================================

@dataclass
class WebBenchConfig:
    """Web-service settings; pages are assigned to users round-robin."""
    rate_min_bps_hz: float = 2.0
    rate_max_bps_hz: float = 7.0
    calibration_page_kb: float = 320.0
    page_sizes_kb: tuple = (18.0, 30.0, 50.0, 100.0, 200.0, 320.0,
                            400.0, 500.0, 650.0, 1000.0)
    segment_bytes: float = 1460.0
    rtt_ms: float = 30.0
    mos_min: float = 1.0

    def __post_init__(self):
        self.page_sizes_kb = tuple(float(v) for v in self.page_sizes_kb)
        if not self.page_sizes_kb:
            raise ValueError("need at least one page size")


@dataclass
class VideoBenchConfig:
    mos_scale: float = 27.37
    mos_offset: float = -39.43
    psnr_offset: float = 28.046
    psnr_slope: float = 0.038
    rate_scale_bps: float = 5.024
    mos_min: float = 1.0


@dataclass
class SweepAxes:
    mbs_antennas: tuple = (20, 40, 60, 80)
    sbs_antennas: tuple = (1, 2, 3)
    include_homogeneous: bool = True
    drops: int = 20
    master_seed: int = 2024

    def __post_init__(self):
        self.mbs_antennas = tuple(int(m) for m in self.mbs_antennas)
        self.sbs_antennas = tuple(int(n) for n in self.sbs_antennas)


@dataclass
class ExperimentConfig:
    topology: Topology = field(default_factory=Topology)
    mbs_cap_dbm: float = 18.0
    sbs_cap_dbm: float = -10.9
    noise_dbm: float = -127.0
    bandwidth_hz: float = 15000.0
    shadow_sigma_db: float = 7.0
    symbol_power_mw: float = 1.0
    rate_floor_bps_hz: float = 2.0
    services: tuple = ("web", "video")
    web: WebBenchConfig = field(default_factory=WebBenchConfig)
    video: VideoBenchConfig = field(default_factory=VideoBenchConfig)
    sweep: SweepAxes = field(default_factory=SweepAxes)
    eps: float = 1e-3
    max_iter: int = 30

    def __post_init__(self):
        self.services = tuple(self.services)
        for s in self.services:
            if s not in ("web", "video"):
                raise ValueError(f"unknown service {s!r}")
        if self.sweep.drops < 1:
            raise ValueError("need at least one drop")

    @property
    def sinr_min(self) -> float:
        """QoS floor implied by the minimum spectral efficiency."""
        return 2.0 ** self.rate_floor_bps_hz - 1.0

    # ---- JSON round trip ----

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        d = json.loads(text)
        kw = dict(d)
        kw["topology"] = Topology(**d.get("topology", {}))
        kw["web"] = WebBenchConfig(**d.get("web", {}))
        kw["video"] = VideoBenchConfig(**d.get("video", {}))
        kw["sweep"] = SweepAxes(**d.get("sweep", {}))
        return ExperimentConfig(**kw)

    @staticmethod
    def load(path) -> "ExperimentConfig":
        return ExperimentConfig.from_json(Path(path).read_text())


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.load(path)


# ============================================================
# per-drop solve
# ============================================================

@dataclass
class SweepPoint:
    """One cell of the sweep grid; num_small == 0 is the homogeneous arm."""
    service: str
    mbs_antennas: int
    num_small: int
    sbs_antennas: int


@dataclass
class DropResult:
    service: str
    mbs_antennas: int
    num_small: int
    sbs_antennas: int
    drop: int
    num_users: int
    status: str
    feasible: bool
    converged: bool
    iterations: int
    sinr: np.ndarray | None
    rate_bps_hz: np.ndarray | None
    mos_raw: np.ndarray | None
    mos_clipped: np.ndarray | None
    mean_mos: float | None
    wall_s: float
    warnings: list

    def to_jsonable(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("sinr", "rate_bps_hz", "mos_raw", "mos_clipped"):
            if d[key] is not None:
                d[key] = [float(v) for v in d[key]]
        return d


def web_profile(cfg: ExperimentConfig, num_users: int) -> list:
    scale, offset = calibrate_web(cfg.web.rate_min_bps_hz, cfg.web.rate_max_bps_hz,
                                  cfg.web.calibration_page_kb * KB, cfg.bandwidth_hz)
    pages = cfg.web.page_sizes_kb
    return [WebServiceParams(scale=scale, offset=offset,
                             page_size_bits=float(pages[k % len(pages)]) * KB,
                             bandwidth_hz=cfg.bandwidth_hz,
                             segment_size_bits=cfg.web.segment_bytes * 8.0,
                             rtt_s=cfg.web.rtt_ms / 1000.0)
            for k in range(num_users)]


def video_profile(cfg: ExperimentConfig) -> VideoServiceParams:
    v = cfg.video
    return VideoServiceParams(mos_scale=v.mos_scale, mos_offset=v.mos_offset,
                              psnr_offset=v.psnr_offset, psnr_slope=v.psnr_slope,
                              rate_scale_bps=v.rate_scale_bps,
                              bandwidth_hz=cfg.bandwidth_hz)


def drop_channels(cfg: ExperimentConfig, point: SweepPoint,
                  drop_index: int) -> tuple[ChannelSet, np.random.Generator]:
    """Placement + fading for one drop, restricted to the macro tier for the
    homogeneous arm.

    The substream is keyed by the drop index alone and the macro-tier links
    are drawn before any small-cell link, so all arms of a drop (any SBS
    antenna count, and the homogeneous restriction) see the same user
    placement and the same MBS fading: comparisons across arms are paired.
    """
    top = dataclasses.replace(cfg.topology,
                              mbs_antennas=point.mbs_antennas,
                              sbs_antennas=max(point.sbs_antennas, 1))
    rng = drop_rng(cfg.sweep.master_seed, drop_index)
    placement = drop_users(top, rng)
    ch = generate_channels(placement, top, cfg.shadow_sigma_db, rng)
    if point.num_small == 0:
        ch = ch.mbs_only()
    if cfg.symbol_power_mw != 1.0:
        root = math.sqrt(cfg.symbol_power_mw)
        ch = ChannelSet(vectors=[[root * h for h in row] for row in ch.vectors],
                        gains=cfg.symbol_power_mw * ch.gains,
                        num_small=ch.num_small)
    return ch, rng


def build_problem(cfg: ExperimentConfig, point: SweepPoint, ch: ChannelSet):
    k = ch.num_users
    mbs_caps = np.full(point.mbs_antennas, dbm_to_mw(cfg.mbs_cap_dbm))
    if point.num_small:
        sbs_caps = np.full((point.num_small, point.sbs_antennas),
                           dbm_to_mw(cfg.sbs_cap_dbm))
    else:
        sbs_caps = np.zeros((0, 0))
    noise = dbm_to_mw(cfg.noise_dbm)
    if point.service == "web":
        req = QoeRequirement(mos_min=np.full(k, cfg.web.mos_min),
                             sinr_min=np.full(k, cfg.sinr_min))
        return web_problem(ch, mbs_caps, sbs_caps, noise,
                           web_profile(cfg, k), req)
    req = QoeRequirement(mos_min=np.full(k, cfg.video.mos_min),
                         sinr_min=np.full(k, cfg.sinr_min))
    return video_problem(ch, mbs_caps, sbs_caps, noise, video_profile(cfg), req)


def run_drop(cfg: ExperimentConfig, point: SweepPoint, drop_index: int) -> DropResult:
    """Solve one drop at one sweep point.  Never raises on solver trouble;
    failed drops come back with feasible=False and empty metrics."""
    ch, rng = drop_channels(cfg, point, drop_index)
    p = build_problem(cfg, point, ch)
    solve = spca_solve_web if point.service == "web" else spca_solve_video
    t0 = time.perf_counter()
    sol = solve(p, eps=cfg.eps, max_iter=cfg.max_iter, rng=rng)
    wall = time.perf_counter() - t0
    have_metrics = sol.mos_clipped is not None
    return DropResult(
        service=point.service, mbs_antennas=point.mbs_antennas,
        num_small=point.num_small, sbs_antennas=point.sbs_antennas,
        drop=drop_index, num_users=p.num_users, status=sol.status,
        feasible=sol.feasible, converged=sol.converged,
        iterations=sol.iterations,
        sinr=sol.sinr if have_metrics else None,
        rate_bps_hz=sol.rate if have_metrics else None,
        mos_raw=sol.mos_raw if have_metrics else None,
        mos_clipped=sol.mos_clipped if have_metrics else None,
        mean_mos=float(np.mean(sol.mos_clipped)) if have_metrics else None,
        wall_s=wall, warnings=list(sol.warnings))


# ============================================================
# the sweep
# ============================================================

@dataclass
class PointSummary:
    service: str
    mbs_antennas: int
    num_small: int
    sbs_antennas: int
    drops: int
    feasible_drops: int
    mean_mos: float          # mean over feasible drops of per-drop mean MOS
    ci_half_width: float     # 95% normal half-width of that mean
    infeasible_rate: float


@dataclass
class Summary:
    points: list
    results_csv: Path | None = None
    charts: list = field(default_factory=list)

    def point(self, service, mbs_antennas, num_small, sbs_antennas) -> PointSummary:
        for p in self.points:
            if (p.service, p.mbs_antennas, p.num_small, p.sbs_antennas) == \
                    (service, mbs_antennas, num_small, sbs_antennas):
                return p
        raise KeyError((service, mbs_antennas, num_small, sbs_antennas))


def sweep_points(cfg: ExperimentConfig) -> list:
    pts = []
    for svc in cfg.services:
        for m in cfg.sweep.mbs_antennas:
            if cfg.sweep.include_homogeneous:
                pts.append(SweepPoint(svc, m, 0, 0))
            for n in cfg.sweep.sbs_antennas:
                pts.append(SweepPoint(svc, m, cfg.topology.num_small, n))
    return pts


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _sort_key(r: DropResult):
    return (r.service, r.mbs_antennas, r.sbs_antennas, r.num_small, r.drop)


def _write_results(results: list, out: Path) -> Path:
    path = out / "results.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["service", "M", "N", "Ns", "drop", "user", "feasible",
                    "sinr", "rate_bps_hz", "mos_raw", "mos_clipped", "spca_iters"])
        for r in sorted(results, key=_sort_key):
            for k in range(r.num_users):
                row = [r.service, r.mbs_antennas, r.sbs_antennas, r.num_small,
                       r.drop, k, int(r.feasible)]
                if r.sinr is None:
                    row += ["nan", "nan", "nan", "nan"]
                else:
                    row += [_fmt(float(r.sinr[k])), _fmt(float(r.rate_bps_hz[k])),
                            _fmt(float(r.mos_raw[k])), _fmt(float(r.mos_clipped[k]))]
                row.append(r.iterations)
                w.writerow(row)
    return path


def _write_timing(results: list, out: Path) -> Path:
    # wall time is nondeterministic, so it lives in a sidecar and keeps
    # results.csv byte-stable across reruns
    path = out / "timing.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["service", "M", "N", "Ns", "drop", "wall_ms"])
        for r in sorted(results, key=_sort_key):
            w.writerow([r.service, r.mbs_antennas, r.sbs_antennas, r.num_small,
                        r.drop, format(1000.0 * r.wall_s, ".3f")])
    return path


def summarize(results: list) -> Summary:
    groups = {}
    for r in results:
        key = (r.service, r.mbs_antennas, r.num_small, r.sbs_antennas)
        groups.setdefault(key, []).append(r)
    points = []
    for key in sorted(groups):
        rs = groups[key]
        means = np.array([r.mean_mos for r in rs if r.feasible and r.mean_mos is not None])
        n = means.size
        mean = float(np.mean(means)) if n else float("nan")
        half = float(1.96 * np.std(means, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        points.append(PointSummary(service=key[0], mbs_antennas=key[1],
                                   num_small=key[2], sbs_antennas=key[3],
                                   drops=len(rs), feasible_drops=n,
                                   mean_mos=mean, ci_half_width=half,
                                   infeasible_rate=1.0 - n / len(rs)))
    return Summary(points=points)


def _write_summary(summary: Summary, out: Path) -> Path:
    path = out / "summary.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["service", "M", "N", "Ns", "drops", "feasible_drops",
                    "mean_mos", "ci_half_width", "infeasible_rate"])
        for p in sorted(summary.points, key=lambda p: (p.service, p.mbs_antennas,
                                                       p.sbs_antennas, p.num_small)):
            w.writerow([p.service, p.mbs_antennas, p.sbs_antennas, p.num_small,
                        p.drops, p.feasible_drops, _fmt(p.mean_mos),
                        _fmt(p.ci_half_width), _fmt(p.infeasible_rate)])
    return path


# ============================================================
# charts
# ============================================================

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_line_chart(series: list, title: str, xlabel: str, ylabel: str,
                    path: Path):
    """Tiny self-contained SVG writer: axes, ticks, polylines, legend.

    series: list of (label, [(x, y), ...]); points with non-finite y are
    dropped.  Deterministic output for identical input.
    """
    width, height = 640.0, 420.0
    left, right, top_m, bottom = 70.0, 180.0, 40.0, 50.0
    pw, ph = width - left - right, height - top_m - bottom
    xs = sorted({x for _, pts in series for x, y in pts if math.isfinite(y)})
    ys = [y for _, pts in series for _, y in pts if math.isfinite(y)]
    if not xs or not ys:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + pw * (x - x0) / (x1 - x0)

    def py(y):
        return top_m + ph * (1.0 - (y - y0) / (y1 - y0))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
           f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" '
           f'font-family="sans-serif" font-size="15">{title}</text>']
    # axes
    out.append(f'<line x1="{left:.1f}" y1="{top_m + ph:.1f}" x2="{left + pw:.1f}" '
               f'y2="{top_m + ph:.1f}" stroke="black"/>')
    out.append(f'<line x1="{left:.1f}" y1="{top_m:.1f}" x2="{left:.1f}" '
               f'y2="{top_m + ph:.1f}" stroke="black"/>')
    for x in xs:
        out.append(f'<line x1="{px(x):.2f}" y1="{top_m + ph:.1f}" x2="{px(x):.2f}" '
                   f'y2="{top_m + ph + 5:.1f}" stroke="black"/>')
        out.append(f'<text x="{px(x):.2f}" y="{top_m + ph + 20:.1f}" '
                   f'text-anchor="middle" font-family="sans-serif" '
                   f'font-size="12">{x:g}</text>')
    for i in range(6):
        y = y0 + (y1 - y0) * i / 5.0
        out.append(f'<line x1="{left - 5:.1f}" y1="{py(y):.2f}" x2="{left:.1f}" '
                   f'y2="{py(y):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 9:.1f}" y="{py(y) + 4:.2f}" '
                   f'text-anchor="end" font-family="sans-serif" '
                   f'font-size="12">{y:.2f}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10:.1f}" '
               f'text-anchor="middle" font-family="sans-serif" '
               f'font-size="13">{xlabel}</text>')
    out.append(f'<text x="18" y="{top_m + ph / 2:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13" '
               f'transform="rotate(-90 18 {top_m + ph / 2:.1f})">{ylabel}</text>')
    for i, (label, pts) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        good = [(x, y) for x, y in pts if math.isfinite(y)]
        if good:
            coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in good)
            out.append(f'<polyline points="{coords}" fill="none" '
                       f'stroke="{color}" stroke-width="2"/>')
            for x, y in good:
                out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3.5" '
                           f'fill="{color}"/>')
        ly = top_m + 14 + 20 * i
        lx = left + pw + 14
        out.append(f'<line x1="{lx:.1f}" y1="{ly:.1f}" x2="{lx + 24:.1f}" '
                   f'y2="{ly:.1f}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 30:.1f}" y="{ly + 4:.1f}" '
                   f'font-family="sans-serif" font-size="12">{label}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")


def _write_charts(cfg: ExperimentConfig, summary: Summary, out: Path) -> list:
    paths = []
    for svc in cfg.services:
        series = []
        if cfg.sweep.include_homogeneous:
            pts = [(p.mbs_antennas, p.mean_mos) for p in summary.points
                   if p.service == svc and p.num_small == 0]
            series.append(("homogeneous", sorted(pts)))
        for n in cfg.sweep.sbs_antennas:
            pts = [(p.mbs_antennas, p.mean_mos) for p in summary.points
                   if p.service == svc and p.num_small > 0 and p.sbs_antennas == n]
            series.append((f"two-tier, N={n}", sorted(pts)))
        path = out / f"mos_vs_antennas_{svc}.svg"
        _svg_line_chart(series, f"average {svc} MOS over drops",
                        "MBS antennas", "average MOS", path)
        paths.append(path)
    return paths


# ============================================================
# driver
# ============================================================

def _write_outputs(cfg: ExperimentConfig, results: list, out: Path) -> Summary:
    summary = summarize(results)
    summary.results_csv = _write_results(results, out)
    _write_timing(results, out)
    _write_summary(summary, out)
    summary.charts = _write_charts(cfg, summary, out)
    return summary


def run_sweep(cfg: ExperimentConfig, out_dir, progress=None) -> Summary:
    """Run the full grid and write results.csv / timing.csv / summary.csv plus
    one chart per service into `out_dir`.  On interrupt, whatever finished is
    flushed before the exception propagates."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    try:
        for point in sweep_points(cfg):
            for d in range(cfg.sweep.drops):
                results.append(run_drop(cfg, point, d))
                if progress is not None:
                    progress(results[-1])
    except KeyboardInterrupt:
        _write_outputs(cfg, results, out)
        raise
    return _write_outputs(cfg, results, out)
