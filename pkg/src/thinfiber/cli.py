"""Command-line front end: ``thinfiber <subcommand> [options]``.

Each subcommand reads JSON/CSV inputs, runs one computation and writes CSV
tables into ``--out``.  Exit codes: 0 success, 2 invalid input, 3 numerical
failure (JSON error record on stderr), 64 unknown subcommand.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .errors import NumericalError, ThinFiberError, ValidationError
from .io import config_hash, file_digest, write_csv

log = logging.getLogger("thinfiber")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_USAGE = 0, 2, 3, 64


# ------------------------------------------------------------------ parsing


def parse_grid(text: str, *, allow_complex: bool = False) -> np.ndarray:
    """``value``, ``a,b,c`` or ``start:stop:count``."""
    conv = complex if allow_complex else float
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError
            a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
            if n < 1:
                raise ValueError
            return np.linspace(a, b, n)
        vals = [conv(x.strip().replace("i", "j")) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse grid {text!r} (use v, v1,v2 or start:stop:count)") from None
    if not vals:
        raise ValidationError(f"empty grid {text!r}")
    out = np.array(vals)
    if allow_complex and np.all(out.imag == 0):
        out = out.real
    return out


def _existing(path: str | None, flag: str) -> Path:
    if path is None:
        raise ValidationError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{flag}: no such file {path}")
    return p


def _read_json(path: Path) -> dict:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be an object")
    if data.get("thinfiber_schema", 1) != 1:
        raise ValidationError(f"{path}: unsupported thinfiber_schema {data.get('thinfiber_schema')!r}")
    return data


def _load_potential1d(path: Path):
    from .model_1d import Potential1D, tuned_two_step

    data = _read_json(path)
    if "tuned_two_step" in data:
        return tuned_two_step(float(data["tuned_two_step"]))
    return Potential1D.from_spec({k: v for k, v in data.items() if k != "thinfiber_schema"})


class Run:
    """Output bookkeeping for one invocation."""

    def __init__(self, args: argparse.Namespace, inputs: dict[str, Path]):
        self.out = Path(args.out)
        cfg = {k: v for k, v in vars(args).items() if k not in ("func", "out", "plot", "verbose")}
        cfg["inputs"] = {k: file_digest(p) for k, p in sorted(inputs.items())}
        self.sha = config_hash(cfg)
        self.written: list[Path] = []

    def table(self, name: str, header: Sequence[str], rows) -> Path:
        p = write_csv(self.out / name, header, rows, self.sha)
        self.written.append(p)
        return p


def _plot(args, name: str, draw: Callable) -> None:
    """Best-effort SVG; CSV output never depends on it."""
    if not args.plot:
        return
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not available; skipping %s", name)
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    draw(ax)
    fig.tight_layout()
    Path(args.out).mkdir(parents=True, exist_ok=True)
    fig.savefig(Path(args.out) / name, format="svg", metadata={"Date": None})
    plt.close(fig)


# -------------------------------------------------------------- subcommands


def cmd_graph_spectrum(args) -> int:
    from .graph_core import load_graph
    from .graph_solver import SpectralWindow, eigenvalues_in_disk

    gpath = _existing(args.graph, "--graph")
    graph = load_graph(gpath)
    if args.disk is None or not args.disk > 0:
        raise ValidationError("--disk must be a positive radius")
    eps_list = parse_grid(args.eps)
    run = Run(args, {"graph": gpath})
    window = SpectralWindow(radius=float(args.disk))
    rows = []
    ladders = []
    for eps in eps_list:
        eig = eigenvalues_in_disk(graph, window, float(eps), tol=args.tol_eig)
        ladders.append((eps, eig))
        for e in eig:
            rows.append((float(eps), complex(e.mu).real, complex(e.mu).imag, e.multiplicity))
    run.table("spectrum.csv", ["eps", "mu_re", "mu_im", "multiplicity"], rows)

    def draw(ax):
        for eps, eig in ladders:
            ax.plot([eps] * len(eig), [complex(e.mu).real for e in eig], "k_", ms=12)
        ax.set_xlabel("eps")
        ax.set_ylabel("Re mu")

    _plot(args, "spectrum.svg", draw)
    for eps, mu_re, mu_im, m in rows:
        print(f"eps={eps:g} mu={mu_re:.10g}{mu_im:+.3g}i multiplicity={m}")
    return EXIT_OK


def _source(text: str | None) -> tuple[str, float]:
    if not text or ":" not in text:
        raise ValidationError("--source must be EDGE:T0")
    edge, t0 = text.rsplit(":", 1)
    try:
        return edge, float(t0)
    except ValueError:
        raise ValidationError(f"bad source position {t0!r}") from None


def _edge_nodes(edge, n: int, far: float) -> np.ndarray:
    length = edge.length if edge.finite else far
    return np.linspace(0.0, length, n)


def cmd_graph_green(args) -> int:
    from .graph_core import load_graph
    from .graph_solver import green_function

    gpath = _existing(args.graph, "--graph")
    graph = load_graph(gpath)
    mus = parse_grid(args.mu, allow_complex=True)
    if mus.size != 1:
        raise ValidationError("graph-green takes a single --mu value")
    eps = parse_grid(args.eps)
    if eps.size != 1:
        raise ValidationError("graph-green takes a single --eps value")
    src = _source(args.source)
    run = Run(args, {"graph": gpath})
    G = green_function(graph, complex(mus[0]), float(eps[0]), src)
    rows = []
    for e in graph.edges:
        t = _edge_nodes(e, args.points, args.far)
        vals = G(e.id, t)
        rows.extend((e.id, float(tt), complex(v).real, complex(v).imag) for tt, v in zip(t, vals))
    run.table("green.csv", ["edge", "t", "re", "im"], rows)
    return EXIT_OK


def cmd_graph_scatter(args) -> int:
    from .graph_core import load_graph
    from .graph_solver import graph_scattering_matrix
    from .vertex_conditions import check_unitary_symmetric

    gpath = _existing(args.graph, "--graph")
    graph = load_graph(gpath)
    mus = parse_grid(args.mu)
    eps_list = parse_grid(args.eps)
    run = Run(args, {"graph": gpath})
    ids = [e.id for e in graph.infinite_edges]
    rows, diag = [], []
    for eps in eps_list:
        for mu in mus:
            S = graph_scattering_matrix(graph, float(mu), float(eps))
            rep = check_unitary_symmetric(S, args.tol_unitary)
            diag.append((float(eps), float(mu), rep.unitarity_defect, rep.symmetry_defect, rep.passed))
            for p, ip in enumerate(ids):
                for j, jd in enumerate(ids):
                    rows.append((float(eps), float(mu), ip, jd, S[p, j].real, S[p, j].imag))
    run.table("scatter.csv", ["eps", "mu", "out_edge", "in_edge", "re", "im"], rows)
    run.table("scatter_defects.csv", ["eps", "mu", "unitarity_defect", "symmetry_defect", "passed"], diag)
    return EXIT_OK


def cmd_heat(args) -> int:
    from .graph_core import load_graph
    from .heat_graph import decay_rate, heat_solve, weighted_mass

    gpath = _existing(args.graph, "--graph")
    graph = load_graph(gpath)
    if not graph.edges:
        raise ValidationError("graph has no edges")
    start = args.initial or graph.edges[0].id
    graph.edge(start)  # validates the id
    run = Run(args, {"graph": gpath})
    times = np.linspace(0.0, args.tau_end, args.samples)
    h = args.grid_h if args.grid_h is not None else 1e-2

    def w0(eid, t):
        if eid != start:
            return np.zeros_like(t)
        length = graph.edge(eid).length
        return np.sin(np.pi * t / length) ** 2  # vanishes at both ends

    traj = heat_solve(graph, w0, args.tau_end, args.dtau, h, sample_times=times)
    run.table("heat.csv", ["tau", "edge", "t", "w"], list(traj.rows()))
    mass = [(s.tau, weighted_mass(s, traj.weights), float(s_vals @ traj.lumped_mass))
            for s, s_vals in zip(traj.states, traj.node_values)]
    run.table("heat_mass.csv", ["tau", "weighted_mass", "lumped_mass"], mass)
    fit = decay_rate(traj)
    run.table("heat_decay.csv", ["rate", "residual", "low_signal"], [(fit.rate, fit.residual, fit.low_signal)])
    print(f"decay rate {fit.rate:.8g} (fit residual {fit.residual:.1e})")

    def draw(ax):
        for s in traj.states[:: max(1, len(traj.states) // 6)]:
            ax.plot(s.grids[start], s.values[start], label=f"tau={s.tau:.3g}")
        ax.set_xlabel(f"t on {start}")
        ax.legend()

    _plot(args, "heat.svg", draw)
    return EXIT_OK


def cmd_model1d_classify(args) -> int:
    from .model_1d import classify_gc

    ppath = _existing(args.potential, "--potential")
    v = _load_potential1d(ppath)
    run = Run(args, {"potential": ppath})
    cls = classify_gc(v)
    rm = float("nan") if cls.rho_minus is None else cls.rho_minus
    rp = float("nan") if cls.rho_plus is None else cls.rho_plus
    run.table("classification.csv", ["tag", "rho_minus", "rho_plus"], [(cls.tag, rm, rp)])
    if cls.tag == "GeneralizedKirchhoff":
        print(f"GeneralizedKirchhoff({rm:.8g},{rp:.8g})")
    else:
        print(cls.tag)
    return EXIT_OK


def cmd_model1d_tr_converge(args) -> int:
    from .model_1d import tr_convergence

    ppath = _existing(args.potential, "--potential")
    v = _load_potential1d(ppath)
    lam = parse_grid(args.lam, allow_complex=True)
    if lam.size != 1:
        raise ValidationError("model1d-tr-converge takes a single --lambda value")
    eps_list = parse_grid(args.eps)
    if np.any(eps_list <= 0):
        raise ValidationError("--eps values must be positive")
    a, b = args.support
    if not a < b:
        raise ValidationError("--support needs a < b")

    def f(t):
        t = np.asarray(t, dtype=float)
        inside = (t > a) & (t < b)
        x = np.where(inside, (t - a) / (b - a), 0.5)
        return np.where(inside, np.sin(np.pi * x) ** 2, 0.0)

    run = Run(args, {"potential": ppath})
    res = tr_convergence(v, eps_list, complex(lam[0]), f, (a, b))
    rows = [(float(e), float(err)) for e, err in zip(res["eps"], res["errors"])]
    run.table("tr_convergence.csv", ["eps", "relative_error"], rows)
    run.table("tr_slope.csv", ["classification", "slope"], [(res["classification"].tag, res["slope"])])
    print(f"{res['classification'].tag}: slope {res['slope']:.4f}")
    return EXIT_OK


def cmd_waveguide_modes(args) -> int:
    from .waveguide2d import cylinder_spectrum_fd

    eps_list = parse_grid(args.eps)
    h = args.grid_h if args.grid_h is not None else 1 / 64
    run = Run(args, {})
    rows = []
    for eps in eps_list:
        if not eps > 0:
            raise ValidationError("--eps values must be positive")
        vals = cylinder_spectrum_fd(args.length, float(eps), args.walls, args.ends, h, args.count, args.alpha)
        rows.extend((float(eps), i, float(v)) for i, v in enumerate(vals))
    run.table("cylinder_modes.csv", ["eps", "index", "lambda"], rows)
    return EXIT_OK


def _load_domain(args):
    from .waveguide2d import load_domain

    dpath = _existing(args.domain, "--domain")
    return dpath, load_domain(dpath)


def cmd_waveguide_scatter(args) -> int:
    from .waveguide2d import scattering_sweep

    dpath, dom = _load_domain(args)
    lams = parse_grid(args.lam)
    h = args.grid_h if args.grid_h is not None else 1 / 64
    run = Run(args, {"domain": dpath})
    results = scattering_sweep(dom, lams, h, args.n_evanescent, dtn=args.dtn)
    rows, diag = [], []
    for r in results:
        d = r.T.shape[0]
        diag.append((r.lam, r.unitarity_defect, r.symmetry_defect, r.residual, r.rejected, r.lambda0, r.lambda1))
        for p in range(d):
            for j in range(d):
                rows.append((r.lam, p, j, r.T[p, j].real, r.T[p, j].imag))
    run.table("junction_T.csv", ["lambda", "p", "j", "re", "im"], rows)
    run.table(
        "junction_defects.csv",
        ["lambda", "unitarity_defect", "symmetry_defect", "residual", "rejected", "lambda0", "lambda1"],
        diag,
    )
    for r in results:
        flag = " (rejected)" if r.rejected else ""
        print(f"lambda={r.lam:g} unitarity={r.unitarity_defect:.2e} symmetry={r.symmetry_defect:.2e}{flag}")

    def draw(ax):
        Ts = np.array([r.T for r in results])
        for j in range(1, Ts.shape[1]):
            ax.plot([r.lam for r in results], np.abs(Ts[:, 0, j]), label=f"|t_0{j}|")
        ax.set_xlabel("lambda")
        ax.legend()

    _plot(args, "junction_T.svg", draw)
    return EXIT_OK


def cmd_waveguide_threshold(args) -> int:
    from .waveguide2d import threshold_limit_T

    dpath, dom = _load_domain(args)
    h = args.grid_h if args.grid_h is not None else 1 / 64
    run = Run(args, {"domain": dpath})
    res = threshold_limit_T(dom, h, args.order, dtn=args.dtn, snap_tol=args.tol_snap, max_residual=args.tol_extrap)
    d = res.T0.shape[0]
    rows = [(p, j, res.T0[p, j].real, res.T0[p, j].imag) for p in range(d) for j in range(d)]
    run.table("threshold_T0.csv", ["p", "j", "re", "im"], rows)
    if res.pair is None:
        run.table("threshold_projection.csv", ["status", "detail"], [("snap_failed", res.snap_error)])
        raise NumericalError(f"threshold matrix did not snap: {res.snap_error}")
    P = res.pair.P
    run.table("threshold_projection.csv", ["p", "j", "P"], [(p, j, float(P[p, j])) for p in range(d) for j in range(d)])
    run.table("threshold_summary.csv", ["rank", "residual", "snap_residual"],
              [(res.pair.rank, res.residual, res.pair.snap_residual)])
    print(f"projection rank {res.pair.rank} of {d}; extrapolation residual {res.residual:.1e}")
    return EXIT_OK


def _target_matrices(spec, d: int, lams: np.ndarray) -> list[np.ndarray]:
    kind = spec if isinstance(spec, str) else None
    if kind == "dirichlet":
        return [-np.eye(d, dtype=complex)] * lams.size
    if kind == "kirchhoff":
        return [(2.0 / d) * np.ones((d, d), dtype=complex) - np.eye(d)] * lams.size
    if kind == "neumann":
        return [np.eye(d, dtype=complex)] * lams.size
    from .vertex_conditions import _parse_complex_matrix

    if isinstance(spec, dict) and "T" in spec:
        T = _parse_complex_matrix(spec["T"], "target T")
        return [T] * lams.size
    if isinstance(spec, dict) and "table" in spec:
        Ts = [_parse_complex_matrix(T, "target T") for T in spec["table"]]
        if len(Ts) != lams.size:
            raise ValidationError("target table needs one matrix per --lambda point")
        return Ts
    raise ValidationError("target 'S' must be dirichlet, kirchhoff, neumann, {'T': ...} or {'table': [...]}")


def cmd_effpot_verify(args) -> int:
    from .effective_potential import MatrixPotential, compare_to_target

    ppath = _existing(args.potential, "--potential")
    V = MatrixPotential.load(ppath, tail_tol=args.tol_tail)
    lams = parse_grid(args.lam)
    if np.any(lams <= args.lambda0):
        raise ValidationError("--lambda points must lie above --lambda0")
    inputs = {"potential": ppath}
    target_S, target_E = "dirichlet", []
    if args.target:
        tpath = _existing(args.target, "--target")
        inputs["target"] = tpath
        tdata = _read_json(tpath)
        target_S = tdata.get("S", "dirichlet")
        target_E = [float(x) for x in tdata.get("eigenvalues", [])]
    run = Run(args, inputs)
    Ts = _target_matrices(target_S, V.dimension, lams)
    rep = compare_to_target(V, args.lambda0, lams, Ts, target_E, s_tol=args.tol_s, e_tol=args.tol_e)
    run.table("effpot_defects.csv", ["lambda", "defect"], [(float(l), float(d)) for l, d in zip(lams, rep.defects)])
    run.table("effpot_bound_states.csv", ["index", "energy"], [(i, float(e)) for i, e in enumerate(rep.energies)])
    run.table("effpot_summary.csv", ["max_defect", "count_mismatch", "max_eigen_mismatch", "passed"],
              [(rep.max_defect, rep.count_mismatch, float(np.max(rep.eigen_mismatch, initial=0.0)), rep.passed)])
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------- parser

COMMANDS: dict[str, tuple[Callable, str]] = {
    "graph-spectrum": (cmd_graph_spectrum, "eigenvalues of a metric graph in a disk"),
    "graph-green": (cmd_graph_green, "Green function with a point source"),
    "graph-scatter": (cmd_graph_scatter, "scattering matrix over the infinite edges"),
    "heat": (cmd_heat, "weighted heat flow on a compact graph"),
    "model1d-classify": (cmd_model1d_classify, "limiting gluing condition of a 1-D potential"),
    "model1d-tr-converge": (cmd_model1d_tr_converge, "resolvent convergence of the 1-D model"),
    "waveguide-modes": (cmd_waveguide_modes, "finite-difference cylinder spectrum"),
    "waveguide-scatter": (cmd_waveguide_scatter, "finite-difference junction scattering matrix"),
    "waveguide-threshold": (cmd_waveguide_threshold, "threshold limit of the junction scattering matrix"),
    "effpot-verify": (cmd_effpot_verify, "check a half-line matrix potential against a target"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thinfiber", description="Thin-domain graph limits: batch experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name):
        fn, help_ = COMMANDS[name]
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--plot", action="store_true", help="also write SVG plots (needs matplotlib)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = add("graph-spectrum")
    p.add_argument("--graph", required=True)
    p.add_argument("--disk", type=float, required=True, help="radius of the mu-disk")
    p.add_argument("--eps", default="0")
    p.add_argument("--tol-eig", type=float, default=1e-10)

    p = add("graph-green")
    p.add_argument("--graph", required=True)
    p.add_argument("--mu", required=True)
    p.add_argument("--eps", default="0")
    p.add_argument("--source", required=True, help="EDGE:T0")
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--far", type=float, default=5.0, help="sampled length of infinite edges")

    p = add("graph-scatter")
    p.add_argument("--graph", required=True)
    p.add_argument("--mu", required=True)
    p.add_argument("--eps", default="0")
    p.add_argument("--tol-unitary", type=float, default=1e-10)

    p = add("heat")
    p.add_argument("--graph", required=True)
    p.add_argument("--tau-end", type=float, default=1.0)
    p.add_argument("--dtau", type=float, default=1e-3)
    p.add_argument("--grid-h", type=float, default=None)
    p.add_argument("--samples", type=int, default=11)
    p.add_argument("--initial", default=None, help="edge carrying the initial bump")

    p = add("model1d-classify")
    p.add_argument("--potential", required=True)

    p = add("model1d-tr-converge")
    p.add_argument("--potential", required=True)
    p.add_argument("--eps", default="0.1,0.05,0.025,0.0125")
    p.add_argument("--lambda", dest="lam", default="1+0.5j")
    p.add_argument("--support", type=float, nargs=2, default=(1.0, 2.0))

    p = add("waveguide-modes")
    p.add_argument("--length", type=float, default=1.0)
    p.add_argument("--eps", default="0.1")
    p.add_argument("--grid-h", type=float, default=None)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--walls", default="dirichlet", choices=["dirichlet", "neumann", "robin"])
    p.add_argument("--ends", default="dirichlet", choices=["dirichlet", "neumann", "robin"])
    p.add_argument("--alpha", type=float, default=0.0)

    for name in ("waveguide-scatter", "waveguide-threshold"):
        p = add(name)
        p.add_argument("--domain", required=True)
        p.add_argument("--grid-h", type=float, default=None)
        p.add_argument("--dtn", default="continuum", choices=["continuum", "discrete"])
        p.add_argument("--n-evanescent", type=int, default=8)
        if name == "waveguide-scatter":
            p.add_argument("--lambda", dest="lam", required=True)
        else:
            p.add_argument("--order", type=int, default=3)
            p.add_argument("--tol-snap", type=float, default=5e-2)
            p.add_argument("--tol-extrap", type=float, default=1e-2)

    p = add("effpot-verify")
    p.add_argument("--potential", required=True)
    p.add_argument("--lambda0", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", default="0.5:5:10")
    p.add_argument("--target", default=None, help="JSON with 'S' and 'eigenvalues'")
    p.add_argument("--tol-s", type=float, default=1e-6)
    p.add_argument("--tol-e", type=float, default=1e-8)
    p.add_argument("--tol-tail", type=float, default=1e-8)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    first = next((a for a in argv if not a.startswith("-")), None)
    if first is not None and first not in COMMANDS:
        print(f"thinfiber: unknown subcommand {first!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_USAGE
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for bad flags
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, KeyError, TypeError) as exc:
        err = exc.to_dict() if isinstance(exc, ThinFiberError) else {"error": "ValidationError", "message": str(exc)}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError, ArithmeticError) as exc:
        err = exc.to_dict() if isinstance(exc, ThinFiberError) else {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
