"""Command-line front end: ``anderson-lab <subcommand> [flags]``.

Values are resolved as flags > ``--config`` JSON file > built-in defaults.
Each run writes ``<out>/<subcommand>.json`` (summary) and, where there is a
series, ``<out>/<subcommand>.csv``.  Both embed the tool version, the resolved
configuration and the master seed; the CSV carries them on a leading ``#`` line.
Without ``--out`` the JSON summary goes to stdout.

Exit status: 0 on success, 2 for invalid configuration, 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import __version__

log = logging.getLogger("anderson_lab")

ORDER_NAMES = {"none": "none", "second": "second_order", "fourth": "plus_fourth_order"}

COMMON_DEFAULTS = {"dim": 1, "L": [16.0], "ppu": 8, "beta": 1.0, "seed": 0, "replicas": 20,
                   "threads": None, "out": None}

DEFAULTS = {
    "gn": {"r_max": 30.0, "grid_n": 6000},
    "rate": {"L": [20.0], "ppu": 64, "x": -1.0, "starts": 3, "constraint_tol": 1e-9},
    "renorm": {"a": [2.0**-k for k in range(4, 10)], "m": 1.0, "order": None},
    "spectrum": {"k": 3, "tol": 1e-10, "order": None, "eps": None},
    "subbox-check": {"L": [32.0], "r": 4.0, "tol": 1e-10, "order": None},
    "asymptotics": {"L": [2.0**m for m in range(6, 14)], "n": 1, "tol": 1e-10, "order": None},
    "tail": {"L": [64.0], "replicas": 200, "x_grid": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0], "eta": 0.0,
             "gamma1": 1.0, "gamma2": 1.0, "tol": 1e-10, "order": None},
    "scaling": {"beta": 0.5, "replicas": 500, "n": 1, "ppu": 16, "tol": 1e-10, "order": None},
    "fluct": {"L": [1024.0], "replicas": 200, "n_max": 1, "tol": 1e-10, "order": None},
    "shape": {"L": [512.0], "replicas": 100, "n": 1, "window": 4.0, "tol": 1e-10, "order": None},
}


class ConfigError(ValueError):
    pass


# --- parsing -------------------------------------------------------------------


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p):
    p.add_argument("--dim", type=int, choices=(1, 2, 3))
    p.add_argument("--L", type=float, nargs="+", help="box size (several values for a ladder)")
    p.add_argument("--ppu", type=int, help="lattice points per unit length")
    p.add_argument("--beta", type=float, help="noise strength (dilation factor for `scaling`)")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--threads", type=int, help="worker processes (default $ANDERSON_THREADS or all cores)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="JSON file with default values for this run")
    p.add_argument("-v", "--verbose", action="store_true")


def _order(p):
    p.add_argument("--order", choices=sorted(ORDER_NAMES), help="renormalisation order (d >= 2)")


def build_parser():
    parser = argparse.ArgumentParser(prog="anderson-lab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gn", help="ground state Q, Gagliardo-Nirenberg constant and limit profiles")
    _common(p)
    p.add_argument("--r-max", dest="r_max", type=float)
    p.add_argument("--grid-n", dest="grid_n", type=int)

    p = sub.add_parser("rate", help="rate function I_L(x) by constrained minimisation")
    _common(p)
    p.add_argument("--x", type=float, help="target principal eigenvalue")
    p.add_argument("--grid", dest="ppu", type=int, help="alias of --ppu")
    p.add_argument("--starts", type=int)
    p.add_argument("--constraint-tol", dest="constraint_tol", type=float)

    p = sub.add_parser("renorm", help="lattice renormalisation constants over a list of spacings")
    _common(p)
    _order(p)
    p.add_argument("--a", type=_float_list, help="comma-separated spacings")
    p.add_argument("--m", type=float, help="mass in the Green's function")

    p = sub.add_parser("spectrum", help="smallest eigenpairs on one noise sample")
    _common(p)
    _order(p)
    p.add_argument("--k", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--eps", type=float, help="mollify the noise at this scale (d=1)")

    p = sub.add_parser("subbox-check", help="two-sided sub-box eigenvalue bounds on coupled samples")
    _common(p)
    _order(p)
    p.add_argument("--r", type=float, help="sub-box scale")
    p.add_argument("--tol", type=float)

    p = sub.add_parser("asymptotics", help="mean lambda_{n,L} along a dyadic ladder of nested boxes")
    _common(p)
    _order(p)
    p.add_argument("--n", type=int)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("tail", help="empirical P(lambda_1 >= -x) and the analytic envelope")
    _common(p)
    _order(p)
    p.add_argument("--x-grid", dest="x_grid", type=_float_list)
    p.add_argument("--eta", type=float)
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("scaling", help="two-sample test of the scaling law in law")
    _common(p)
    _order(p)
    p.add_argument("--n", type=int)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("fluct", help="normalised eigenvalue fluctuations vs the Gumbel law")
    _common(p)
    _order(p)
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("shape", help="replica-averaged local eigenfunction and noise profiles")
    _common(p)
    _order(p)
    p.add_argument("--n", type=int)
    p.add_argument("--window", type=float)
    p.add_argument("--tol", type=float)
    return parser


def resolve_config(args):
    """Merge defaults, the optional config file and explicit flags (in that order)."""
    from .parallel import resolve_threads

    cmd = args.command
    cfg = dict(COMMON_DEFAULTS)
    cfg.update(DEFAULTS[cmd])
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        file_cfg = file_cfg.get("config", file_cfg)
        unknown = set(file_cfg) - set(cfg) - {"command", "version"}
        if unknown:
            raise ConfigError(f"unknown keys in config file: {sorted(unknown)}")
        cfg.update({k: v for k, v in file_cfg.items() if k in cfg})
    for key, value in vars(args).items():
        if key in cfg and value is not None:
            cfg[key] = value
    if not isinstance(cfg["L"], list):
        cfg["L"] = [cfg["L"]]
    cfg["L"] = [float(v) for v in cfg["L"]]
    try:
        cfg["threads"] = resolve_threads(cfg["threads"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg["command"] = cmd
    return cfg


def validate(cfg):
    """Subcommand preconditions, checked before any computation."""
    from .lattice import build_grid
    from .renorm import renorm_constant

    cmd, d = cfg["command"], cfg["dim"]
    if d not in (1, 2, 3):
        raise ConfigError("--dim must be 1, 2 or 3")
    if cfg["replicas"] < 1:
        raise ConfigError("--replicas must be positive")
    if cfg["ppu"] < 2:
        raise ConfigError("--ppu must be at least 2")
    if any(L <= 0 for L in cfg["L"]):
        raise ConfigError("--L must be positive")
    order = cfg.get("order")
    if order is not None:
        cfg["order"] = order = ORDER_NAMES.get(order, order)
    single = cmd in ("rate", "spectrum", "subbox-check", "scaling", "fluct", "shape")
    if single and len(cfg["L"]) != 1:
        raise ConfigError(f"`{cmd}` takes a single --L")
    try:
        if cmd not in ("gn", "renorm"):
            for L in cfg["L"]:
                build_grid(d, L, cfg["ppu"])
        if cmd != "gn":
            if d >= 2 or (order is not None and order != "none"):
                renorm_constant(d, 0.1, order=order)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cmd == "gn" and (cfg["r_max"] < 20 or cfg["grid_n"] < 2000):
        raise ConfigError("gn needs --r-max >= 20 and --grid-n >= 2000")
    if cmd == "rate" and d != 1 and cfg["ppu"] > 32:
        log.warning("rate in d=%d at ppu=%d is expensive", d, cfg["ppu"])
    if cmd == "spectrum":
        if cfg["k"] < 1:
            raise ConfigError("--k must be positive")
        if cfg["eps"] is not None:
            if d != 1:
                raise ConfigError("--eps is only supported in d=1 (no lattice counterterm for it)")
            if cfg["eps"] < 2.0 / cfg["ppu"]:
                raise ConfigError("--eps must be at least two lattice spacings")
    if cmd == "subbox-check":
        L, r, a = cfg["L"][0], cfg["r"], 1.0 / cfg["ppu"]
        if not 1.0 <= r < L:
            raise ConfigError("need 1 <= --r < --L")
        for length in (r / 2.0, 0.75 * r, L / 2.0):
            if abs(length / a - round(length / a)) > 1e-9:
                raise ConfigError(f"sub-box edges are not lattice aligned (r={r}, L={L}, ppu={cfg['ppu']})")
    if cmd in ("asymptotics", "tail"):
        for L in cfg["L"]:
            if abs(np.log2(L) - round(np.log2(L))) > 1e-12:
                raise ConfigError(f"--L values must be powers of two, got {L}")
            if abs(L * cfg["ppu"] / 2.0 - round(L * cfg["ppu"] / 2.0)) > 1e-9:
                raise ConfigError("nested boxes must be lattice aligned: L*ppu must be even")
    if cmd == "scaling":
        beta, L = cfg["beta"], cfg["L"][0]
        if not beta > 0:
            raise ConfigError("--beta must be positive")
        try:
            same = build_grid(d, L / beta, cfg["ppu"] * beta).n == build_grid(d, L, cfg["ppu"]).n
        except ValueError:
            same = False
        if not same:
            raise ConfigError("L/beta is not representable with the same number of sites (need ppu*beta >= 2)")
    if cmd == "tail" and cfg["replicas"] < 100:
        log.warning("tail with fewer than 100 replicas: intervals are not meaningful")
    return cfg


# --- output --------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header(cfg):
    # the output location is not part of what is computed, so it is left out
    shown = {k: v for k, v in cfg.items() if k != "out"}
    return {"version": __version__, "config": shown, "seed": cfg["seed"]}


def render_json(cfg, results):
    payload = dict(_header(cfg))
    payload["results"] = results
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


def render_csv(cfg, rows):
    buf = io.StringIO()
    buf.write("# " + json.dumps(_jsonable(_header(cfg)), sort_keys=True) + "\n")
    if rows:
        fields = list(rows[0].keys())
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for k, v in row.items()})
    return buf.getvalue()


# --- subcommands ---------------------------------------------------------------


def cmd_gn(cfg):
    from .groundstate import compute_constants, limit_profiles, solve_ground_state

    prof = solve_ground_state(cfg["dim"], r_max=cfg["r_max"], grid_n=cfg["grid_n"])
    consts = compute_constants(prof)
    lp = limit_profiles(prof, consts)
    summary = {"d": prof.d, "kappa": consts.kappa, "C_d": consts.C_d, "rho": consts.rho,
               "sup_J": consts.sup_J, "lambda_scale": consts.lambda_scale, "Q0": prof.Q0,
               "norms": prof.norms, "ode_residual": prof.ode_residual,
               "residual_psi": lp.residual_psi, "residual_w": lp.residual_w,
               "eigenvalue_w": lp.eigenvalue_w, "w_star_coefficients": lp.w_star_coefficients}
    rows = [{"r": r, "Q": q, "psi_star": p, "w_star": w, "V_star": v}
            for r, q, p, w, v in zip(prof.r_grid, prof.Q_values, lp.psi_star, lp.w_star, lp.V_star)]
    return summary, rows


def cmd_rate(cfg):
    from .lattice import build_grid
    from .ratefn import RateOptions, estimate_rate

    grid = build_grid(cfg["dim"], cfg["L"][0], cfg["ppu"])
    opts = RateOptions(constraint_tol=cfg["constraint_tol"], starts=cfg["starts"], seed=cfg["seed"])
    est = estimate_rate(grid, cfg["x"], opts)
    summary = est.to_dict()
    summary["grid"] = grid.to_dict()
    coords = grid.coordinates()
    rows = [dict({f"x{j}": c[j] for j in range(grid.d)}, V=v) for c, v in zip(coords, est.V_opt.flat)]
    return summary, rows


def cmd_renorm(cfg):
    from .renorm import lattice_green_diagonal, renorm_constant

    d, order = cfg["dim"], cfg["order"]
    rows = []
    for a in cfg["a"]:
        G = lattice_green_diagonal(d, a, cfg["m"])
        C = renorm_constant(d, a, cfg["m"], cfg["beta"], order if d > 1 else None)
        rows.append({"a": a, "G": G, "C": C.value, "order": C.order})
    summary = {"d": d, "m": cfg["m"], "beta": cfg["beta"], "values": rows}
    if d == 2 and len(rows) > 1:
        x = np.log(1.0 / np.array(cfg["a"]))
        summary["log_slope"] = float(np.polyfit(x, [r["G"] for r in rows], 1)[0])
    return summary, rows


def _noise_and_renorm(cfg, grid, seed):
    from .lattice import sample_white_noise
    from .renorm import renorm_constant

    noise = sample_white_noise(grid, cfg["beta"], seed)
    d = grid.d
    R = renorm_constant(d, grid.a, beta=cfg["beta"], order=cfg.get("order")) if d > 1 else None
    return noise, R


def cmd_spectrum(cfg):
    from .eigensolver import smallest_eigenpairs
    from .hamiltonian import assemble
    from .lattice import MollifierSpec, build_grid, mollify_noise

    grid = build_grid(cfg["dim"], cfg["L"][0], cfg["ppu"])
    noise, R = _noise_and_renorm(cfg, grid, cfg["seed"])
    if cfg["eps"] is not None:
        noise = mollify_noise(noise, MollifierSpec(cfg["eps"], grid.d))
    res = smallest_eigenpairs(assemble(grid, noise, R), cfg["k"], tol=cfg["tol"])
    summary = {"grid": grid.to_dict(), "renorm": R.to_dict() if R else None,
               "eigenvalues": res.eigenvalues, "residuals": res.residuals,
               "centers": res.center_coordinates,
               "solver": {k: v for k, v in res.solver_stats.items() if k != "time"}}
    rows = [dict({"n": i + 1, "lambda": lam, "residual": rr},
                 **{f"center{j}": c for j, c in enumerate(cc)})
            for i, (lam, rr, cc) in enumerate(zip(res.eigenvalues, res.residuals, res.center_coordinates))]
    return summary, rows


def _subbox_replica(i, cfg):
    from .experiments import replica_stream
    from .lattice import build_grid
    from .subbox import check_box_bounds

    grid = build_grid(cfg["dim"], cfg["L"][0], cfg["ppu"])
    noise, R = _noise_and_renorm(cfg, grid, replica_stream(cfg["seed"], i))
    return check_box_bounds(grid, noise, cfg["r"], renorm=R, tol=cfg["tol"]).to_dict()


def cmd_subbox(cfg):
    from functools import partial

    from .parallel import ordered_map

    reports = ordered_map(partial(_subbox_replica, cfg=cfg), range(cfg["replicas"]), cfg["threads"])
    rows = [dict({"replica": i}, **{k: v for k, v in rep.items() if k not in ("holds", "convention_check")},
                 lower_holds=rep["holds"][0], upper_holds=rep["holds"][1])
            for i, rep in enumerate(reports)]
    summary = {"replicas": len(reports),
               "lower_holds": sum(r["holds"][0] for r in reports),
               "upper_holds": sum(r["holds"][1] for r in reports),
               "K_measured": reports[0]["K_measured"],
               "convention_changed_min": sum(r["convention_check"]["min_changed"] for r in reports),
               "first": reports[0]}
    return summary, rows


def cmd_asymptotics(cfg):
    from .experiments import run_asymptotics

    res = run_asymptotics(cfg["dim"], cfg["L"], n=cfg["n"], replicas=cfg["replicas"], seed=cfg["seed"],
                          ppu=cfg["ppu"], beta=cfg["beta"], order=cfg["order"], tol=cfg["tol"],
                          threads=cfg["threads"])
    out = res.to_dict()
    out.pop("config")
    return out, res.rows


def cmd_tail(cfg):
    from .experiments import run_tail

    res = run_tail(cfg["dim"], cfg["L"], cfg["x_grid"], replicas=cfg["replicas"], seed=cfg["seed"],
                   ppu=cfg["ppu"], beta=cfg["beta"], eta=cfg["eta"], gamma1=cfg["gamma1"],
                   gamma2=cfg["gamma2"], order=cfg["order"], tol=cfg["tol"], threads=cfg["threads"])
    out = res.to_dict()
    out.pop("config")
    return out, res.rows


def cmd_scaling(cfg):
    from .experiments import run_scaling_law

    rep = run_scaling_law(cfg["dim"], cfg["L"][0], cfg["beta"], n=cfg["n"], replicas=cfg["replicas"],
                          seed=cfg["seed"], ppu=cfg["ppu"], order=cfg["order"], tol=cfg["tol"],
                          threads=cfg["threads"])
    rows = [{"replica": i, "A": a, "B": b} for i, (a, b) in enumerate(zip(rep.A, rep.B))]
    return rep.to_dict(), rows


def cmd_fluct(cfg):
    from .experiments import run_fluctuations

    res = run_fluctuations(cfg["dim"], cfg["L"][0], n_max=cfg["n_max"], replicas=cfg["replicas"],
                           seed=cfg["seed"], ppu=cfg["ppu"], beta=cfg["beta"], order=cfg["order"],
                           tol=cfg["tol"], threads=cfg["threads"])
    out = res.to_dict()
    out.pop("config")
    return out, res.rows


def cmd_shape(cfg):
    from .experiments import run_shape

    rep = run_shape(cfg["dim"], cfg["L"][0], n=cfg["n"], replicas=cfg["replicas"], seed=cfg["seed"],
                    window=cfg["window"], ppu=cfg["ppu"], beta=cfg["beta"], order=cfg["order"],
                    tol=cfg["tol"], threads=cfg["threads"])
    return rep.to_dict(), rep.rows()


COMMANDS = {"gn": cmd_gn, "rate": cmd_rate, "renorm": cmd_renorm, "spectrum": cmd_spectrum,
            "subbox-check": cmd_subbox, "asymptotics": cmd_asymptotics, "tail": cmd_tail,
            "scaling": cmd_scaling, "fluct": cmd_fluct, "shape": cmd_shape}


def parse_and_dispatch(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = validate(resolve_config(args))
    except ConfigError as exc:
        print(f"anderson-lab {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        summary, rows = COMMANDS[cfg["command"]](cfg)
        text = render_json(cfg, summary)
        if cfg["out"]:
            stem = os.path.join(cfg["out"], cfg["command"])
            atomic_write(stem + ".json", text)
            if rows:
                atomic_write(stem + ".csv", render_csv(cfg, rows))
        else:
            sys.stdout.write(text)
    except Exception as exc:  # runtime failures map to exit status 1
        log.debug("failure", exc_info=True)
        print(f"anderson-lab {cfg['command']}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    sys.exit(parse_and_dispatch(argv))


if __name__ == "__main__":
    main()
