"""Command-line front end: ``ifs-ergodic <command> [options]``.

Every run writes its artifacts into ``--out`` together with ``manifest.json``
(config hash, seed, versions, file checksums) and ``runtime.json`` (timestamp
and thread count, the only run-dependent content). Exit codes: 0 success,
1 validation error, 2 budget exceeded, 3 internal invariant breach.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import chain, clt, ergodicity, measures, reports
from .core import DEFAULT_BUDGET, alpha_sweep, calibrate, check_admissible, IfsSystem
from .errors import IfsError, ValidationError
from .systemfile import load_system

DEFAULTS = {
    "system": "am2",
    "seed": 0,
    "threads": 1,
    "mode": "auto",
    "budget": DEFAULT_BUDGET,
    "out": "out",
}

# run settings that may change without changing any data file
EXECUTION_KEYS = ("threads", "out", "config")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _common(p):
    g = p.add_argument_group("run options")
    g.add_argument("--config", help="JSON config file; flags override its values")
    g.add_argument("--system", help="system file or builtin name (am2)")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("--mode", choices=("exact", "mc", "auto"))
    g.add_argument("--budget", type=int, help="max words for exact enumeration")
    g.add_argument("--out", help="output directory")


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


PARAMS = {
    "n": dict(type=int),
    "n_list": dict(type=_ints, help="comma-separated horizons"),
    "R": dict(type=int, help="replicas"),
    "x": dict(type=float),
    "y": dict(type=float),
    "xi": dict(type=float),
    "k": dict(type=int),
    "a": dict(type=float),
    "alpha": dict(type=float),
    "alphas": dict(type=_floats),
    "side": dict(choices=("lower", "upper")),
    "n_max": dict(type=int),
    "fit_window": dict(type=_ints, help="k_lo,k_hi"),
    "grid": dict(type=_floats),
    "t_grid": dict(type=_floats),
    "phi": dict(choices=("id", "id-half", "x1mx", "x1mx-tent", "one", "zero")),
    "start": dict(help="a point in [0,1] or 'stationary'"),
    "center": dict(type=float),
    "n_burn": dict(type=int),
    "inner_R": dict(type=int),
    "y_samples": dict(type=int, help="number of burn-in points for the L2 norm"),
    "streams": dict(type=int),
}

COMMANDS = {
    "admissible": (),
    "calibrate": ("alpha", "alphas"),
    "simulate": ("n", "R", "start", "n_burn"),
    "stability": ("x", "y", "n", "n_list", "R"),
    "sync": ("x", "y", "n_max", "R", "fit_window"),
    "bounds escape": ("alpha", "n", "n_list", "side", "R"),
    "bounds boundary": ("alpha", "n", "k", "x", "side", "R"),
    "bounds return": ("alpha", "a", "n", "n_list", "R"),
    "ergodic birkhoff": ("phi", "x", "n", "R"),
    "ergodic cesaro": ("phi", "n", "n_list", "grid", "R", "n_burn"),
    "ergodic dual": ("phi", "n", "n_list", "grid", "R", "n_burn"),
    "ergodic occupation": ("x", "y", "xi", "n", "streams"),
    "ergodic atoms": ("n_burn", "R"),
    "clt sums": ("phi", "start", "n", "R", "center", "n_burn"),
    "clt ks": ("phi", "start", "y", "n", "R", "center", "n_burn"),
    "clt mw": ("phi", "n_list", "y_samples", "inner_R", "center", "n_burn"),
    "clt charfn": ("phi", "start", "y", "n", "t_grid", "R", "center", "n_burn"),
}

PARAM_DEFAULTS = {
    "n": 100,
    "R": 10_000,
    "x": 0.3,
    "y": 0.7,
    "xi": 0.5,
    "a": 1e-9,
    "alpha": 0.5,
    "side": "lower",
    "n_max": 20,
    "grid": [round(0.1 * i, 10) for i in range(1, 10)],
    "t_grid": [0.5 * i for i in range(11)],
    "start": "0.5",
    "n_burn": chain.DEFAULT_N_BURN,
    "inner_R": 1_000,
    "y_samples": 200,
    "streams": 1_000,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ifs-ergodic", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    groups = {}
    for name, params in COMMANDS.items():
        head, _, tail = name.partition(" ")
        if tail:
            if head not in groups:
                groups[head] = sub.add_parser(head).add_subparsers(dest="sub", required=True, parser_class=_Parser)
            p = groups[head].add_parser(tail)
        else:
            p = sub.add_parser(head)
        _common(p)
        for key in params:
            p.add_argument("--" + key.replace("_", "-"), dest=key, **PARAMS[key])
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then flags."""
    command = args.command + (" " + args.sub if getattr(args, "sub", None) else "")
    cfg = dict(DEFAULTS)
    for key in COMMANDS[command]:
        if key in PARAM_DEFAULTS:
            cfg[key] = PARAM_DEFAULTS[key]
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as e:
            raise ValidationError(f"cannot read config {args.config}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ValidationError(f"{args.config}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from None
        if not isinstance(loaded, dict):
            raise ValidationError(f"{args.config}: config must be a JSON object")
        params = loaded.pop("params", {})
        loaded.pop("command", None)
        allowed = set(DEFAULTS) | set(COMMANDS[command])
        for key, val in {**loaded, **params}.items():
            if key not in allowed:
                raise ValidationError(f"{args.config}: unknown key {key!r} for '{command}'")
            cfg[key] = val
    for key, val in vars(args).items():
        if key in ("command", "sub", "config") or val is None:
            continue
        cfg[key] = val
    cfg["command"] = command
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg["threads"] < 1:
        raise ValidationError("threads must be >= 1")
    if cfg["budget"] < 1:
        raise ValidationError("budget must be >= 1")
    if not 0 <= cfg["seed"] < 1 << 64:
        raise ValidationError("seed must be an unsigned 64-bit integer")
    for key in ("n", "R", "n_max", "streams", "inner_R", "y_samples"):
        if key in cfg and cfg[key] is not None and cfg[key] < 1:
            raise ValidationError(f"{key} must be >= 1")


def _start(cfg):
    s = str(cfg["start"])
    if s == "stationary":
        return s
    try:
        return float(s)
    except ValueError:
        raise ValidationError(f"start must be a number or 'stationary', not {s!r}") from None


def reflection_symmetric(system: IfsSystem, tol: float = 1e-12) -> bool:
    """True when x -> 1 - x maps the system onto itself (with matching probabilities)."""

    def close(f, g):
        return f.xs.size == g.xs.size and np.allclose(f.xs, g.xs, rtol=0, atol=tol) and np.allclose(f.ys, g.ys, rtol=0, atol=tol)

    unused = list(range(system.n_maps))
    for m, p in zip(system.maps, system.probs):
        r = m.reflected()
        hit = next((j for j in unused if close(r, system.maps[j]) and abs(system.probs[j] - p) <= tol), None)
        if hit is None:
            return False
        unused.remove(hit)
    return True


class Run:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.system = load_system(cfg["system"])
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.kw = dict(seed=cfg["seed"], threads=cfg["threads"])

    def json(self, name, record):
        self.files.append(reports.write_json(self.out / name, record))

    def csv(self, name, rows):
        self.files.append(reports.write_csv(self.out / name, rows))

    def consts(self):
        return calibrate(self.system, self.cfg["alpha"])

    def horizons(self):
        return self.cfg.get("n_list") or [self.cfg["n"]]

    def sample(self):
        return ergodicity.reference_sample(
            self.system, self.cfg["seed"], self.cfg.get("n_burn", chain.DEFAULT_N_BURN), threads=self.cfg["threads"]
        )

    def phi(self, name, sample=None):
        if name == "x1mx-tent":
            sample = self.sample() if sample is None else sample
            return ergodicity.center_with_tent(lambda x: x * (1.0 - x), sample)
        return {
            "id": lambda x: np.asarray(x, dtype=float),
            "id-half": lambda x: np.asarray(x, dtype=float) - 0.5,
            "x1mx": lambda x: x * (1.0 - x),
            "one": lambda x: np.ones_like(np.asarray(x, dtype=float)),
            "zero": lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        }[name]

    def center(self, phi):
        cfg = self.cfg
        if cfg.get("center") is not None:
            return clt.Center(float(cfg["center"]), 0.0, "given")
        name = cfg.get("phi") or "id-half"
        if name == "zero" or (name == "id-half" and reflection_symmetric(self.system)):
            return clt.Center(0.0, 0.0, "symmetry")
        return clt.estimate_center(self.system, phi, cfg["seed"], cfg["n_burn"], threads=cfg["threads"])

    # commands ------------------------------------------------------------

    def admissible(self):
        self.json("admissible.json", check_admissible(self.system).to_record())

    def calibrate(self):
        rec = self.consts().to_record()
        if self.cfg.get("alphas"):
            rows = [("alpha", "delta", "feasible")]
            rows += [(repr(a), "" if d is None else repr(d), d is not None) for a, d in alpha_sweep(self.system, self.cfg["alphas"])]
            self.csv("alpha_sweep.csv", rows)
        self.json("calibration.json", rec)

    def simulate(self):
        cfg = self.cfg
        start = _start(cfg)
        trajs = chain.run_ensemble(self.system, start, cfg["n"], cfg["R"], cfg["seed"], threads=cfg["threads"], n_burn=cfg["n_burn"])

        def rows():
            yield ("replica", "step", "symbol", "state")
            for r, tr in enumerate(trajs):
                it = tr.rows()
                next(it)
                for row in it:
                    yield (r, *row)

        self.csv("trajectories.csv", rows())
        self.json("simulate.json", {"n": cfg["n"], "R": cfg["R"], "start": str(start), "mode": "mc", "file": "trajectories.csv"})

    def stability(self):
        cfg = self.cfg
        rows = [("n_or_k", "value", "stderr", "mode")]
        recs = []
        for n in self.horizons():
            est = ergodicity.stability_gap(self.system, cfg["x"], cfg["y"], n, cfg["mode"], R=cfg["R"], budget=cfg["budget"], **self.kw)
            rows.append((n, repr(est.value), repr(est.stderr), est.mode))
            recs.append({"n": n, "value": est.value, "stderr": est.stderr, "mode": est.mode})
        self.csv("stability.csv", rows)
        self.json("stability.json", {"x": cfg["x"], "y": cfg["y"], "results": recs})

    def sync(self):
        cfg = self.cfg
        win = tuple(cfg["fit_window"]) if cfg.get("fit_window") else None
        if win is not None and len(win) != 2:
            raise ValidationError("fit window needs two values k_lo,k_hi")
        prof = ergodicity.sync_gap_profile(
            self.system, cfg["x"], cfg["y"], cfg["n_max"], cfg["mode"], R=cfg["R"], budget=cfg["budget"], window=win, **self.kw
        )
        self.csv("sync.csv", prof.rows())
        self.json("sync.json", {"x": cfg["x"], "y": cfg["y"], "n_max": cfg["n_max"], "q_hat": prof.q_hat, "degenerate": prof.degenerate, "fit_window": win, "modes": sorted(set(prof.modes))})

    def _bound_kw(self):
        return dict(R=self.cfg["R"], seed=self.cfg["seed"], budget=self.cfg["budget"])

    def bounds_escape(self):
        c = self.consts()
        checks = [b for n in self.horizons() for b in measures.verify_escape_bound(self.system, c, n, self.cfg["side"], self.cfg["mode"], **self._bound_kw())]
        self.json("bounds.json", {"constants": c.to_record(), "checks": [b.to_record() for b in checks]})

    def bounds_boundary(self):
        cfg = self.cfg
        c = self.consts()
        k = cfg.get("k") or measures.quartic_floor(cfg["n"])
        x = 0.5 if cfg.get("x") is None else cfg["x"]
        b = measures.verify_boundary_mass(self.system, c, cfg["n"], k, x, cfg["mode"], side=cfg["side"], **self._bound_kw())
        self.json("bounds.json", {"constants": c.to_record(), "checks": [b.to_record()]})

    def bounds_return(self):
        c = self.consts()
        checks = [measures.verify_return_probability(self.system, c, self.cfg["a"], n, self.cfg["mode"], **self._bound_kw()) for n in self.horizons()]
        self.json("bounds.json", {"constants": c.to_record(), "checks": [b.to_record() for b in checks]})

    def ergodic_birkhoff(self):
        cfg = self.cfg
        phi = self.phi(cfg.get("phi") or "id")
        v = ergodicity.birkhoff_averages(self.system, phi, cfg["x"], cfg["n"], cfg["R"], **self.kw)
        mean = math.fsum(v) / v.size
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        self.csv("birkhoff.csv", [("replica", "value")] + [(r, repr(float(a))) for r, a in enumerate(v)])
        self.json("birkhoff.json", {"x": cfg["x"], "n": cfg["n"], "R": cfg["R"], "phi": cfg.get("phi") or "id", "mean": mean, "stderr": se, "mode": "mc"})

    def ergodic_cesaro(self):
        cfg = self.cfg
        sample = self.sample()
        phi = self.phi(cfg.get("phi") or "x1mx-tent", sample)
        rows = [("n_or_k", "value", "stderr", "mode")]
        recs = []
        for n in self.horizons():
            r = ergodicity.cesaro_norm(self.system, phi, n, cfg["grid"], cfg["mode"], R=cfg["R"], budget=cfg["budget"], **self.kw)
            j = int(np.argmax(np.abs(r.values)))
            rows.append((n, repr(r.sup), repr(float(r.stderr[j])), r.mode))
            recs.append({"n": n, "sup": r.sup, "argmax": r.argmax, "stderr": float(r.stderr[j]), "mode": r.mode})
        self.csv("cesaro.csv", rows)
        self.json("cesaro.json", {"phi": cfg.get("phi") or "x1mx-tent", "grid": cfg["grid"], "results": recs})

    def ergodic_dual(self):
        cfg = self.cfg
        sample = self.sample()
        name = cfg.get("phi") or "id"
        f = self.phi(name, sample)
        ref = 0.5 if name == "id" and reflection_symmetric(self.system) else None
        rows = [("n_or_k", "value", "stderr", "mode")]
        recs = []
        for n in self.horizons():
            r = ergodicity.dual_convergence_check(
                self.system, f, cfg["grid"], n, cfg["mode"], sample=sample, reference=ref, R=cfg["R"], budget=cfg["budget"], **self.kw
            )
            rows.append((n, repr(r.max_discrepancy), repr(r.reference_stderr), r.mode))
            recs.append({"n": n, "max_discrepancy": r.max_discrepancy, "argmax": r.argmax, "l2_discrepancy": r.l2_discrepancy, "reference": r.reference, "reference_stderr": r.reference_stderr, "mode": r.mode})
        self.csv("dual.csv", rows)
        self.json("dual.json", {"phi": name, "grid": cfg["grid"], "results": recs})

    def ergodic_occupation(self):
        cfg = self.cfg
        r = ergodicity.monotone_occupation_check(self.system, cfg["x"], cfg["y"], cfg["xi"], cfg["n"], cfg["streams"], **self.kw)
        self.json("occupation.json", {"x": cfg["x"], "y": cfg["y"], "xi": cfg["xi"], "n": cfg["n"], "streams": r.streams, "violations": r.violations, "mode": "mc"})

    def ergodic_atoms(self):
        cfg = self.cfg
        pts = ergodicity.reference_sample(self.system, cfg["seed"], cfg["n_burn"], cfg["R"], threads=cfg["threads"])
        d = ergodicity.atom_diagnostic(pts)
        self.json("atoms.json", {"largest_mass": d.largest_mass, "location": d.location, "width": d.width, "atomless": d.atomless, "R": cfg["R"], "n_burn": cfg["n_burn"], "mode": "mc"})

    def _sums(self, phi, c, start, seed_offset=0):
        cfg = self.cfg
        return clt.normalized_sums(self.system, phi, start, cfg["n"], cfg["R"], cfg["seed"] + seed_offset, center=c, n_burn=cfg["n_burn"], threads=cfg["threads"])

    def clt_sums(self):
        phi = self.phi(self.cfg.get("phi") or "id-half")
        sums = self._sums(phi, self.center(phi), _start(self.cfg))
        self.csv("samples.csv", sums.rows())
        rep = clt.clt_report(sums, samples_file="samples.csv")
        self.json("clt_report.json", {**rep.to_record(), "phi": self.cfg.get("phi") or "id-half", "center_source": sums.center.source, "mode": "mc"})

    def clt_ks(self):
        cfg = self.cfg
        phi = self.phi(cfg.get("phi") or "id-half")
        c = self.center(phi)
        a = self._sums(phi, c, _start(cfg))
        rep = clt.clt_report(a)
        rec = {**rep.to_record(), "phi": cfg.get("phi") or "id-half", "center_source": c.source, "mode": "mc"}
        if cfg.get("y") is not None:
            b = self._sums(phi, c, cfg["y"], seed_offset=1)
            D, p = clt.ks_two_sample(a.samples, b.samples)
            rec["two_sample"] = {"start_b": cfg["y"], "seed_b": cfg["seed"] + 1, "ks_statistic": D, "ks_pvalue": p}
        self.json("ks.json", rec)

    def clt_mw(self):
        cfg = self.cfg
        phi = self.phi(cfg.get("phi") or "id-half")
        c = self.center(phi)
        n_list = cfg.get("n_list") or [64, 128, 256, 512]
        ys = chain.stationary_starts(self.system, cfg["y_samples"], cfg["seed"], cfg["n_burn"], threads=cfg["threads"])
        m = clt.mw_growth(self.system, phi, n_list, ys, cfg["inner_R"], cfg["seed"], mode=cfg["mode"], center=c.value, budget=cfg["budget"], threads=cfg["threads"])
        self.csv("mw.csv", m.rows())
        self.json("mw.json", {"n_list": list(m.n_list), "norms": m.norms, "stderr": m.stderr, "exponent": m.exponent, "exponent_stderr": m.exponent_stderr, "center": c.value, "center_stderr": c.stderr, "mode": m.mode})

    def clt_charfn(self):
        cfg = self.cfg
        phi = self.phi(cfg.get("phi") or "id-half")
        c = self.center(phi)
        start = _start(cfg)
        kw = dict(mode=cfg["mode"], center=c, budget=cfg["budget"], n_burn=cfg["n_burn"], threads=cfg["threads"])
        a = clt.char_fn(self.system, phi, start, cfg["n"], cfg["t_grid"], cfg["R"], cfg["seed"], **kw)
        self.csv("charfn.csv", a.rows())
        rec = {"n": cfg["n"], "start": a.start, "mode": a.mode, "center": c.value, "center_stderr": c.stderr, "table": "charfn.csv"}
        if cfg.get("y") is not None:
            b = clt.char_fn(self.system, phi, cfg["y"], cfg["n"], cfg["t_grid"], cfg["R"], cfg["seed"] + 1, **kw)
            self.csv("charfn_b.csv", b.rows())
            gap, se, t = clt.char_fn_gap(a, b)
            rec["gap"] = {"start_b": b.start, "seed_b": cfg["seed"] + 1, "table_b": "charfn_b.csv", "sup": gap, "stderr": se, "argmax_t": t, "mode_b": b.mode}
        self.json("charfn.json", rec)

    def manifest(self):
        cfg = {k: v for k, v in self.cfg.items() if k not in EXECUTION_KEYS}
        versions = {"python": platform.python_version(), "numpy": np.__version__}
        for dist in ("artifact", "numba"):
            try:
                versions[dist] = metadata.version(dist)
            except metadata.PackageNotFoundError:
                pass
        files = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in self.files}
        reports.write_json(self.out / "manifest.json", {
            "command": self.cfg["command"],
            "config": cfg,
            "config_hash": reports.config_hash(cfg),
            "seed": self.cfg["seed"],
            "versions": versions,
            "files": files,
        })
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        reports.write_json(self.out / "runtime.json", {"timestamp": stamp, "threads": self.cfg["threads"]})


def run(cfg: dict) -> int:
    r = Run(cfg)
    getattr(r, cfg["command"].replace(" ", "_"))()
    r.manifest()
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return run(resolve_config(args))
    except IfsError as e:
        print(f"ifs-ergodic: error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
