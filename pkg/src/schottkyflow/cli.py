"""Command-line front end: subcommands, flat config, result cache, CSV/JSON.

Every emitted file starts with one comment line carrying the tool version,
the group hash and the config hash, then a header row naming all columns.
Identical config and seed produce byte-identical output except wallclock
columns.  Exit codes: 0 success, 2 validation failure, 3 resource limits,
64 usage errors.
"""

from __future__ import annotations

import argparse
import base64
import hashlib
import json
import os
import sys
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    IncompleteEnumerationError,
    NotAdmissibleError,
    ResourceLimitError,
    SchottkyFlowError,
    UsageError,
)

CACHE_ENV = "SCHOTTKYFLOW_CACHE"
CACHE_VERSION = 1

KNOWN_KEYS = {
    "group", "order", "q", "q_list", "a", "b", "a_list", "b_list",
    "T", "T_max", "seed", "samples", "trials", "k_max", "l_max",
    "window", "eps_test", "b_max", "n_max", "depth", "iters", "xi",
    "out_dir", "format", "cache",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _hash_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def read_config(path) -> dict:
    """Flat key=value config; unknown keys are rejected."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"bad config line: {line!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in KNOWN_KEYS:
                raise UsageError(f"unknown config key: {key}")
            out[key] = val
    return out


def _config_hash(args_dict: dict) -> str:
    blob = json.dumps(
        {k: v for k, v in sorted(args_dict.items()) if k not in ("out_dir",)},
        default=str,
    )
    return _hash_text(blob)


def _group_hash(g) -> str:
    return _hash_text(";".join(repr(m) for m in g.generators))


def _emit_csv(path: Path, header, rows, meta: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(meta + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return f"{v.real!r}{'+' if v.imag >= 0 else '-'}{abs(v.imag)!r}j"
    return str(v)


def _emit_json(path: Path, payload, meta: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"meta": meta, "data": payload}, fh, indent=1, default=float)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# content-addressed cache: text header + base64 payload with checksum


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "schottkyflow"))


def cache_put(key: str, value: bytes) -> Path:
    d = cache_dir()
    d.mkdir(parents=True, exist_ok=True)
    payload = base64.b64encode(value).decode()
    checksum = hashlib.sha256(value).hexdigest()
    body = f"schottkyflow-cache v{CACHE_VERSION}\nkey={key}\nsha256={checksum}\n{payload}\n"
    tmp = d / f".{key}.tmp.{os.getpid()}"
    tmp.write_text(body, encoding="utf-8")
    final = d / key
    os.replace(tmp, final)  # atomic on POSIX
    return final


def cache_get(key: str):
    path = cache_dir() / key
    if not path.exists():
        return None
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
        header, keyline, shaline, payload = lines[0], lines[1], lines[2], lines[3]
        if header != f"schottkyflow-cache v{CACHE_VERSION}":
            return None  # stale version: miss
        if keyline != f"key={key}":
            return None
        value = base64.b64decode(payload)
        if hashlib.sha256(value).hexdigest() != shaline.split("=", 1)[1]:
            return None  # corruption: miss
        return value
    except Exception:
        return None


# ---------------------------------------------------------------------------
# subcommand implementations


def _load_group(args):
    from . import schottky

    if args.group is None:
        return schottky.reference_group()
    return schottky.load_group(args.group)


def _meta_line(args, g) -> str:
    return (
        f"# schottkyflow v{__version__} group={_group_hash(g)} "
        f"config={_config_hash(vars(args))}"
    )


def cmd_validate(args):
    g = _load_group(args)
    print(f"generators: {[repr(m) for m in g.generators]}")
    for s in range(g.n_symbols):
        lo, hi = g.intervals[s]
        print(
            f"symbol {s}: interval [{lo}, {hi}]  expansion range "
            f"[{g.expansion_min[s]:.6g}, {g.expansion_max[s]:.6g}]"
        )
    return 0


def cmd_dimension(args):
    from . import schottky, thermo

    g = _load_group(args)
    rows = []
    for order in range(12, args.order + 1, 4):
        rows.append((order, thermo.solve_delta(g, order)))
    delta = rows[-1][1]
    box = schottky.boxcount_dimension(g)
    print(f"delta = {float(delta)!r}")
    print(f"box-count oracle = {box!r}  (difference {abs(delta-box):.3e})")
    for order, d in rows:
        print(f"order {order:3d}: delta = {d!r}")
    out = Path(args.out_dir) / "dimension.csv"
    _emit_csv(out, ("order", "delta"), rows, _meta_line(args, g))
    print(f"wrote {out}")
    return 0


def cmd_spectrum(args):
    from . import thermo

    g = _load_group(args)
    delta = thermo.solve_delta(g, args.order)
    ss = np.linspace(max(0.0, delta - 0.15), delta + 0.25, 21)
    rows = thermo.pressure_curve(g, ss, args.order)
    out = Path(args.out_dir) / "pressure.csv"
    _emit_csv(out, ("s", "log_lambda", "order"), rows, _meta_line(args, g))
    print(f"delta = {float(delta)!r}; wrote {out}")
    return 0


def cmd_gap(args):
    from . import congruence, thermo

    g = _load_group(args)
    gd = thermo.gibbs_system(g, args.order)
    q_list = [int(q) for q in args.q_list.split(",")]
    a_list = [float(x) for x in args.a_list.split(",")]
    b_list = [float(x) for x in args.b_list.split(",")]
    rows, curves = congruence.gap_table(
        g, gd, q_list, a_values=a_list, b_values=b_list, iters=args.iters
    )
    out = Path(args.out_dir) / "gap.csv"
    header = ("q", "group_order", "admissible", "a", "b", "radius", "steps",
              "wallclock_ms")
    _emit_csv(out, header, rows, _meta_line(args, g))
    if args.format == "json":
        out2 = Path(args.out_dir) / "gap.json"
        _emit_json(
            out2,
            {
                "rows": [dict(zip(header, r)) for r in rows],
                "curves": {str(k): v for k, v in curves.items()},
            },
            {"version": __version__, "group": _group_hash(g)},
        )
        print(f"wrote {out2}")
    for r in rows:
        print(r)
    print(f"wrote {out}")
    return 0


def cmd_dolgopyat_audit(args):
    from . import dolgopyat, thermo

    g = _load_group(args)
    gd = thermo.gibbs_system(g, args.order)
    rep = dolgopyat.contraction_audit(
        g, gd, args.a, args.b, trials=args.trials, seed=args.seed
    )
    out = Path(args.out_dir) / "dolgopyat_audit.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rep.to_json(), encoding="utf-8")
    print(
        f"pass fraction {rep.pass_fraction:.3f} over {len(rep.trials)} trials; "
        f"delta0_hat = {rep.delta0_hat:.4g}; wrote {out}"
    )
    return 0 if rep.pass_fraction >= 0.95 else 2


def cmd_zeta(args):
    from . import congruence, thermo, zeta

    g = _load_group(args)
    delta = thermo.solve_delta(g, args.order)
    mg = congruence.build_modgroup(g, args.q)
    if args.q > 1 and not mg.admissible:
        raise NotAdmissibleError(args.q, mg.order, mg.full_order)
    re0, re1, im0, im1 = (float(x) for x in args.window.split(","))
    zeros = zeta.find_zeros(g, mg, (re0, re1, im0, im1), order=args.order)
    rows = [(args.q, z.s.real, z.s.imag, z.residual, z.multiplicity) for z in zeros]
    out = Path(args.out_dir) / "zeros.csv"
    _emit_csv(out, ("q", "re", "im", "residual", "multiplicity"), rows,
              _meta_line(args, g))
    print(f"delta = {float(delta)!r}")
    for r in rows:
        print(r)
    print(f"wrote {out}")
    return 0


def cmd_resonances(args):
    from . import thermo, zeta

    g = _load_group(args)
    delta = thermo.solve_delta(g, max(args.order, 16))
    levels = [int(q) for q in args.q_list.split(",")]
    rows, eps_hat = zeta.resonance_scan(
        g, levels, delta, eps_test=args.eps_test, b_max=args.b_max,
        order=args.order,
    )
    table = []
    for r in rows:
        for z in r.zeros:
            table.append((r.q, z.s.real, z.s.imag, z.residual, z.multiplicity))
    out = Path(args.out_dir) / "resonances.csv"
    _emit_csv(out, ("q", "re", "im", "residual", "multiplicity"), table,
              _meta_line(args, g))
    print(f"epsilon_hat = {float(eps_hat)!r} over levels {levels}; wrote {out}")
    return 0


def cmd_geodesics(args):
    from . import counting, thermo

    g = _load_group(args)
    delta = thermo.solve_delta(g, 20)
    rep = counting.count_geodesics(g, args.q, args.T_max, delta=delta)
    out = Path(args.out_dir) / "geodesics.csv"
    _emit_csv(out, ("q", "T", "count", "model", "residual"), rep.rows(),
              _meta_line(args, g))
    print(f"# convention: {rep.convention}")
    print("# unoriented totals are the oriented counts divided by two")
    for row in rep.rows():
        print(row)
    print(f"wrote {out}")
    return 0


def cmd_orbits(args):
    from . import congruence, counting, zeta

    g = _load_group(args)
    if args.points_T is not None:
        n = counting.count_orbit_points(g, args.q, args.points_T)
        print(f"N_{args.q}({args.points_T}) = {n}")
        return 0
    orbits = zeta.enumerate_orbits(g, args.n_max)
    mgs = [congruence.build_modgroup(g, q) for q in
           ([int(q) for q in args.q_list.split(",")] if args.q_list else [])]
    rows = zeta.orbit_table_rows(orbits, mgs)
    header = ["word", "trace", "length"] + [f"order_mod_{mg.q}" for mg in mgs]
    out = Path(args.out_dir) / "orbits.csv"
    _emit_csv(out, header, rows, _meta_line(args, g))
    print(f"{len(orbits)} primitive necklaces up to word length {args.n_max}; "
          f"wrote {out}")
    return 0


def cmd_mix(args):
    from . import congruence, counting, thermo

    g = _load_group(args)
    gd = thermo.gibbs_system(g, args.order)
    mg = congruence.build_modgroup(g, args.q)
    psi = counting.make_observable(
        g, mg, seed=args.seed, mean_zero_in_gamma=(args.q > 1), linear=False
    )
    ts = np.linspace(0.0, args.T_max, max(2, int(args.T_max) + 1))
    curve = counting.correlation_curve(
        g, gd, mg, psi, psi, ts, samples=args.samples, seed=args.seed,
        depth=counting.required_depth(g, args.T_max, psi.depth),
    )
    rate = counting.fit_decay_rate(curve)
    rows = [(args.q, c[0], c[1].real, c[1].imag, c[2]) for c in curve]
    out = Path(args.out_dir) / "correlation.csv"
    _emit_csv(out, ("q", "t", "re", "im", "stderr"), rows, _meta_line(args, g))
    print(f"# measure normalized to a probability per level (the covering-"
          f"mass convention differs by #SL2(q))")
    print(f"fitted decay rate = {float(rate)!r}; wrote {out}")
    return 0


def cmd_expander(args):
    from . import congruence

    g = _load_group(args)
    rows = []
    for q in (int(q) for q in args.q_list.split(",")):
        mg = congruence.build_modgroup(g, q)
        if not mg.admissible:
            rows.append((q, mg.order, False, float("nan")))
            continue
        rows.append((q, mg.order, True, congruence.cayley_gap(mg)))
    out = Path(args.out_dir) / "expander.csv"
    _emit_csv(out, ("q", "group_order", "admissible", "gap"), rows,
              _meta_line(args, g))
    for r in rows:
        print(r)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="schottkyflow", description=__doc__)
    p.add_argument("--config", help="flat key=value config file")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--group", help="group file (default: reference group)")
        sp.add_argument("--out-dir", dest="out_dir", default="out")
        sp.add_argument("--order", type=int, default=16)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    sp = sub.add_parser("validate");  common(sp); sp.set_defaults(func=cmd_validate)
    sp = sub.add_parser("dimension"); common(sp); sp.set_defaults(func=cmd_dimension)
    sp.add_argument("--order-max", dest="order", type=int, default=28)
    sp = sub.add_parser("spectrum"); common(sp); sp.set_defaults(func=cmd_spectrum)
    sp = sub.add_parser("gap"); common(sp); sp.set_defaults(func=cmd_gap)
    sp.add_argument("--q-list", default="2,3,6,7,11,13")
    sp.add_argument("--a-list", default="0.0")
    sp.add_argument("--b-list", default="0.0")
    sp.add_argument("--iters", type=int, default=150)
    sp = sub.add_parser("dolgopyat-audit"); common(sp)
    sp.set_defaults(func=cmd_dolgopyat_audit)
    sp.add_argument("--a", type=float, default=0.0)
    sp.add_argument("--b", type=float, default=2.0)
    sp.add_argument("--trials", type=int, default=100)
    sp = sub.add_parser("zeta"); common(sp); sp.set_defaults(func=cmd_zeta)
    sp.add_argument("--q", type=int, default=1)
    sp.add_argument("--window", default="0.15,0.3,-0.1,0.1")
    sp = sub.add_parser("resonances"); common(sp); sp.set_defaults(func=cmd_resonances)
    sp.add_argument("--q-list", default="1,2")
    sp.add_argument("--eps-test", dest="eps_test", type=float, default=0.08)
    sp.add_argument("--b-max", dest="b_max", type=float, default=5.0)
    sp = sub.add_parser("geodesics"); common(sp); sp.set_defaults(func=cmd_geodesics)
    sp.add_argument("--q", type=int, default=1)
    sp.add_argument("--T-max", dest="T_max", type=float, default=12.0)
    sp = sub.add_parser("orbits"); common(sp); sp.set_defaults(func=cmd_orbits)
    sp.add_argument("--n-max", dest="n_max", type=int, default=6)
    sp.add_argument("--q-list", default="")
    sp.add_argument("--q", type=int, default=1)
    sp.add_argument("--points-T", dest="points_T", type=float, default=None)
    sp = sub.add_parser("mix"); common(sp); sp.set_defaults(func=cmd_mix)
    sp.add_argument("--q", type=int, default=1)
    sp.add_argument("--T-max", dest="T_max", type=float, default=14.0)
    sp.add_argument("--samples", type=int, default=100_000)
    sp = sub.add_parser("expander"); common(sp); sp.set_defaults(func=cmd_expander)
    sp.add_argument("--q-list", default="2,3,5,7,11,13,17,19,23,29,31")
    return p


def run(argv) -> int:
    parser = build_parser()
    try:
        # config file values become defaults, flags override
        if "--config" in argv:
            i = argv.index("--config")
            cfg = read_config(argv[i + 1])
            extra = []
            for k, v in cfg.items():
                flag = "--" + k.replace("_", "-")
                if flag not in argv:
                    extra.extend([flag, v])
            argv = argv[:i] + argv[i + 2 :] + extra
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 64
    except (NotAdmissibleError, SchottkyFlowError) as exc:
        if isinstance(exc, (ResourceLimitError, IncompleteEnumerationError)):
            print(f"resource limit: {exc}", file=sys.stderr)
            return 3
        print(f"validation failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
