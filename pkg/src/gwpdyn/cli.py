"""Command-line interface: run, sweep, revert, unitarity, sample, compare.

Options can come from a flat ``key = value`` config file, overridden by
command-line flags of the same names.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import harness
from .harness import RunConfig
from .trajectories import save_initial_conditions

CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def parse_config_file(path) -> dict:
    """Flat key = value text; # comments and blank lines allowed."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def _coerce(key, value):
    if value is None:
        return None
    kind = {f.name: f.type for f in fields(RunConfig)}[key]
    if key in ("n_gauss", "n_b", "seed", "stride"):
        return int(value)
    if key in ("eps_s", "dt", "t_final", "newton_tol"):
        return float(value)
    if key in ("frozen_frames", "literal_zdot"):
        if isinstance(value, bool):
            return value
        return str(value).lower() in ("1", "true", "yes", "on")
    if key == "z2":
        return complex(str(value).replace(" ", ""))
    return str(value)


def build_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for key in CONFIG_KEYS:
        arg = getattr(args, key, None)
        if arg is not None:
            values[key] = arg
    return RunConfig(**{k: _coerce(k, v) for k, v in values.items()})


def _add_config_args(p):
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--model", choices=("doublewell", "rescaled"))
    p.add_argument("--method", choices=("var", "reg1", "reg2", "naive",
                                        "exact"))
    p.add_argument("--n-gauss", dest="n_gauss", type=int)
    p.add_argument("--eps-s", dest="eps_s", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-final", dest="t_final", type=float)
    p.add_argument("--n-b", dest="n_b", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--initial-file", dest="initial_file")
    p.add_argument("--z2", help="companion state, e.g. -0.03-0.52j")
    p.add_argument("--frozen-frames", dest="frozen_frames",
                   action="store_const", const=True)
    p.add_argument("--literal-zdot", dest="literal_zdot",
                   action="store_const", const=True)
    p.add_argument("--label")
    p.add_argument("--outdir", default=".")


def _outpath(args, name):
    os.makedirs(args.outdir, exist_ok=True)
    return os.path.join(args.outdir, name)


def cmd_run(args):
    cfg = build_config(args)
    result = harness.run(cfg)
    csv = _outpath(args, f"run_{cfg.method}.csv")
    harness.write_run_csv(csv, result)
    harness.write_plot_script(_outpath(args, "plot_run.py"),
                              os.path.basename(csv))
    harness.save_checkpoint(_outpath(args, f"run_{cfg.method}.ckpt"),
                            result.final_frame, result.final_states,
                            rng_state={"seed": cfg.seed})
    print(f"wrote {csv}")
    print(f"frames digest {result.frames_digest}  "
          f"case counts {result.case_counts}")
    if result.diverged:
        print(f"DIVERGED: {result.error}")
        return 1
    return 0


def cmd_sweep(args):
    cfg = build_config(args)
    n_list = [int(x) for x in args.n_gauss_list.split(",")]
    eps_list = [float(x) for x in args.eps_list.split(",")]
    methods = tuple(args.methods.split(","))
    rows = harness.sweep(cfg, n_list, eps_list, methods=methods)
    path = _outpath(args, "sweep.csv")
    harness.write_sweep_csv(path, rows)
    print(f"wrote {path} ({len(rows)} cells)")
    return 0


def cmd_revert(args):
    cfg = build_config(args)
    times, diff, fwd, bwd = harness.revert(cfg)
    path = _outpath(args, f"revert_{cfg.method}.csv")
    with open(path, "w") as fh:
        fh.write("t,q_fwd,q_bwd,abs_diff\n")
        qb = bwd.data["position"][::-1]
        for i, t in enumerate(times):
            fh.write(f"{t!r},{fwd.data['position'][i]!r},{qb[i]!r},"
                     f"{diff[i]!r}\n")
    print(f"wrote {path}; max discrepancy {diff.max():.3e}")
    return 0


def cmd_unitarity(args):
    cfg = build_config(args)
    out = harness.unitarity_run(cfg)
    path = _outpath(args, f"unitarity_{cfg.method}.csv")
    with open(path, "w") as fh:
        fh.write("t,dnorm1,dnorm2,doverlap\n")
        for i, t in enumerate(out["times"]):
            fh.write(f"{t!r},{out['dnorm1'][i]!r},{out['dnorm2'][i]!r},"
                     f"{out['doverlap'][i]!r}\n")
    print(f"wrote {path}; max |overlap error| "
          f"{np.abs(out['doverlap']).max():.3e}")
    return 0


def cmd_sample(args):
    cfg = build_config(args)
    frame = harness.initial_frame(cfg)
    path = _outpath(args, "initial_conditions.txt")
    save_initial_conditions(path, frame)
    print(f"wrote {path} ({frame.n_gauss} Gaussians)")
    return 0


def cmd_compare(args):
    a = np.genfromtxt(args.csv_a, delimiter=",", names=True, comments="#",
                      dtype=None, encoding=None)
    b = np.genfromtxt(args.csv_b, delimiter=",", names=True, comments="#",
                      dtype=None, encoding=None)
    n = min(len(a), len(b))
    if not np.allclose(a["t"][:n], b["t"][:n], atol=1e-9):
        print("time grids do not match", file=sys.stderr)
        return 1
    numeric = [name for name in a.dtype.names
               if name != "t" and name in b.dtype.names
               and np.issubdtype(a[name].dtype, np.number)
               and np.issubdtype(b[name].dtype, np.number)]
    with open(args.output, "w") as fh:
        fh.write("t," + ",".join(f"err_{c}" for c in numeric) + "\n")
        for i in range(n):
            vals = [repr(float(a[c][i] - b[c][i])) for c in numeric]
            fh.write(f"{a['t'][i]!r}," + ",".join(vals) + "\n")
    print(f"wrote {args.output}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="gwpdyn",
        description="Wavepacket dynamics in a linearly dependent moving "
                    "Gaussian basis")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("run", cmd_run), ("revert", cmd_revert),
                     ("unitarity", cmd_unitarity), ("sample", cmd_sample)):
        p = sub.add_parser(name)
        _add_config_args(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("sweep")
    _add_config_args(p)
    p.add_argument("--n-gauss-list", dest="n_gauss_list", required=True,
                   help="comma-separated N_g values")
    p.add_argument("--eps-list", dest="eps_list", required=True,
                   help="comma-separated eps_S values")
    p.add_argument("--methods", default="var,reg1,reg2")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare")
    p.add_argument("csv_a")
    p.add_argument("csv_b")
    p.add_argument("-o", "--output", default="compare.csv")
    p.set_defaults(func=cmd_compare)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
