"""Command-line front door.

Every command writes its artifacts atomically into ``--out`` and prints a
single JSON line on stderr. Exit codes: 0 all checks pass, 1 input error,
2 audit failure (or no certified gap), 3 no witness.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from ._validation import to_builtin
from .assumptions import WitnessStrategy, full_witness_search
from .constants import build_ledger, tune_ledger
from .eigensolver import (ConvergenceError, convergence_audit, default_mu_set,
                          self_consistency, solve_triplet)
from .measure import load_kernel, matrix_exp, read_kernel_json

COMMANDS = ("check", "ledger", "eigen", "audit", "bd-qsd", "growth-frag", "harris")
EXIT_OK, EXIT_INPUT, EXIT_AUDIT, EXIT_WITNESS = 0, 1, 2, 3
GF_AUDIT_DT = 0.5

DEFAULTS = {
    "command": None, "input": None, "out": ".", "tol": 1e-13, "a4_horizon": 500,
    "tail_tol": 1e-6, "seed": 0, "ledger_format": "json", "tune": False,
    "witness_out": None, "k_max": 60,
}


class InputError(ValueError):
    """Raised for unreadable or invalid inputs (exit code 1)."""


class _Outcome(Exception):
    def __init__(self, code, status, message, **extra):
        super().__init__(message)
        self.code, self.status, self.message, self.extra = code, status, message, extra


# ---------------------------------------------------------------------------
# atomic writers


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, doc) -> None:
    _atomic_write(Path(path), json.dumps(to_builtin(doc), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                    for v in to_builtin(list(row))])
    _atomic_write(Path(path), buf.getvalue())


def write_vector_csv(path, labels, values) -> None:
    write_csv(path, ("state", "value"), zip(labels, values))


# ---------------------------------------------------------------------------
# configuration


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perrongap",
                                description="Perron eigen-triplets and spectral-gap certificates "
                                            "for positive semigroups.")
    p.add_argument("command_pos", nargs="?", choices=COMMANDS, metavar="command",
                   help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--command", choices=COMMANDS, default=None)
    p.add_argument("--input", default=None, help="kernel (.json/.csv) or model JSON")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--tol", type=float, default=None, help="eigen-solver tolerance")
    p.add_argument("--a4-horizon", dest="a4_horizon", type=int, default=None)
    p.add_argument("--tail-tol", dest="tail_tol", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k-max", dest="k_max", type=int, default=None, help="audit steps")
    p.add_argument("--ledger-format", dest="ledger_format", choices=("json", "table"),
                   default=None)
    p.add_argument("--tune", action="store_true", default=None,
                   help="grid-search the free ledger parameters")
    p.add_argument("--witness-out", dest="witness_out", default=None)
    p.add_argument("--config", default=None, help="JSON config; its keys override flags")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, flags and the config file (config wins over flags)."""
    cfg = dict(DEFAULTS)
    flags = vars(args).copy()
    if flags.get("command") is None:
        flags["command"] = flags.get("command_pos")
    for key, value in flags.items():
        if key in cfg and value is not None:
            cfg[key] = value
    cfg["model"] = None
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config: {exc}") from exc
        if not isinstance(doc, dict):
            raise InputError("config must be a JSON object")
        for key, value in doc.items():
            key = key.replace("-", "_")
            if key in cfg:
                cfg[key] = value
        if "model" in doc:
            cfg["model"] = doc
    if cfg["command"] not in COMMANDS:
        raise InputError(f"command must be one of {', '.join(COMMANDS)}")
    return cfg


def _read_doc(cfg):
    if cfg.get("model") is not None:
        return cfg["model"]
    if cfg["input"] is None:
        return None
    path = Path(cfg["input"])
    try:
        if path.suffix.lower() == ".csv":
            return {"_kernel": load_kernel(path)}
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read input: {exc}") from exc


def _load_kernel_input(cfg):
    """Kernel, psi, V and the state labels from the input document."""
    doc = _read_doc(cfg)
    if doc is None:
        raise InputError("--input is required for this command")
    if "_kernel" in doc:
        M = doc["_kernel"]
        psi = np.ones(M.n)
        return M, psi, psi, M.space.labels
    M = read_kernel_json(doc)
    psi = np.asarray(doc.get("psi", np.ones(M.n)), dtype=float)
    V = np.asarray(doc.get("V", psi), dtype=float)
    if psi.shape != (M.n,) or V.shape != (M.n,):
        raise InputError("psi and V must match the kernel size")
    return M, psi, V, M.space.labels


# ---------------------------------------------------------------------------
# shared steps


def _witness(M, V, psi, cfg, out):
    res = full_witness_search(M, V, psi, WitnessStrategy(a4_horizon=int(cfg["a4_horizon"])))
    if not res.found:
        raise _Outcome(EXIT_WITNESS, "FAIL", res.diagnosis)
    target = Path(cfg["witness_out"]) if cfg["witness_out"] else out / "witness.json"
    write_json(target, res.witness.to_dict())
    return res


def _ledger(witness, cfg, out):
    led = tune_ledger(witness) if cfg["tune"] else build_ledger(witness)
    if cfg["ledger_format"] == "table":
        _atomic_write(out / "ledger.txt", led.table() + "\n")
    else:
        write_json(out / "ledger.json", led.to_dict())
    return led


def _write_triplet(out, labels, tri, extra=None):
    doc = tri.to_dict()
    doc["labels"] = list(labels)
    if extra:
        doc.update(extra)
    write_json(out / "triplet.json", doc)
    write_vector_csv(out / "h.csv", labels, tri.h)
    write_vector_csv(out / "gamma.csv", labels, tri.gamma)


def _write_audit(out, audit):
    write_csv(out / "audit.csv", ("k", "err", "bound", "pass"), audit.table())


def _solve(M, psi, V, nu, cfg, ledger=None):
    try:
        return solve_triplet(M, psi, nu=nu, V=V, tol=float(cfg["tol"]), ledger=ledger)
    except ConvergenceError as exc:
        raise _Outcome(EXIT_AUDIT, "FAIL", f"eigen-solver did not converge: {exc}")


# ---------------------------------------------------------------------------
# commands


def cmd_check(cfg, out):
    M, psi, V, _ = _load_kernel_input(cfg)
    res = _witness(M, V, psi, cfg, out)
    w = res.witness
    return {"beta": w.beta, "alpha": w.alpha, "theta": w.theta, "c": w.c, "d": w.d}


def cmd_ledger(cfg, out):
    M, psi, V, _ = _load_kernel_input(cfg)
    res = _witness(M, V, psi, cfg, out)
    led = _ledger(res.witness, cfg, out)
    return {"sigma": led.sigma, "log_sigma": led.log_sigma,
            "lambda_interval": [led.lambda_lo, led.lambda_hi]}


def cmd_eigen(cfg, out):
    M, psi, V, labels = _load_kernel_input(cfg)
    res = full_witness_search(M, V, psi, WitnessStrategy(a4_horizon=int(cfg["a4_horizon"])))
    if not res.found:
        tri = _solve(M, psi, V, None, cfg)
        _write_triplet(out, labels, tri, {"certified": False, "diagnosis": res.diagnosis})
        raise _Outcome(EXIT_AUDIT, "FAIL", "no certified gap", diagnosis=res.diagnosis,
                       **{"lambda": tri.lam})
    target = Path(cfg["witness_out"]) if cfg["witness_out"] else out / "witness.json"
    write_json(target, res.witness.to_dict())
    led = _ledger(res.witness, cfg, out)
    tri = _solve(M, psi, V, res.witness.nu, cfg, led)
    inside = led.lambda_lo - 1e-10 <= tri.lam <= led.lambda_hi + 1e-10
    _write_triplet(out, labels, tri, {"certified": True, "sigma": led.sigma})
    if not inside:
        raise _Outcome(EXIT_AUDIT, "FAIL", "eigenvalue outside the certified bracket",
                       **{"lambda": tri.lam})
    return {"lambda": tri.lam, "sigma": led.sigma}


def cmd_audit(cfg, out):
    M, psi, V, labels = _load_kernel_input(cfg)
    res = full_witness_search(M, V, psi, WitnessStrategy(a4_horizon=int(cfg["a4_horizon"])))
    mus = default_mu_set(M.n, int(cfg["seed"]))
    if not res.found:
        tri = _solve(M, psi, V, None, cfg)
        audit = convergence_audit(M, psi, tri, None, mus, int(cfg["k_max"]))
        _write_triplet(out, labels, tri, {"certified": False})
        _write_audit(out, audit)
        raise _Outcome(EXIT_AUDIT, "FAIL", "no certified gap", diagnosis=res.diagnosis)
    w = res.witness
    target = Path(cfg["witness_out"]) if cfg["witness_out"] else out / "witness.json"
    write_json(target, w.to_dict())
    tri = _solve(M, psi, V, w.nu, cfg, build_ledger(w))
    # certify with psi := h when the self-consistency check goes through
    audit_psi = psi
    try:
        w_h = self_consistency(M, V, tri, horizon=min(int(cfg["a4_horizon"]), 50))
        led = _ledger(w_h, cfg, out)
        audit_psi = tri.h
    except (RuntimeError, ValueError):
        led = _ledger(w, cfg, out)
    audit = convergence_audit(M, audit_psi, tri, led, mus, int(cfg["k_max"]))
    _write_triplet(out, labels, tri, {"certified": True})
    _write_audit(out, audit)
    write_json(out / "audit.json", audit.to_dict())
    if not audit.passed:
        raise _Outcome(EXIT_AUDIT, "FAIL", "audit failed", min_rate=audit.min_rate,
                       sigma=led.sigma)
    return {"lambda": tri.lam, "sigma": led.sigma, "min_rate": audit.min_rate}


def bd_model_from_doc(doc):
    from .models import BirthDeathModel

    doc = doc or {}
    try:
        return BirthDeathModel(b=float(doc["b"]), d=float(doc["d"]), b1=float(doc["b1"]),
                               d1=float(doc["d1"]), N=int(doc.get("N", 200)))
    except KeyError as exc:
        raise InputError(f"birth-death model needs {exc.args[0]!r}") from exc


def gf_model_from_doc(doc):
    from .models import GrowthFragModel

    doc = dict(doc or {})
    kwargs = {}
    if "B" in doc:
        kwargs["B_spec"] = dict(doc["B"])
    if "atoms" in doc:
        kwargs["atoms"] = tuple((float(z), float(w)) for z, w in doc["atoms"])
    if doc.get("uniform") is not None:
        kwargs["uniform"] = tuple(float(v) for v in doc["uniform"])
    for key, cast in (("k_weight", float), ("x_max", float), ("n_cells", int),
                      ("x0_fraction", float), ("quad_points", int)):
        if key in doc:
            kwargs[key] = cast(doc[key])
    return GrowthFragModel(**kwargs)


def cmd_bd_qsd(cfg, out):
    from .models import ConditionHError, bd_qsd

    model = bd_model_from_doc(_read_doc(cfg))
    try:
        res = bd_qsd(model, tail_tol=float(cfg["tail_tol"]), k_max=int(cfg["k_max"]),
                     tol=float(cfg["tol"]))
    except ConditionHError as exc:
        raise _Outcome(EXIT_WITNESS, "FAIL", str(exc), Delta=model.Delta)
    labels = list(range(1, res["N"] + 1))
    write_vector_csv(out / "pi.csv", labels, res["pi"])
    _write_triplet(out, labels, res["triplet"], {"lambda0": res["lambda0"]})
    _write_audit(out, res["conv_table"])
    summary = {"lambda0": res["lambda0"], "N": res["N"], "tail_tv": res["tail_tv"],
               "truncation_converged": res["truncation_converged"],
               "min_rate": res["conv_table"].min_rate}
    write_json(out / "qsd.json", summary)
    if res["witness"] is None:
        raise _Outcome(EXIT_WITNESS, "FAIL", res["diagnosis"], **summary)
    target = Path(cfg["witness_out"]) if cfg["witness_out"] else out / "witness.json"
    write_json(target, res["witness"].to_dict())
    write_json(out / "ledger.json", res["ledger"].to_dict())
    if not (res["conv_table"].passed and res["truncation_converged"]):
        raise _Outcome(EXIT_AUDIT, "FAIL", "audit failed or truncation not converged",
                       **summary)
    return summary


def cmd_growth_frag(cfg, out):
    from .models import gf_build, gf_evolve_audit, gf_witness

    model = gf_model_from_doc(_read_doc(cfg))
    built = gf_build(model)
    gw = gf_witness(model, built, a4_horizon=int(cfg["a4_horizon"]))
    drift = built[4].to_dict()
    write_json(out / "drift.json", {"drift": drift, "small_set": {
        k: v for k, v in gw["small_set"].items() if k != "nu"}})
    if gw["witness"] is None:
        raise _Outcome(EXIT_WITNESS, "FAIL", gw["diagnosis"])
    w = gw["witness"]
    target = Path(cfg["witness_out"]) if cfg["witness_out"] else out / "witness.json"
    write_json(target, w.to_dict())
    led = _ledger(w, cfg, out)
    M = gw["kernel"]
    tri = _solve(M, gw["psi"], gw["V"], w.nu, cfg)
    labels = [float(v) for v in model.grid]
    _write_triplet(out, labels, tri, {"certified": True})
    rng = np.random.default_rng(int(cfg["seed"]))
    starts = np.sort(rng.choice(M.n // 3, size=4, replace=False))
    u0 = np.zeros((starts.size, M.n))
    u0[np.arange(starts.size), starts] = 1.0
    # the small-set time is too coarse to resolve the decay; audit on a finer step
    fine = matrix_exp(built[0], GF_AUDIT_DT)
    audit = gf_evolve_audit(model, fine, tri, u0, k_max=min(int(cfg["k_max"]), 40))
    worst = audit["errs"].max(axis=0)
    write_csv(out / "audit.csv", ("k", "err"), zip(audit["steps"], worst))
    summary = {"lambda": tri.lam, "sigma": led.sigma, "log_sigma": led.log_sigma,
               "min_rate": float(audit["rates"].min()),
               "monotonicity": audit["monotonicity"],
               "bracket": [led.lambda_lo, led.lambda_hi]}
    write_json(out / "audit.json", summary)
    if not audit["passed"] or not led.lambda_lo - 1e-10 <= tri.lam <= led.lambda_hi + 1e-10:
        raise _Outcome(EXIT_AUDIT, "FAIL", "audit failed", **summary)
    return summary


def cmd_harris(cfg, out):
    from .propagator import fit_harris_spec, verify_harris_contraction

    doc = _read_doc(cfg)
    if doc is None:
        raise InputError("--input is required for this command")
    M = doc["_kernel"] if "_kernel" in doc else read_kernel_json(doc)
    # default Lyapunov function: quadratic in the state index
    scrV = np.asarray(doc.get("scrV", 1 + np.arange(M.n) ** 2 / M.n), dtype=float)
    spec = fit_harris_spec(M.dense(), scrV)
    rep = verify_harris_contraction(spec)
    write_json(out / "harris.json", rep)
    if not rep["pass"]:
        raise _Outcome(EXIT_AUDIT, "FAIL", "contraction fails", worst_ratio=rep["worst_ratio"])
    return {"worst_ratio": rep["worst_ratio"], "frak_y": rep["frak_y"]}


HANDLERS = {"check": cmd_check, "ledger": cmd_ledger, "eigen": cmd_eigen, "audit": cmd_audit,
            "bd-qsd": cmd_bd_qsd, "growth-frag": cmd_growth_frag, "harris": cmd_harris}


def _summary_line(command, code, status, message, extra):
    doc = {"command": command, "exit": code, "status": status, "message": message}
    doc.update(extra)
    doc = to_builtin(doc)
    for key, value in list(doc.items()):
        if isinstance(value, float) and not math.isfinite(value):
            doc[key] = repr(value)
    return json.dumps(doc, sort_keys=True)


def run(cfg: dict) -> int:
    """Execute one resolved configuration; returns the exit code."""
    command = cfg["command"]
    out = Path(cfg["out"])
    try:
        extra = HANDLERS[command](cfg, out) or {}
        code, status, message = EXIT_OK, "PASS", "ok"
    except _Outcome as exc:
        code, status, message, extra = exc.code, exc.status, exc.message, exc.extra
    except (InputError, ValueError, KeyError, TypeError, OSError) as exc:
        code, status, message, extra = EXIT_INPUT, "ERROR", f"{type(exc).__name__}: {exc}", {}
    print(_summary_line(command, code, status, message, extra), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except InputError as exc:
        print(_summary_line(args.command or args.command_pos, EXIT_INPUT, "ERROR", str(exc), {}),
              file=sys.stderr)
        return EXIT_INPUT
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
