"""``nuclab`` command-line interface.

Exit codes: 0 when every checked property holds, 1 on a property or fit
failure, 2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, model_validator

from . import constructions, field_solver, geometry, scaling_lab
from .core import RankOneTensor
from .errors import NuclabError
from .voxel import VoxelMask, grow_blob

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration schemas


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _unit(v: list[float]) -> list[float]:
    arr = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(arr))
    if not n > 0:
        raise ValueError("direction must be nonzero")
    return (arr / n).tolist()


class Range(_Strict):
    lo: float = Field(gt=0)
    hi: float = Field(gt=0)
    n: int = Field(ge=1)


class SweepConfig(_Strict):
    command: Literal["sweep"] = "sweep"
    d: int = Field(ge=2)
    nu: list[float]
    a: list[float]
    mus: Optional[list[float]] = None
    mu_range: Optional[Range] = None
    method: Literal["ClosedForm", "ExactPiecewise", "Sampled", "NumericalMin"] = "ExactPiecewise"
    qmc_tol: float = Field(1e-3, gt=0, lt=0.1)
    tolerance: float = Field(0.03, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if (self.mus is None) == (self.mu_range is None):
            raise ValueError("give exactly one of 'mus' and 'mu_range'")
        if len(self.nu) != self.d or len(self.a) != self.d:
            raise ValueError("nu and a must have length d")
        self.nu = _unit(self.nu)
        return self

    def volumes(self) -> tuple:
        if self.mus is not None:
            return tuple(self.mus)
        r = self.mu_range
        return scaling_lab.log_spaced(r.lo, r.hi, r.n)


class DichotomyConfig(_Strict):
    command: Literal["dichotomy"] = "dichotomy"
    d: int = Field(2, ge=2)
    a: list[float]
    mu: float = Field(gt=0)
    start_angle_deg: float = Field(45.0, gt=0, le=90)
    n_steps: int = 46
    method: Optional[Literal["ExactPiecewise", "Sampled", "ClosedForm"]] = None
    seed: int = 0


class SolveConfig(_Strict):
    command: Literal["solve"] = "solve"
    mask: str
    nu: list[float]
    a: list[float]
    tol: float = Field(1e-10, ge=1e-12, le=1e-4)
    max_iter: Optional[int] = None
    oracle: bool = False
    oracle_tolerance: float = 1e-8

    @model_validator(mode="after")
    def _check(self):
        if len(self.nu) != len(self.a):
            raise ValueError("nu and a must have the same length")
        self.nu = _unit(self.nu)
        return self


class CagesConfig(_Strict):
    command: Literal["cages"] = "cages"
    nu1: Optional[list[float]] = None
    nu1_step: float = Field(0.02, gt=0)
    sigma_factors: list[float] = [2.0, 3.0, 4.0]
    n_samples: int = Field(10_000, ge=1)
    seed: int = 0
    gamma_override: Optional[float] = None

    def nu1_values(self) -> list[float]:
        if self.nu1 is not None:
            return list(self.nu1)
        n = int(round(1.0 / self.nu1_step))
        return [round((i + 1) * self.nu1_step, 12) for i in range(n)]


class ReflectItem(_Strict):
    kind: Literal["lens", "halfball"]
    d: int = Field(2, ge=2)
    nu: list[float]
    a: list[float]
    mu: Optional[float] = None
    H: Optional[float] = None
    L: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if len(self.nu) != self.d or len(self.a) != self.d:
            raise ValueError("nu and a must have length d")
        if self.kind == "halfball" and self.mu is None:
            raise ValueError("a half-ball needs mu")
        if self.kind == "lens" and self.mu is None and (self.H is None or self.L is None):
            raise ValueError("a lens needs mu or both H and L")
        self.nu = _unit(self.nu)
        return self


class ReflectConfig(_Strict):
    command: Literal["reflect"] = "reflect"
    configurations: list[ReflectItem]
    n_masks: int = Field(100, ge=0)
    mask_dims: list[int] = [2, 3]
    doubling_tol: float = 1e-12
    seed: int = 0


class ProbeConfig(_Strict):
    command: Literal["probe"] = "probe"
    d: int = Field(2, ge=2)
    nu1: list[float]
    n_samples: int = Field(100, ge=1)
    rho: float = Field(1.0, gt=0)
    stability: float = Field(0.5, gt=0)
    check_doubling: bool = True
    seed: int = 0


SCHEMAS = {"sweep": SweepConfig, "dichotomy": DichotomyConfig, "solve": SolveConfig,
           "cages": CagesConfig, "reflect": ReflectConfig, "probe": ProbeConfig}


def bundled_configs() -> list[str]:
    root = resources.files("nuclab") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(command: str, ref: str | None):
    """Parse and validate a config given as a path or a bundled config name."""
    if ref is None:
        raise UsageError("--config is required")
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
        base = path.parent
    else:
        name = ref[:-5] if ref.endswith(".json") else ref
        res = resources.files("nuclab") / "configs" / f"{name}.json"
        if not res.is_file():
            raise UsageError(f"config {ref!r} is neither a file nor a bundled config "
                             f"({', '.join(bundled_configs())})")
        text = res.read_text()
        base = Path(str(resources.files("nuclab") / "configs"))
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {ref}: {exc}")
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    if raw.get("command", command) != command:
        raise UsageError(f"config is for command {raw.get('command')!r}, not {command!r}")
    try:
        cfg = SCHEMAS[command].model_validate(raw)
    except PydanticError as exc:
        raise UsageError(f"invalid config: {exc}")
    return cfg, base


# ---------------------------------------------------------------------------
# output helpers


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats by strings so reports stay valid JSON."""
    if isinstance(o, float) and not math.isfinite(o):
        return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return _clean(o.item())
    return o


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def write_sweep_plot(path: Path, rows, fit, target: float, title: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "nuclab"
    mu = np.array([r.mu for r in rows])
    tot = np.array([r.total for r in rows])
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.loglog(mu, tot, "o", label="construction energy")
    if fit is not None:
        ax.loglog(mu, np.exp(fit.intercept) * mu ** fit.slope, "-", label=f"fit slope {fit.slope:.4f}")
        ref = np.exp(fit.intercept) * mu[0] ** fit.slope * (mu / mu[0]) ** target
        ax.loglog(mu, ref, "--", label=f"target slope {target:.4f}")
    ax.set_xlabel("mu")
    ax.set_ylabel("energy")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# commands


def cmd_sweep(cfg: SweepConfig, out: Path, args) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    tol = cfg.tolerance if args.tolerance is None else args.tolerance
    spec = scaling_lab.SweepSpec(cfg.d, cfg.nu, cfg.a, cfg.volumes(), cfg.method, seed, cfg.qmc_tol)
    rows = scaling_lab.run_sweep(spec, args.threads)
    write_csv(out / "rows.csv", ["mu", "surface", "elastic", "total", "H", "L", "branch"],
              [[r.mu, r.surface, r.elastic, r.total, r.H, r.L, r.branch] for r in rows])
    target = scaling_lab.target_exponent(spec) if rows else None
    fit, fit_error = None, None
    try:
        spec.check_fit_ready()
        fit = scaling_lab.fit_exponent(rows)
    except NuclabError as exc:
        fit_error = str(exc)
    passed = fit is not None and abs(fit.slope - target) <= tol
    summary = {
        "config": cfg.model_dump(),
        "seed": seed,
        "n_rows": len(rows),
        "fit": fit.to_dict() if fit else None,
        "fit_error": fit_error,
        "target_slope": target,
        "tolerance": tol,
        "pass": passed,
        "flagged": [r.to_dict() for r in rows if r.flagged],
        "branches": [r.branch for r in rows],
    }
    write_json(out / "summary.json", summary)
    if rows:
        write_sweep_plot(out / "plot.svg", rows, fit, target, f"d={cfg.d}, nu={np.round(cfg.nu, 4).tolist()}")
    if fit is None and not rows:
        return EXIT_OK
    return EXIT_OK if passed else EXIT_FAIL


def cmd_dichotomy(cfg: DichotomyConfig, out: Path, args) -> int:
    if cfg.n_steps < 2:
        raise UsageError("the direction path needs at least 2 steps")
    path = scaling_lab.great_circle_path(cfg.d, math.radians(cfg.start_angle_deg), cfg.n_steps)
    seed = cfg.seed if args.seed is None else args.seed
    rep = scaling_lab.dichotomy_scan(cfg.d, cfg.a, cfg.mu, path, cfg.method, seed)
    write_csv(out / "scan.csv", ["nu_1", "nu_d", "dist", "theta", "branch", "total", "proxy"],
              [[float(v[0]), float(v[-1]), rep.dist[i], rep.theta[i], rep.branch[i], rep.total[i], rep.proxy[i]]
               for i, v in enumerate(path)])
    step = abs(abs(float(path[0][0])) - abs(float(path[1][0])))
    result = rep.to_dict()
    result.update(config=cfg.model_dump(), grid_step_nu1=step)
    if rep.crossover_index is not None:
        i = rep.crossover_index
        result["crossover_nu1"] = [abs(float(path[i][0])), abs(float(path[i + 1][0]))]
    write_json(out / "crossover.json", result)
    return EXIT_OK if (rep.brackets_threshold and rep.final_le_first) else EXIT_FAIL


def cmd_solve(cfg: SolveConfig, out: Path, args, base: Path | None) -> int:
    mpath = Path(cfg.mask)
    if not mpath.is_absolute() and base is not None and not mpath.exists():
        mpath = base / mpath
    if not mpath.is_file():
        raise UsageError(f"mask file {cfg.mask!r} not found")
    try:
        mask = VoxelMask.load(mpath)
    except NuclabError as exc:
        raise UsageError(f"cannot read mask: {exc}")
    if len(cfg.nu) != mask.d:
        raise UsageError("nu has the wrong dimension for this mask")
    try:
        grid = field_solver.grid_of(mask)
    except NuclabError as exc:
        raise UsageError(f"mask grid is not solvable: {exc}")
    G = RankOneTensor(cfg.a, cfg.nu)
    tol = cfg.tol if args.tolerance is None else args.tolerance
    rep = field_solver.minimize_elastic(mask, G, grid, tol, cfg.max_iter)
    result = {"report": rep.to_dict(), "mask": mask.sidecar(), "config": cfg.model_dump()}
    ok = rep.converged
    if cfg.oracle or args.oracle:
        n = int(np.prod(grid.node_shape))
        cap = field_solver._dense_cap(grid.d)
        if n > cap:
            raise UsageError(f"dense oracle limited to {cap} nodes, grid has {n}")
        ref = field_solver.dense_oracle(mask, G, grid)
        # relative gap, floored so that two (near) zero energies compare as equal
        scale = max(abs(ref), 1e-12 * G.norm ** 2 * mask.volume)
        gap = abs(rep.energy - ref) / scale
        result["oracle"] = {"energy": ref, "relative_gap": gap, "tolerance": cfg.oracle_tolerance}
        ok = ok and gap <= cfg.oracle_tolerance
    write_json(out / "solve.json", result)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_cages(cfg: CagesConfig, out: Path, args) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    results, failures = [], []
    for nu1 in cfg.nu1_values():
        gamma = nu1 / 50.0 if cfg.gamma_override is None else cfg.gamma_override
        for k in cfg.sigma_factors:
            sigma = k * gamma
            cage = geometry.build_cages(nu1, sigma, gamma=cfg.gamma_override)
            res = geometry.verify_cage_inclusions(cage, cfg.n_samples, seed)
            entry = {"nu1": nu1, "sigma": sigma, "gamma": gamma, **res}
            results.append(entry)
            if not res["holds"]:
                failures.append(entry)
    write_json(out / "cages.json", {"config": cfg.model_dump(), "n_checked": len(results),
                                    "n_violations": len(failures), "failures": failures, "results": results})
    return EXIT_OK if not failures else EXIT_FAIL


def _reflect_item(item: ReflectItem):
    a = np.asarray(item.a, dtype=float)
    if item.kind == "halfball":
        fld, shape, _ = constructions.small_volume_construction(item.mu, RankOneTensor(a, item.nu), item.d)
        return fld, shape
    if item.mu is not None:
        _, fld, shape = constructions.build_lens(item.d, item.mu, item.nu, a)
        return fld, shape
    fld = constructions.lens_field(item.d, item.H, item.L, item.nu, a)
    return fld, fld.shape


def random_floor_masks(d: int, n: int, seed: int, side: int = 12, max_cells: int = 40) -> list[VoxelMask]:
    """Seeded random connected masks touching the boundary plane."""
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, d, i])
        shape = (side,) * (d - 1) + (side // 2,)
        start = tuple([side // 2] * (d - 1) + [0])
        occ = grow_blob(rng, shape, start, int(rng.integers(1, max_cells + 1)))
        out.append(VoxelMask(0.1, np.zeros(d), occ))
    return out


def cmd_reflect(cfg: ReflectConfig, out: Path, args) -> int:
    import warnings

    seed = cfg.seed if args.seed is None else args.seed
    results, failures = [], []
    for i, item in enumerate(cfg.configurations):
        fld, shape = _reflect_item(item)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, _, rep = constructions.reflect(fld, shape, seed=seed)
        entry = {"index": i, "item": item.model_dump(), **rep.to_dict()}
        results.append(entry)
        if not (rep.sandwich_holds and rep.trace_ok and rep.doubling_rel_err <= cfg.doubling_tol):
            failures.append(entry)
    traces = []
    for d in cfg.mask_dims:
        for j, m in enumerate(random_floor_masks(d, cfg.n_masks, seed)):
            chk = constructions.flat_trace_inequality_check(m)
            traces.append({"d": d, "index": j, **chk})
            if not chk["holds"]:
                failures.append({"d": d, "index": j, "mask": m.sidecar(), **chk})
    write_json(out / "reflect.json", {"config": cfg.model_dump(), "configurations": results,
                                      "flat_trace": {"n_masks": len(traces),
                                                     "n_violations": sum(not t["holds"] for t in traces)},
                                      "failures": failures})
    return EXIT_OK if not failures else EXIT_FAIL


def cmd_probe(cfg: ProbeConfig, out: Path, args) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    results, failures = [], []
    for nu1 in cfg.nu1:
        nu = np.zeros(cfg.d)
        nu[0], nu[-1] = nu1, -math.sqrt(max(0.0, 1 - nu1 ** 2))
        res = scaling_lab.probe_lower_bound(cfg.d, nu, cfg.n_samples, cfg.rho, seed=seed)
        entry = {"nu1": nu1, "min_ratio": res["min_ratio"], "n_finite": res["n_finite"],
                 "histogram": res["histogram"], "gamma": res["gamma"], "c": res["c"], "h": res["h"]}
        ok = res["n_finite"] > 0 and res["min_ratio"] > 0
        if cfg.check_doubling:
            res2 = scaling_lab.probe_lower_bound(cfg.d, nu, 2 * cfg.n_samples, cfg.rho, seed=seed)
            rel = abs(res2["min_ratio"] - res["min_ratio"]) / res["min_ratio"] if ok else math.inf
            entry.update(min_ratio_doubled=res2["min_ratio"], doubling_rel_change=rel)
            ok = ok and rel <= cfg.stability
        entry["holds"] = ok
        results.append(entry)
        if not ok:
            failures.append(entry)
    write_json(out / "probe.json", {"config": cfg.model_dump(), "results": results, "failures": failures})
    return EXIT_OK if not failures else EXIT_FAIL


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nuclab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SCHEMAS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="config file path or bundled config name")
        s.add_argument("--out", help="output directory (default ./nuclab_out/<command>)")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--threads", type=int, default=None,
                       help="worker threads for sweeps (default: NUCLAB_THREADS or 1)")
        s.add_argument("--oracle", action="store_true", help="cross-check solves with the dense oracle")
        s.add_argument("--tolerance", type=float, default=None,
                       help="override the configured pass tolerance")
    sub.add_parser("list-configs")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "list-configs":
        print("\n".join(bundled_configs()))
        return EXIT_OK
    try:
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be positive")
        cfg, base = load_config(args.command, args.config)
        out = Path(args.out) if args.out else Path("nuclab_out") / args.command
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            code = cmd_solve(cfg, out, args, base)
        else:
            code = globals()[f"cmd_{args.command}"](cfg, out, args)
    except UsageError as exc:
        print(f"nuclab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NuclabError as exc:
        print(f"nuclab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    status = "pass" if code == EXIT_OK else "FAIL"
    print(f"nuclab {args.command}: {status} (outputs in {out})")
    return code


if __name__ == "__main__":
    sys.exit(main())
