"""Batch runner: ``transportlab run <config> [--out DIR] [--jobs N] [--verify]``.

Exit codes: 0 success, 2 configuration error (only an error report is
written), 3 numerical guard tripped (outputs are still written).
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import platform
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import dynamics as dyn
from . import exponents as ex
from . import tracemap as tm
from . import transfer as tr
from .config import ConfigError, ExperimentConfig, parse_config

EXIT_OK, EXIT_CONFIG, EXIT_GUARD = 0, 2, 3


def fmt(x) -> str:
    return format(float(x), ".17g")


def _json(obj, indent: int = 0) -> str:
    """JSON text with every float written to 17 significant digits (non-finite -> string)."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}{_json(str(k))}: {_json(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + _json(v, indent + 1) for v in seq) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else f'"{float(obj)}"'
    if isinstance(obj, complex):
        return _json([obj.real, obj.imag])
    import json
    return json.dumps(str(obj))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _versions() -> dict:
    import mpmath
    import numba
    import scipy
    return {"transportlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "mpmath": mpmath.__version__, "python": platform.python_version()}


def _box(cfg: ExperimentConfig) -> ex.BoxPolicy:
    b = cfg["box"]
    return ex.BoxPolicy(b["tol"], b["margin"], b["L_max"], b["L"])


def _profile_task(args):
    method, psi, spec, T, L = args
    return dyn.METHODS[method](psi, spec, T, L)


def _profiles(cfg, spec, psi, Ts, method, jobs):
    box = _box(cfg)
    tasks = [(method, psi, spec, float(T), box.half_width(spec, psi, float(T))) for T in Ts]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_profile_task, tasks))
    return [_profile_task(t) for t in tasks]


class Runner:
    def __init__(self, cfg: ExperimentConfig, out: Path, jobs: int = 1, verify: bool = False):
        self.cfg, self.out, self.jobs, self.verify = cfg, out, max(1, jobs), verify
        self.files: list[str] = []
        self.guard: list[str] = []

    def write(self, name: str, text: str) -> None:
        _atomic_write(self.out / name, text)
        self.files.append(name)

    def check_leakage(self, prof: dyn.TimeAverageProfile) -> None:
        g = self.cfg["box"]["leakage_guard"]
        if prof.leakage > g * prof.norm2:
            self.guard.append(f"boundary mass {prof.leakage:.3g} at T={prof.T:g} exceeds guard {g:g}")

    # one method per experiment kind ------------------------------------

    def profile(self, spec, psi):
        T = self.cfg.single_T()
        method = self.cfg["experiment"]["method"]
        (prof,) = _profiles(self.cfg, spec, psi, [T], method, 1)
        self.check_leakage(prof)
        cols = ["n", f"a_{method.replace('-', '_')}"]
        data = [prof.values]
        if self.verify or self.cfg["experiment"]["cross_check"]:
            other = "time-quadrature" if method != "time-quadrature" else "resolvent"
            q = dyn.METHODS[other](psi, spec, T, prof.L)
            cols.append(f"a_{other.replace('-', '_').replace('time_', '')}")
            data.append(q.values)
            if np.abs(q.values - prof.values).sum() > 1e-3 * prof.norm2:
                self.guard.append("cross-method profiles disagree beyond 1e-3")
        rows = [[int(n)] + [float(d[i]) for d in data] for i, n in enumerate(prof.sites)]
        self.write("profile.csv", _csv(cols, rows))

    def _moment_rows(self, profiles, ps):
        rows = []
        for prof in profiles:
            self.check_leakage(prof)
            for p in ps:
                rows.append([prof.T, p, dyn.moment(prof, p), dyn.moment_error(prof, p)])
        self.write("moments.csv", _csv(["T", "p", "moment", "err_bar"], rows))

    def moments(self, spec, psi):
        ps = self.cfg["parameters"]["p"]
        profiles = _profiles(self.cfg, spec, psi, self.cfg.T_grid(), self.cfg["experiment"]["method"], self.jobs)
        self._moment_rows(profiles, ps)

    def beta(self, spec, psi):
        ps = self.cfg["parameters"]["p"]
        Ts = self.cfg.T_grid()
        method = self.cfg["experiment"]["method"]
        profiles = _profiles(self.cfg, spec, psi, Ts, method, self.jobs)
        self._moment_rows(profiles, ps)
        fits = ex.beta_fits(spec, psi, ps, Ts, method, _box(self.cfg), profiles)
        self.write("exponents.json", _json({"beta": [_fit_dict(f) for f in fits.values()]}) + "\n")

    def s_alpha(self, spec, psi):
        a = self.cfg["parameters"]["alpha"]
        Ts = self.cfg.T_grid()
        profiles = _profiles(self.cfg, spec, psi, Ts, self.cfg["experiment"]["method"], self.jobs)
        for prof in profiles:
            self.check_leakage(prof)
        fit = ex.s_alpha_fit(spec, psi, a, Ts, profiles=profiles)
        self.write("exponents.json", _json({"s_alpha": {
            "alpha": a, "T": fit.T, "P": fit.P, "S_minus": fit.S_minus, "S_plus": fit.S_plus,
            "floored": fit.floored, "window": "upper half of the T grid"}}) + "\n")

    def premise_scan(self, spec, psi):
        par = self.cfg["parameters"]
        Ts = self.cfg.T_grid()
        omegas = np.arange(par["omegas"]) / par["omegas"]
        out = []
        for m in par["m"]:
            sc = ex.upper_bound_premise_scan(spec, par["alpha"], m, par["C"], Ts, omegas,
                                             two_sided=par["two_sided"])
            out.append({"m": m, "mode": sc.mode, "K": sc.K, "T": sc.T, "uniform": sc.uniform,
                        "values": sc.values, "underflow_nodes": sc.underflow, "omegas": sc.omegas})
        self.write("exponents.json", _json({"alpha": par["alpha"], "C": par["C"], "premise": out}) + "\n")

    def certificate(self, spec, psi):
        par = self.cfg["parameters"]
        cert = ex.lower_bound_certificate(
            spec, psi, self.cfg["energy"]["intervals"], par["alpha"], par["C"], self.cfg.single_T(),
            eps0=par["eps0"], p=par["p"][0], measure=par["measure"], box=_box(self.cfg))
        d = cert.to_dict()
        d["support_radius"] = psi.radius
        self.write("certificate.json", _json(d) + "\n")

    def tracemap(self, spec, psi):
        par = self.cfg["parameters"]
        lam = spec.coupling
        rows, summary = [], {}
        for k in range(par["k_min"], par["k_max"] + 1):
            band = tm.band_zeros(lam, k, par["delta"])
            rb = tm.radius_bounds(band, par["delta"])
            for j, (e, dv, r, R) in enumerate(zip(band.zeros, band.derivatives, rb.r_proxy, rb.R_proxy)):
                rows.append([k, j, float(e), float(dv), float(r), float(R)])
            summary[str(k)] = {"q": band.q, "min_derivative": float(band.derivatives.min()),
                               "r_min": rb.r_min, "R_max": rb.R_max}
        self.write("bands.csv", _csv(["k", "j", "zero", "derivative", "r_proxy", "R_proxy"], rows))
        res = {"lambda": lam, "delta": par["delta"], "bands": summary}
        if lam > 0:
            eta = tm.eta_constant(lam)
            res["eta"] = {"a": eta.a, "eta": eta.eta, "exponent": eta.exponent}
            ks = range(par["k_min"], par["k_max"] + 1)
            if len(ks) >= 3:
                radii = {int(k): v["R_max"] for k, v in summary.items()}
                res["upper_exponent_estimate"] = tm.upper_exponent_estimate(lam, par["delta"], ks, radii)
        self.write("exponents.json", _json(res) + "\n")

    def band_scan(self, spec, psi):
        e = self.cfg["energy"]
        grid = np.arange(e["E_min"], e["E_max"] + e["step"] / 2, e["step"])
        sc = tr.bounded_energy_scan(spec, grid, e["n_max"], e["threshold"])
        cand = set(sc.candidates.tolist())
        rows = [[float(E), float(s), int(i in cand), int(bool(f))]
                for i, (E, s, f) in enumerate(zip(sc.energies, sc.sup_norms, sc.saturated))]
        self.write("scan.csv", _csv(["E", "sup_norm", "candidate", "saturated"], rows))

    def critical_scan(self, spec, psi):
        e = self.cfg["energy"]
        grid = np.arange(e["E_min"], e["E_max"] + e["step"] / 2, e["step"])
        rows = []
        for E in grid:
            ok, d = tr.critical_energy_test(spec.block_plus, spec.block_minus, float(E), e["tol"])
            rows.append([float(E), d.commutator_norm, d.trace_plus.real, d.trace_minus.real, int(ok)])
        self.write("scan.csv", _csv(["E", "commutator", "trace_plus", "trace_minus", "critical"], rows))

    def sublinearity(self, spec, psi):
        st = self.cfg["state"]
        psi2 = self.cfg.state("sites2")
        rep = ex.sublinearity_check(spec, psi, psi2, st["x"], st["y"], self.cfg["parameters"]["p"][0],
                                    self.cfg.T_grid(), self.cfg["parameters"]["slack"],
                                    self.cfg["experiment"]["method"], _box(self.cfg))
        self.write("exponents.json", _json({"sublinearity": {
            "beta_plus": rep.beta_plus, "slack": rep.slack, "passes": rep.passes,
            "pointwise_max_violation": rep.pointwise_max_violation,
            "pointwise_holds": rep.pointwise_holds, "samples": rep.samples}}) + "\n")
        if not rep.pointwise_holds:
            self.guard.append("pointwise inequality violated")

    def run(self) -> int:
        spec = self.cfg.potential()
        psi = self.cfg.state()
        getattr(self, self.cfg.kind)(spec, psi)
        meta = {"config": self.cfg.to_dict(), "seeds": {"experiment": self.cfg["experiment"]["seed"],
                                                        "potential": self.cfg["potential"]["rng_seed"]},
                "versions": _versions(), "outputs": sorted(self.files), "guard": self.guard,
                "verify": self.verify}
        self.write("run_meta.json", _json(meta) + "\n")
        return EXIT_GUARD if self.guard else EXIT_OK


def _fit_dict(f: ex.ExponentFit) -> dict:
    return {"p": f.p, "T": f.T, "moments": f.moments, "slope": f.slope, "slope_all": f.slope_all,
            "beta_minus_proxy": f.beta_minus, "beta_plus_proxy": f.beta_plus, "residual": f.residual,
            "window": list(f.window), "meta": f.meta}


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, jobs: int = 1, verify: bool = False) -> int:
    out = Path(out if out is not None else cfg["experiment"]["output"])
    return Runner(cfg, out, jobs, verify).run()


def run_text(text: str, out: str | Path, jobs: int = 1, verify: bool = False) -> int:
    """Parse and run; a bad config leaves only `config_errors.txt` in `out`."""
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        _atomic_write(Path(out) / "config_errors.txt", "\n".join(exc.format_lines()) + "\n")
        return EXIT_CONFIG
    return run_experiment(cfg, out, jobs, verify)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="transportlab")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("config")
    r.add_argument("--out", default=None)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--verify", action="store_true", help="enable cross-method oracles")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    args = ap.parse_args(argv)

    text = Path(args.config).read_text()
    if args.cmd == "validate":
        try:
            parse_config(text)
        except ConfigError as exc:
            print("\n".join(exc.format_lines()), file=sys.stderr)
            return EXIT_CONFIG
        print("ok")
        return EXIT_OK
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        out = Path(args.out or "out")
        _atomic_write(out / "config_errors.txt", "\n".join(exc.format_lines()) + "\n")
        print("\n".join(exc.format_lines()), file=sys.stderr)
        return EXIT_CONFIG
    code = run_experiment(cfg, args.out, args.jobs, args.verify)
    return code


if __name__ == "__main__":
    sys.exit(main())
