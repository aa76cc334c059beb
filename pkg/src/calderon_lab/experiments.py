"""Configuration, admissible-pair sampling, stability sweeps and result files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from .admittivity import (AffineComplexScalar, Admittivity, AnisotropyField, sup_norm_diff,
                          validate_apriori)
from .domain import AprioriData, AugmentedDomain, augment, build_layered_domain
from .dtn import assemble_dtn, boundary_space, build_fractional_gram, op_norm_diff
from .errors import IoError, LabError, LayerMismatch, ParseError, SamplingExhausted, ValidationError
from .fem import assemble, solve_dirichlet
from .green import asymptotic_exponent_fit, fit_slope
from .mesh import AUGMENTED, Refinement, StructuredMesh, build_mesh
from .probes import (PoleGrid, default_pole_grids, gauss_grid, misfit, peeling_split,
                     three_sphere_check)

OUTPUT_ENV = "CALDERON_LAB_OUTPUT"
MODES = ("lipschitz", "misfit", "asymptotic", "peeling", "three_sphere")
CSV_COLUMNS = ("mode", "index", "level", "t", "E", "eps", "J", "E_over_eps", "E_over_sqrtJ",
               "mesh_hash", "config_hash", "extra")

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_pair = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_layer = {
    "type": "object",
    "additionalProperties": False,
    "required": ["s_r"],
    "properties": {
        "s_r": {"type": "number"}, "s_i": {"type": "number"},
        "S_r": _vec3, "S_i": _vec3,
    },
}
_matrix = {"type": "array", "items": _vec3, "minItems": 3, "maxItems": 3}
_aniso = {
    "type": "object",
    "additionalProperties": False,
    "required": ["A0"],
    "properties": {"A0": _matrix, "linear": {"type": "array", "items": _matrix, "minItems": 3, "maxItems": 3}},
}
_adm = {
    "type": "object",
    "additionalProperties": False,
    "required": ["layers"],
    "properties": {"layers": {"type": "array", "items": _layer, "minItems": 1}, "anisotropy": _aniso},
}
_grid = {
    "type": "object",
    "additionalProperties": False,
    "required": ["lo", "hi"],
    "properties": {"lo": _vec3, "hi": _vec3, "n": {"type": "integer", "minimum": 1}},
}
CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["geometry", "apriori"],
    "properties": {
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "required": ["boxes", "portions", "pitch", "slab_depth"],
            "properties": {
                "boxes": {"type": "array", "minItems": 2,
                          "items": {"type": "array", "items": _vec3, "minItems": 2, "maxItems": 2}},
                "portions": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False,
                    "required": ["owner", "face", "rect"],
                    "properties": {
                        "owner": {"type": "integer", "minimum": 0},
                        "face": {"enum": ["-x", "+x", "-y", "+y", "-z", "+z"]},
                        "rect": {"type": "array", "items": _pair, "minItems": 2, "maxItems": 2},
                    }}},
                "pitch": {"type": "number", "exclusiveMinimum": 0},
                "slab_depth": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "apriori": {
            "type": "object",
            "additionalProperties": False,
            "required": ["r0"],
            "properties": {
                "r0": {"type": "number", "exclusiveMinimum": 0},
                "M0": {"type": "number", "exclusiveMinimum": 0},
                "lam": {"type": "number", "exclusiveMinimum": 1},
                "gamma_bar": {"type": "number", "exclusiveMinimum": 1},
                "A_bar": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "admittivity": {
            "type": "object",
            "additionalProperties": False,
            "required": ["pair"],
            "properties": {"pair": {"type": "array", "items": _adm, "minItems": 2, "maxItems": 2}},
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pairs": {"type": "integer", "minimum": 0},
                "t": {"type": "number", "minimum": 0},
                "t_ladder": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "gamma_real": _pair,
                "gamma_imag": _pair,
                "gradient": {"type": "number", "minimum": 0},
                "anisotropy": _aniso,
            },
        },
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "resolution": {"type": "integer", "minimum": 1},
                "levels": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "refine": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False, "required": ["point", "levels"],
                    "properties": {"point": _vec3, "levels": {"type": "integer", "minimum": 0},
                                   "width": {"type": "number", "exclusiveMinimum": 0}}}},
            },
        },
        "poles": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"grid_y": _grid, "grid_z": _grid},
        },
        "probes": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "interface": {"type": "integer", "minimum": 0},
                "M": {"type": "integer", "minimum": 1},
                "ladder": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "variant": {"enum": ["value", "mixed_nn"]},
                "mixed": {"type": "boolean"},
                "three_sphere": {
                    "type": "object", "additionalProperties": False, "required": ["x0", "radii"],
                    "properties": {
                        "x0": _vec3,
                        "radii": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                        "s": {"type": "number", "exclusiveMinimum": 0},
                        "samples": {"type": "integer", "minimum": 1},
                    }},
            },
        },
        "visibility": {"enum": ["either", "both"]},
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "output": {"type": "string"},
    },
}


@dataclass
class ExperimentConfig:
    raw: dict
    domain: AugmentedDomain
    pair: tuple[Admittivity, Admittivity] | None
    seed: int
    output: Path

    @property
    def apriori(self) -> AprioriData:
        return self.domain.base.apriori

    @property
    def sampler(self) -> dict:
        return self.raw.get("sampler", {})

    @property
    def mesh_spec(self) -> dict:
        return self.raw.get("mesh", {})

    @property
    def probes(self) -> dict:
        return self.raw.get("probes", {})

    @property
    def workers(self) -> int:
        return int(self.raw.get("workers", 1))

    @property
    def visibility(self) -> str:
        return self.raw.get("visibility", "either")

    @property
    def resolution(self) -> int:
        return int(self.mesh_spec.get("resolution", round(1 / self.domain.pitch)))

    @property
    def levels(self) -> list[int]:
        return [int(v) for v in self.mesh_spec.get("levels", [self.resolution])]

    def refinements(self) -> list[Refinement]:
        return [Refinement(tuple(r["point"]), int(r["levels"]), float(r.get("width", 2.0)))
                for r in self.mesh_spec.get("refine", [])]

    def build_mesh(self, resolution: int | None = None) -> StructuredMesh:
        return build_mesh(self.domain, resolution or self.resolution, self.refinements())

    def digest(self) -> str:
        blob = json.dumps({**self.raw, "seed": self.seed}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def pole_grids(self) -> tuple[PoleGrid, PoleGrid]:
        spec = self.raw.get("poles", {})
        if "grid_y" in spec and "grid_z" in spec:
            gy, gz = spec["grid_y"], spec["grid_z"]
            return (gauss_grid(gy["lo"], gy["hi"], gy.get("n", 3)),
                    gauss_grid(gz["lo"], gz["hi"], gz.get("n", 3)))
        return default_pole_grids(self.domain)


def _check_admittivity(adm: Admittivity, apriori: AprioriData, domain, visibility: str,
                       margin: float = 1.0) -> None:
    try:
        report = validate_apriori(adm, apriori, domain, visibility=visibility, margin=margin)
    except LayerMismatch as exc:
        raise ValidationError("Layer count", str(exc)) from exc
    if not report.passed:
        bad = report.failures()[0]
        raise ValidationError(bad.clause, bad.detail)


def config_from_dict(raw: dict, seed: int | None = None) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParseError(f"{where}: {exc.message}") from exc
    geo = raw["geometry"]
    ap = raw["apriori"]
    apriori = AprioriData(n_layers=len(geo["boxes"]) - 1, **ap)
    try:
        base = build_layered_domain([tuple(map(tuple, b)) for b in geo["boxes"]], geo["portions"],
                                    geo["pitch"], apriori)
        domain = augment(base, geo["slab_depth"])
    except LabError as exc:
        raise ValidationError("Geometry", f"{type(exc).__name__}: {exc}") from exc
    pair = None
    if "admittivity" in raw:
        pair = tuple(Admittivity.from_dict(d) for d in raw["admittivity"]["pair"])
        for adm in pair:
            _check_admittivity(adm, apriori, base, raw.get("visibility", "either"))
    seed = int(raw.get("seed", 0)) if seed is None else int(seed)
    out = Path(os.environ.get(OUTPUT_ENV) or raw.get("output", "results"))
    return ExperimentConfig(raw, domain, pair, seed, out)


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(raw, seed)


def _uniform_complex_affine(rng, re_range, im_range, grad) -> AffineComplexScalar:
    s = complex(rng.uniform(*re_range), rng.uniform(*im_range))
    S = rng.uniform(-grad, grad, 3) + 1j * rng.uniform(-grad, grad, 3)
    return AffineComplexScalar(s, tuple(S))


def draw_perturbation(rng, n_layers: int, grad: float = 0.2) -> tuple[AffineComplexScalar, ...]:
    return tuple(_uniform_complex_affine(rng, (-1, 1), (-1, 1), grad) for _ in range(n_layers))


def sample_admissible_pair(apriori: AprioriData, domain, seed, t: float,
                           gamma_real=(1.0, 5.0), gamma_imag=(0.2, 2.0), gradient: float = 0.2,
                           anisotropy: AnisotropyField | None = None, margin: float = 1.1,
                           visibility: str = "either", max_tries: int = 10_000,
                           return_delta: bool = False):
    """Random pair adm2 = adm1 + t * delta with both members validated with margin.

    ``seed`` is anything ``numpy.random.default_rng`` accepts. The first
    member has layer gammas with real offsets in ``gamma_real``, imaginary
    offsets in ``gamma_imag`` and gradient components up to ``gradient``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    base = domain.base if isinstance(domain, AugmentedDomain) else domain
    aniso = anisotropy if anisotropy is not None else AnisotropyField.identity()
    rng = np.random.default_rng(seed)
    n = apriori.n_layers + 1
    for _ in range(max_tries):
        layers = tuple(_uniform_complex_affine(rng, gamma_real, gamma_imag, gradient) for _ in range(n))
        delta = draw_perturbation(rng, n)
        adm1 = Admittivity(layers, aniso)
        adm2 = adm1.perturbed(delta, t)
        try:
            _check_admittivity(adm1, apriori, base, visibility, margin)
            _check_admittivity(adm2, apriori, base, visibility, margin)
        except ValidationError:
            continue
        return (adm1, adm2, delta) if return_delta else (adm1, adm2)
    raise SamplingExhausted(f"no admissible pair after {max_tries} draws")


@dataclass
class ExperimentRecord:
    mode: str
    index: int
    level: int
    t: float
    E: float = float("nan")
    eps: float = float("nan")
    J: float = float("nan")
    extra: dict = field(default_factory=dict)
    mesh_hash: str = ""
    config_hash: str = ""

    @property
    def E_over_eps(self) -> float:
        return _ratio(self.E, self.eps)

    @property
    def E_over_sqrtJ(self) -> float:
        return _ratio(self.E, math.sqrt(self.J) if self.J >= 0 else float("nan"))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "index": self.index, "level": self.level, "t": self.t,
            "E": self.E, "eps": self.eps, "J": self.J,
            "E_over_eps": self.E_over_eps, "E_over_sqrtJ": self.E_over_sqrtJ,
            "mesh_hash": self.mesh_hash, "config_hash": self.config_hash,
            "extra": self.extra,
        }


def _ratio(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return float("nan")
    if b == 0:
        return float("nan") if a == 0 else float("inf")
    return a / b


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in np.asarray(v).tolist()] if isinstance(v, np.ndarray) else [
            _jsonable(x) for x in v]
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.complexfloating):
        return [float(v.real), float(v.imag)]
    return v


def _map(cfg: ExperimentConfig, fn, items):
    items = list(items)
    if cfg.workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, items))


def _sampler_args(cfg: ExperimentConfig) -> dict:
    s = cfg.sampler
    aniso = AnisotropyField.from_dict(s["anisotropy"]) if "anisotropy" in s else None
    return {
        "gamma_real": tuple(s.get("gamma_real", (1.0, 5.0))),
        "gamma_imag": tuple(s.get("gamma_imag", (0.2, 2.0))),
        "gradient": float(s.get("gradient", 0.2)),
        "anisotropy": aniso,
        "visibility": cfg.visibility,
    }


def config_pairs(cfg: ExperimentConfig) -> list[tuple[Admittivity, Admittivity]]:
    """The explicit pair (if any) followed by the sampled ones, in a fixed order."""
    pairs = [cfg.pair] if cfg.pair is not None else []
    n = int(cfg.sampler.get("pairs", 0 if pairs else 1))
    t = float(cfg.sampler.get("t", 0.1))
    seeds = np.random.SeedSequence(cfg.seed).spawn(n)
    for ss in seeds:
        pairs.append(sample_admissible_pair(cfg.apriori, cfg.domain, ss, t, **_sampler_args(cfg)))
    if not pairs:
        raise ValidationError("Admittivity", "no explicit pair and a sampler with zero pairs")
    return pairs


def _ladder_base(cfg: ExperimentConfig):
    ss = np.random.SeedSequence(cfg.seed).spawn(1)[0]
    t = float(cfg.sampler.get("t", 0.1))
    adm1, _, delta = sample_admissible_pair(cfg.apriori, cfg.domain, ss, t, return_delta=True,
                                            **_sampler_args(cfg))
    return adm1, delta


def _stability(cfg: ExperimentConfig, with_misfit: bool) -> list[ExperimentRecord]:
    mode = "misfit" if with_misfit else "lipschitz"
    pairs = config_pairs(cfg)
    chash = cfg.digest()
    t = float(cfg.sampler.get("t", 0.1)) if cfg.pair is None else float("nan")
    ladder = [float(v) for v in cfg.sampler.get("t_ladder", [])]
    base = cfg.domain.base
    records = []
    for level in cfg.levels:
        mesh = cfg.build_mesh(level)
        space = boundary_space(mesh)
        gram = build_fractional_gram(space)
        grids = cfg.pole_grids() if with_misfit else None

        def one(item):
            i, (adm1, adm2), tt, kind = item
            L1 = assemble_dtn(adm1, mesh, space)
            L2 = assemble_dtn(adm2, mesh, space)
            rec = ExperimentRecord(mode, i, level, tt, E=sup_norm_diff(adm1, adm2, base).E,
                                   eps=op_norm_diff(L1, L2, gram), mesh_hash=mesh.digest(),
                                   config_hash=chash, extra={"kind": kind})
            if with_misfit:
                rec.J = misfit(adm1, adm2, mesh, *grids).J
            return rec

        items = [(i, p, t, "pair") for i, p in enumerate(pairs)]
        if ladder:
            adm1, delta = _ladder_base(cfg)
            off = len(items)
            items += [(off + j, (adm1, adm1.perturbed(delta, tt)), tt, "t_ladder")
                      for j, tt in enumerate(ladder)]
        recs = _map(cfg, one, items)
        lad = [r for r in recs if r.extra["kind"] == "t_ladder"]
        if len(lad) > 1:
            ts = [r.t for r in lad]
            s_eps = fit_slope(ts, [r.eps for r in lad])
            s_J = fit_slope(ts, [r.J for r in lad]) if with_misfit else float("nan")
            for r in lad:
                r.extra["slope_eps"] = s_eps
                if with_misfit:
                    r.extra["slope_J"] = s_J
        records += recs
    return records


def _first_adm(cfg: ExperimentConfig) -> tuple[Admittivity, Admittivity]:
    return config_pairs(cfg)[0]


def _asymptotic(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    p = cfg.probes
    adm = _first_adm(cfg)[0]
    mesh = cfg.build_mesh()
    interface = int(p.get("interface", 1))
    ladder = p.get("ladder", [cfg.apriori.r0 / 16, cfg.apriori.r0 / 32, cfg.apriori.r0 / 64])
    rep = asymptotic_exponent_fit(adm, mesh, interface, ladder, mixed=bool(p.get("mixed", True)))
    chash = cfg.digest()
    out = []
    for i, r in enumerate(rep.radii):
        out.append(ExperimentRecord("asymptotic", i, mesh.resolution, float("nan"), mesh_hash=mesh.digest(),
                                    config_hash=chash, extra={
            "r": r, "remainder": rep.remainder[i], "remainder_grad": rep.remainder_grad[i],
            "remainder_mixed": rep.remainder_mixed[i], "theta1": rep.theta1, "theta2": rep.theta2,
            "theta3": rep.theta3, "monotone": rep.monotone, "interface": interface}))
    return out


def _peeling(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    p = cfg.probes
    mesh = cfg.build_mesh()
    M = int(p.get("M", 1))
    r0 = cfg.apriori.r0
    ladder = p.get("ladder", [r0 / 4, r0 / 8, r0 / 16])
    variant = p.get("variant", "value")
    chash = cfg.digest()

    def one(item):
        k, (adm1, adm2) = item
        rep = peeling_split(adm1, adm2, mesh, M, ladder, variant)
        return [ExperimentRecord("peeling", k * len(ladder) + i, mesh.resolution, float("nan"), E=rep.E,
                                 mesh_hash=mesh.digest(), config_hash=chash, extra={
            "pair": k, "r": rep.radii[i], "I1": complex(rep.I1[i]), "I2": complex(rep.I2[i]),
            "S": complex(rep.S[i]), "rho": rep.rho, "slope_I1": rep.slope_I1,
            "caccioppoli": rep.caccioppoli[i], "variant": variant})
                for i in range(len(rep.radii))]

    return [r for group in _map(cfg, one, enumerate(config_pairs(cfg))) for r in group]


def _three_sphere(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    p = cfg.probes.get("three_sphere")
    if p is None:
        raise ValidationError("Probes", "three_sphere mode needs probes.three_sphere")
    adm = _first_adm(cfg)[0]
    mesh = cfg.build_mesh()
    sys = assemble(adm, mesh, AUGMENTED)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    r1, r2, r3 = p["radii"]
    s = float(p.get("s", 1.0))
    chash = cfg.digest()
    out = []
    for i in range(int(p.get("samples", 10))):
        c = rng.normal(size=10) + 1j * rng.normal(size=10)

        def data(x, c=c):
            x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
            basis = np.stack([np.ones_like(x1), x1, x2, x3, x1 * x2, x2 * x3, x1 * x3,
                              x1 ** 2 - x2 ** 2, x2 ** 2 - x3 ** 2, x1 * x2 * x3], axis=1)
            return basis @ c

        v = solve_dirichlet(sys, data)
        rep = three_sphere_check(v, p["x0"], r1, r2, r3, s)
        out.append(ExperimentRecord("three_sphere", i, mesh.resolution, float("nan"),
                                    mesh_hash=mesh.digest(), config_hash=chash, extra={
            "norms": list(rep.norms), "delta": rep.delta, "C_min": rep.C_min, "s": s}))
    return out


def run_sweep(cfg: ExperimentConfig, mode: str) -> list[ExperimentRecord]:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    if mode == "lipschitz":
        return _stability(cfg, with_misfit=False)
    if mode == "misfit":
        return _stability(cfg, with_misfit=True)
    if mode == "asymptotic":
        return _asymptotic(cfg)
    if mode == "peeling":
        return _peeling(cfg)
    return _three_sphere(cfg)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_csv(records: list[ExperimentRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        d = r.to_dict()
        d["extra"] = json.dumps(_jsonable(r.extra), sort_keys=True, separators=(",", ":"))
        w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def emit_results(records: list[ExperimentRecord], directory, name: str = "sweep") -> Path:
    """Write ``<name>.csv``, one JSON per record and ``manifest.json``; returns the CSV path."""
    d = Path(directory)
    try:
        (d / "records").mkdir(parents=True, exist_ok=True)
        csv_path = d / f"{name}.csv"
        csv_path.write_text(records_csv(records), encoding="utf-8")
        files = [csv_path]
        for r in records:
            p = d / "records" / f"{name}_{r.index:04d}_{r.level}.json"
            p.write_text(json.dumps(_jsonable(r.to_dict()), sort_keys=True, indent=1))
            files.append(p)
        manifest = {
            "name": name,
            "n_records": len(records),
            "created": datetime.now(timezone.utc).isoformat(),
            "files": {str(f.relative_to(d)): _sha256(f) for f in files},
        }
        (d / f"{name}.manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return csv_path


def verify_manifest(directory, name: str = "sweep") -> bool:
    d = Path(directory)
    manifest = json.loads((d / f"{name}.manifest.json").read_text())
    return all(_sha256(d / rel) == h for rel, h in manifest["files"].items())


def summarize(records: list[ExperimentRecord]) -> dict:
    """Per-level maxima of the stability ratios and the fitted t-ladder slopes."""
    out = {}
    for level in sorted({r.level for r in records}):
        rs = [r for r in records if r.level == level]
        pairs = [r for r in rs if r.extra.get("kind") == "pair"]
        lad = [r for r in rs if r.extra.get("kind") == "t_ladder"]
        out[level] = {
            "max_E_over_eps": max((r.E_over_eps for r in pairs), default=float("nan")),
            "max_E_over_sqrtJ": max((r.E_over_sqrtJ for r in pairs), default=float("nan")),
            "slope_eps": lad[0].extra.get("slope_eps", float("nan")) if lad else float("nan"),
            "slope_J": lad[0].extra.get("slope_J", float("nan")) if lad else float("nan"),
        }
    return out
