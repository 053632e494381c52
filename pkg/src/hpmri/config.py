"""Experiment configuration: plain-text key = value files with sections.

One file drives every command; command-line flags override file values,
which override the built-in defaults.  Unknown sections or keys are
rejected with the offending line number.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .information import PriorSpec
from .kinetics import AcquisitionDesign, ModelParams
from .phantom import Cylinder, PhantomSpec, default_validation_spec

__all__ = [
    "ExperimentConfig",
    "DesignRequest",
    "SNR_LEVELS",
    "S_REF_DEFAULT",
    "read_config",
    "write_config",
]

SNR_LEVELS = (2.0, 5.0, 10.0, 15.0, 20.0)

# Peak signal of the default protocol (see reference_peak_signal); fixed
# here so noise levels do not drift with solver tolerances.
S_REF_DEFAULT = 0.6173

_MODEL_KEYS = ("T1P", "T1L", "kPL", "kLP", "kve", "nu_e", "t0bar",
               "sigmaP", "alphaP", "betaP")
_DESIGN_KEYS = ("N", "TR", "thetaP", "thetaL")
_PRIOR_KEYS = ("mean", "std")
_NOISE_KEYS = ("snr", "s_ref")
_PHANTOM_KEYS = ("dims", "spacing", "family", "cylinders", "density",
                 "voxels", "seed", "dt")
_RUN_KEYS = ("seed", "replicates", "out", "threads", "order")
_VALIDATE_KEYS = ("designs", "snr_data")

_SECTIONS = {
    "model": _MODEL_KEYS,
    "design": _DESIGN_KEYS,
    "prior": _PRIOR_KEYS,
    "noise": _NOISE_KEYS,
    "phantom": _PHANTOM_KEYS,
    "run": _RUN_KEYS,
    "validate": _VALIDATE_KEYS,
}

# Named designs accepted by the validate command; OED2 is the low-SNR
# optimum and clinical the control schedule.
DESIGN_ALIASES = {
    "oed2": (35.0, 28.0),
    "clinical": (20.0, 30.0),
}


@dataclass(frozen=True)
class DesignRequest:
    """A design to validate: a constant pair or a schedule CSV."""

    label: str
    theta_p_deg: float | None = None
    theta_l_deg: float | None = None
    csv_path: str | None = None

    def resolve(self, base: AcquisitionDesign) -> AcquisitionDesign:
        if self.csv_path is not None:
            return load_schedule_csv(self.csv_path, base)
        return base.with_angles(self.theta_p_deg, self.theta_l_deg)


@dataclass
class ExperimentConfig:
    """Everything the pipelines need, with built-in defaults."""

    model: ModelParams = field(default_factory=ModelParams)
    design: AcquisitionDesign = field(
        default_factory=lambda: AcquisitionDesign.constant())
    prior: PriorSpec = field(default_factory=PriorSpec)
    snr_list: tuple[float, ...] = SNR_LEVELS
    s_ref: float = S_REF_DEFAULT
    phantom: PhantomSpec = field(default_factory=default_validation_spec)
    phantom_dt: float = 0.15
    seed: int = 0
    replicates: int = 25
    out_dir: str = "out"
    threads: int = 1
    order: int = 5
    validate_designs: tuple[DesignRequest, ...] = (
        DesignRequest("oed2", 35.0, 28.0),
        DesignRequest("clinical", 20.0, 30.0),
    )


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _key_line_numbers(path) -> dict[tuple[str, str], int]:
    numbers = {}
    section = None
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith(("#", ";")):
                    continue
                if line.startswith("[") and line.endswith("]"):
                    section = line[1:-1].strip()
                    numbers[(section, None)] = lineno
                elif "=" in line and section is not None:
                    key = line.split("=", 1)[0].strip()
                    numbers[(section, key)] = lineno
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return numbers


def _parse_design(section, lines, path) -> AcquisitionDesign:
    n = int(section.get("N", "30"))
    tr_vals = _parse_floats(section.get("TR", "3.0"))
    if len(tr_vals) == 1:
        tr = (0.0,) + (tr_vals[0],) * (n - 1)
    else:
        tr = tuple(tr_vals)
        if len(tr) != n:
            raise ConfigError(
                f"{path}:{lines.get(('design', 'TR'), '?')}: "
                f"TR needs 1 or N={n} values, got {len(tr)}")
    def angles(key, default):
        vals = _parse_floats(section.get(key, default))
        if len(vals) == 1:
            return (vals[0],) * n
        if len(vals) != n:
            raise ConfigError(
                f"{path}:{lines.get(('design', key), '?')}: "
                f"{key} needs 1 or N={n} values, got {len(vals)}")
        return tuple(vals)
    return AcquisitionDesign(tr, angles("thetaP", "20.0"),
                             angles("thetaL", "30.0"))


def _parse_phantom(section, lines, path) -> tuple[PhantomSpec, float]:
    dims = tuple(int(x) for x in section.get("dims", "32 32 32").split())
    spacing = float(section.get("spacing", "1.0"))
    seed = int(section.get("seed", "0"))
    dt = float(section.get("dt", "0.15"))
    family = section.get("family", "").strip()
    if not family:
        spec = default_validation_spec(dims=dims, spacing=spacing)
        return spec, dt
    kwargs = dict(dims=dims, spacing=spacing, seed=seed, family=family)
    if family == "cylinders":
        cyls = []
        for part in section.get("cylinders", "").split(";"):
            part = part.strip()
            if not part:
                continue
            try:
                ax, c1, c2, r, lo, hi = part.split()
            except ValueError as exc:
                raise ConfigError(
                    f"{path}:{lines.get(('phantom', 'cylinders'), '?')}: "
                    f"cylinder needs 'axis c1 c2 radius lo hi', got {part!r}"
                ) from exc
            cyls.append(Cylinder(ax, float(c1), float(c2), float(r),
                                 float(lo), float(hi)))
        kwargs["cylinders"] = tuple(cyls)
    elif family == "random":
        kwargs["density"] = float(section.get("density", "0"))
    elif family == "voxels":
        voxels = []
        for part in section.get("voxels", "").split(";"):
            part = part.strip()
            if not part:
                continue
            i, j, k, f = part.split()
            voxels.append((int(i), int(j), int(k), float(f)))
        kwargs["voxels"] = tuple(voxels)
    return PhantomSpec(**kwargs), dt


def _parse_validate(section, lines, path):
    requests = []
    for tok in section.get("designs", "oed2 clinical").split():
        if tok in DESIGN_ALIASES:
            tp, tl = DESIGN_ALIASES[tok]
            requests.append(DesignRequest(tok, tp, tl))
        elif tok.startswith("constant:"):
            try:
                _, tp, tl = tok.split(":")
            except ValueError as exc:
                raise ConfigError(
                    f"{path}:{lines.get(('validate', 'designs'), '?')}: "
                    f"expected constant:<thetaP>:<thetaL>, got {tok!r}") from exc
            requests.append(DesignRequest(
                f"constant_{tp}_{tl}", float(tp), float(tl)))
        elif tok.startswith("csv:"):
            requests.append(DesignRequest(
                tok[4:].replace("/", "_"), csv_path=tok[4:]))
        else:
            raise ConfigError(
                f"{path}:{lines.get(('validate', 'designs'), '?')}: "
                f"unknown design token {tok!r}")
    return tuple(requests)


def read_config(path) -> ExperimentConfig:
    """Parse and validate a config file; unknown keys are errors."""
    lines = _key_line_numbers(path)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(
                f"{path}:{lines.get((section, None), '?')}: "
                f"unknown section [{section}]")
        for key in cp[section]:
            if key not in _SECTIONS[section]:
                raise ConfigError(
                    f"{path}:{lines.get((section, key), '?')}: "
                    f"unknown key {key!r} in [{section}]")

    cfg = ExperimentConfig()
    try:
        if cp.has_section("model"):
            overrides = {k: float(v) for k, v in cp["model"].items()}
            cfg.model = dataclasses.replace(ModelParams(), **overrides)
        if cp.has_section("design"):
            cfg.design = _parse_design(cp["design"], lines, path)
        if cp.has_section("prior"):
            sec = cp["prior"]
            cfg.prior = PriorSpec(
                mean=tuple(_parse_floats(sec.get("mean", "0.15 0.05 4.0"))),
                std=tuple(_parse_floats(sec.get("std", "0.03 0.01 1.3"))))
        if cp.has_section("noise"):
            sec = cp["noise"]
            if "snr" in sec:
                cfg.snr_list = tuple(_parse_floats(sec["snr"]))
            if "s_ref" in sec:
                cfg.s_ref = float(sec["s_ref"])
        if cp.has_section("phantom"):
            cfg.phantom, cfg.phantom_dt = _parse_phantom(cp["phantom"],
                                                         lines, path)
        if cp.has_section("run"):
            sec = cp["run"]
            cfg.seed = int(sec.get("seed", cfg.seed))
            cfg.replicates = int(sec.get("replicates", cfg.replicates))
            cfg.out_dir = sec.get("out", cfg.out_dir)
            cfg.threads = int(sec.get("threads", cfg.threads))
            cfg.order = int(sec.get("order", cfg.order))
        if cp.has_section("validate"):
            cfg.validate_designs = _parse_validate(cp["validate"], lines, path)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg


def write_config(cfg: ExperimentConfig, path) -> None:
    """Serialize a configuration back to the plain-text format."""
    m, d = cfg.model, cfg.design
    with open(path, "w") as fh:
        fh.write("[model]\n")
        for key in _MODEL_KEYS:
            fh.write(f"{key} = {getattr(m, key)!r}\n")
        fh.write("\n[design]\n")
        fh.write(f"N = {d.n}\n")
        trs = set(d.tr[1:])
        if len(trs) <= 1:
            fh.write(f"TR = {d.tr[1] if d.n > 1 else 0.0!r}\n")
        else:
            fh.write("TR = " + " ".join(repr(x) for x in d.tr) + "\n")
        for key, vals in (("thetaP", d.theta_p_deg), ("thetaL", d.theta_l_deg)):
            if len(set(vals)) == 1:
                fh.write(f"{key} = {vals[0]!r}\n")
            else:
                fh.write(f"{key} = " + " ".join(repr(x) for x in vals) + "\n")
        fh.write("\n[prior]\n")
        fh.write("mean = " + " ".join(repr(x) for x in cfg.prior.mean) + "\n")
        fh.write("std = " + " ".join(repr(x) for x in cfg.prior.std) + "\n")
        fh.write("\n[noise]\n")
        fh.write("snr = " + " ".join(repr(x) for x in cfg.snr_list) + "\n")
        fh.write(f"s_ref = {cfg.s_ref!r}\n")
        fh.write("\n[run]\n")
        fh.write(f"seed = {cfg.seed}\nreplicates = {cfg.replicates}\n")
        fh.write(f"out = {cfg.out_dir}\nthreads = {cfg.threads}\n")
        fh.write(f"order = {cfg.order}\n")


def load_schedule_csv(path, base: AcquisitionDesign) -> AcquisitionDesign:
    """Read a schedule written by the optimize command."""
    import csv as _csv

    rows = []
    with open(path, newline="") as fh:
        r = _csv.reader(fh)
        header = next(r)
        if header[:4] != ["k", "t", "thetaP_deg", "thetaL_deg"]:
            raise ConfigError(f"{path}: unexpected schedule header {header}")
        for row in r:
            rows.append((float(row[2]), float(row[3])))
    if len(rows) != base.n:
        raise ConfigError(
            f"{path}: schedule has {len(rows)} rows, design has {base.n}")
    arr = np.array(rows)
    return base.with_angles(arr[:, 0], arr[:, 1])
