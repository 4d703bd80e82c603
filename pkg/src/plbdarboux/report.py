"""Darboux report: JSON round trip, per-sample CSV and a plain-text rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import IoError, ParseError

SCHEMA_VERSION = 1


@dataclass
class DarbouxReport:
    """Verdict plus every number behind it.

    Non-finite values are stored as ``None`` so the JSON stays strict.
    """

    verdict: str
    hypotheses: dict
    flow: dict
    residuals: dict
    tolerances: dict
    settings: dict
    samples: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DarbouxReport":
        try:
            version = data["schema_version"]
            if version != SCHEMA_VERSION:
                raise ParseError(f"unsupported report schema_version {version!r}")
            return cls(**{k: data[k] for k in (
                "verdict", "hypotheses", "flow", "residuals", "tolerances", "settings", "samples", "failures",
            )}, schema_version=version)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed report: missing or bad field {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    def write_json(self, path: str | Path) -> None:
        _write(path, self.to_json() + "\n")

    def samples_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        dim = len(self.samples[0]["point"]) if self.samples else 0
        w.writerow(["index"] + [f"x{k + 1}" for k in range(dim)] + [f"phi1_{k + 1}" for k in range(dim)]
                   + ["pullback_residual", "drift", "level_consistency", "error"])
        for s in self.samples:
            w.writerow([s["index"], *s["point"], *(_cell(v) for v in s["phi1"]), _cell(s["pullback_residual"]),
                        _cell(s["drift"]), _cell(s["level_consistency"]), s["error"] or ""])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        _write(path, self.samples_csv())

    def to_text(self) -> str:
        h = self.hypotheses
        r = self.residuals
        lines = [f"verdict: {self.verdict}"]
        if self.failures:
            lines.append("failed: " + ", ".join(self.failures))
        lines.append(f"H1 margin (min weighted singular value): {_fmt(h['H1']['min_singular_value'])}"
                     f"  kappa: {_fmt(h['H1']['kappa'])}  pass: {h['H1']['pass']}")
        lines.append(f"H2 primitive residual: {_fmt(h['H2']['primitive_residual'])}"
                     f"  alpha(0): {_fmt(h['H2']['alpha_at_origin'])}  pass: {h['H2']['pass']}")
        lines.append(f"H3 implied M: {_fmt(h['H3']['implied_M'])}  declared M: {_fmt(h['H3']['declared_M'])}"
                     f"  pass: {h['H3']['pass']}")
        lines.append(f"H4 sampled modulus: {_fmt(h['H4']['modulus'])}  pass: {h['H4']['pass']}")
        lines.append(f"flow (sampled bound): mu_hat {_fmt(self.flow['mu_hat'])}  max speed "
                     f"{_fmt(self.flow['max_speed'])}  epsilon {_fmt(self.flow['epsilon'])}")
        lines.append(f"pullback residual: {_fmt(r['pullback'])}")
        lines.append(f"Moser drift: {_fmt(r['drift'])}")
        lines.append(f"level consistency: {_fmt(r['level_consistency'])}")
        lines.append(f"origin displacement: {_fmt(r['origin'])}")
        if r.get("refinement"):
            ref = r["refinement"]
            lines.append(f"half-step check: position delta {_fmt(ref['position_delta'])}"
                         f"  pullback {_fmt(ref['pullback_half_step'])}")
        s = self.settings
        lines.append(f"samples: {s['samples']}  radius: {s['radius']}  step: {s['step']}  seed: {s['seed']}")
        errs = [x for x in self.samples if x["error"]]
        if errs:
            lines.append(f"sample errors: {len(errs)}")
            for x in errs[:5]:
                lines.append(f"  #{x['index']}: {x['error']}")
        return "\n".join(lines) + "\n"


def _cell(v):
    return "" if v is None else repr(float(v))


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return f"{v:.3e}" if isinstance(v, float) else str(v)


def _write(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from None


def load_report(path: str | Path) -> DarbouxReport:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ParseError(f"{path}: report must be a JSON object")
    return DarbouxReport.from_dict(data)


def render_report(path: str | Path, format: str = "text") -> str:
    """Re-render a saved JSON report as ``text`` or per-sample ``csv``."""
    report = load_report(path)
    if format == "text":
        return report.to_text()
    if format == "csv":
        return report.samples_csv()
    raise ValueError(f"unknown format {format!r}")
