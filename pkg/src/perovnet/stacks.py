"""Stack templates: layer order, materials, thickness bounds and illumination.

A stack file is INI text::

    [stack]
    incident_medium = air
    exit_medium = air
    active_layer = PerovHMv2
    dual_side = yes
    layers =
        # label       material    lower  upper  [thickness]
        ITO_top       ITO         54     350
        NiO           NiO         5      50
        ...

Each ``layers`` line is ``label material lower_nm upper_nm`` with an
optional fifth column giving a concrete thickness (required only when the
file describes one device, e.g. for ``predict``).  Labels must be unique;
``active_layer`` names a label.  Forward illumination enters through the
first listed layer.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .materials import MaterialDispersion, load_library, builtin_materials_dir
from .sampling import ThicknessBox
from .tmm import Layer, LayerStack

PRESETS = ("transparent", "opaque")


class StackFileError(ValueError):
    pass


@dataclass(frozen=True)
class StackTemplate:
    labels: tuple
    materials: tuple
    box: ThicknessBox
    incident_medium: str = "air"
    exit_medium: str = "air"
    active_layer: str = ""
    dual_side: bool = False
    thicknesses: tuple | None = None

    @property
    def active_index(self) -> int:
        return self.labels.index(self.active_layer)

    @property
    def channels(self) -> int:
        return 2 if self.dual_side else 1

    def instantiate(self, library: dict[str, MaterialDispersion], thicknesses=None) -> LayerStack:
        if thicknesses is None:
            thicknesses = self.thicknesses
        if thicknesses is None:
            raise StackFileError("no thicknesses given for stack instantiation")
        try:
            mats = [library[m] for m in self.materials]
            inc, ext = library[self.incident_medium], library[self.exit_medium]
        except KeyError as exc:
            raise StackFileError(f"material {exc.args[0]!r} not found in materials library") from None
        layers = [Layer(m, float(d), lab) for m, d, lab in zip(mats, thicknesses, self.labels)]
        return LayerStack(tuple(layers), inc, ext, self.active_index)

    def midpoint(self) -> np.ndarray:
        return (np.array(self.box.lower) + np.array(self.box.upper)) / 2

    def to_text(self) -> str:
        lines = [
            "[stack]",
            f"incident_medium = {self.incident_medium}",
            f"exit_medium = {self.exit_medium}",
            f"active_layer = {self.active_layer}",
            f"dual_side = {'yes' if self.dual_side else 'no'}",
            "layers =",
        ]
        for i, (lab, mat) in enumerate(zip(self.labels, self.materials)):
            row = f"    {lab} {mat} {self.box.lower[i]:g} {self.box.upper[i]:g}"
            if self.thicknesses is not None:
                row += f" {self.thicknesses[i]!r}"
            lines.append(row)
        return "\n".join(lines) + "\n"


def parse_stack_text(text: str, source: str = "<string>") -> StackTemplate:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise StackFileError(f"{source}: {exc}") from None
    if not cp.has_section("stack"):
        raise StackFileError(f"{source}: missing [stack] section")
    sec = cp["stack"]
    try:
        raw_layers = sec["layers"]
        active = sec["active_layer"].strip()
    except KeyError as exc:
        raise StackFileError(f"{source}: missing key {exc.args[0]!r}") from None
    labels, mats, lo, hi, th = [], [], [], [], []
    for line in raw_layers.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (4, 5):
            raise StackFileError(f"{source}: layer line {line!r} needs 4 or 5 columns")
        labels.append(parts[0])
        mats.append(parts[1])
        try:
            lo.append(float(parts[2]))
            hi.append(float(parts[3]))
            if len(parts) == 5:
                th.append(float(parts[4]))
        except ValueError:
            raise StackFileError(f"{source}: bad number in layer line {line!r}") from None
    if not labels:
        raise StackFileError(f"{source}: no layers listed")
    if len(set(labels)) != len(labels):
        raise StackFileError(f"{source}: layer labels must be unique")
    if th and len(th) != len(labels):
        raise StackFileError(f"{source}: thickness column must be given for all layers or none")
    if active not in labels:
        raise StackFileError(f"{source}: active_layer {active!r} is not a layer label")
    try:
        dual = sec.getboolean("dual_side", fallback=False)
        box = ThicknessBox(tuple(labels), tuple(lo), tuple(hi))
    except ValueError as exc:
        raise StackFileError(f"{source}: {exc}") from None
    return StackTemplate(
        labels=tuple(labels),
        materials=tuple(mats),
        box=box,
        incident_medium=sec.get("incident_medium", "air").strip(),
        exit_medium=sec.get("exit_medium", "air").strip(),
        active_layer=active,
        dual_side=dual,
        thicknesses=tuple(th) if th else None,
    )


def load_stack_file(path) -> StackTemplate:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StackFileError(f"{path}: cannot read ({exc.strerror})") from None
    return parse_stack_text(text, str(path))


def preset(name: str) -> StackTemplate:
    if name not in PRESETS:
        raise StackFileError(f"unknown stack preset {name!r}; choose from {', '.join(PRESETS)}")
    return load_stack_file(Path(__file__).parent / "data" / "stacks" / f"{name}.stack")


def resolve_stack(spec: str) -> StackTemplate:
    """Preset name or path to a stack file."""
    return preset(spec) if spec in PRESETS else load_stack_file(spec)


def default_library() -> dict[str, MaterialDispersion]:
    return load_library(builtin_materials_dir())
