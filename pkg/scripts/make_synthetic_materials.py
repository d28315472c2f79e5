"""Regenerate the bundled synthetic dispersion tables.

The tables are Drude-Lorentz surrogates, not measured data.  They exist so
the pipeline runs out of the box; point ``paths.materials_dir`` at real
tables for physically meaningful spectra.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from perovnet.materials import MaterialDispersion, builtin_materials_dir, lorentz, save_dispersion

GRID = np.arange(250.0, 1001.0, 10.0)

SURROGATES = {
    "ITO": dict(eps_inf=3.6, oscillators=[(0.35, 5.2, 1.0)], drude=(1.1, 0.12)),
    "NiO": dict(eps_inf=3.9, oscillators=[(0.7, 4.1, 0.9)]),
    "PerovHMv2": dict(eps_inf=4.0, oscillators=[(0.12, 1.72, 0.16), (0.55, 2.7, 0.9), (1.3, 3.7, 1.3)]),
    "Perovskite": dict(eps_inf=4.0, oscillators=[(0.14, 1.68, 0.16), (0.6, 2.6, 0.9), (1.3, 3.6, 1.3)]),
    "C60HM": dict(eps_inf=3.0, oscillators=[(0.15, 2.7, 0.5), (0.5, 3.6, 0.6)]),
    "SnO2": dict(eps_inf=3.4, oscillators=[(0.4, 4.6, 0.7)]),
    "LiF": dict(eps_inf=1.9, oscillators=[(0.02, 12.0, 1.0)]),
    "Spiro-OMeTAD": dict(eps_inf=2.6, oscillators=[(0.12, 3.15, 0.35)]),
    "Au": dict(eps_inf=6.0, oscillators=[(1.5, 2.9, 0.9)], drude=(8.9, 0.07)),
    # test materials
    "lorentz_absorber": dict(eps_inf=2.5, oscillators=[(0.3, 2.3, 0.4)]),
}


def main(out=None):
    out = Path(out) if out else builtin_materials_dir()
    out.mkdir(parents=True, exist_ok=True)
    for name, kw in SURROGATES.items():
        save_dispersion(lorentz(name, GRID, **kw), out / f"{name}.csv")
    flat = np.ones_like(GRID)
    save_dispersion(MaterialDispersion("air", GRID, flat, 0 * flat), out / "air.csv")
    save_dispersion(MaterialDispersion("glass", GRID, 1.5 * flat, 0 * flat), out / "glass.csv")
    save_dispersion(MaterialDispersion("const_n2", GRID, 2.0 * flat, 0 * flat), out / "const_n2.csv")
    ramp = np.round(1.5 + (GRID - GRID[0]) / (GRID[-1] - GRID[0]), 6)
    save_dispersion(MaterialDispersion("ramp", GRID, ramp, 0 * flat), out / "ramp.csv")


if __name__ == "__main__":
    main(*sys.argv[1:])
