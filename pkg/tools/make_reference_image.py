"""Regenerate the bundled reference image (seeded, reproducible).

Usage: python3 tools/make_reference_image.py
"""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from homreg.image import write_pgm
from homreg.synthetic import textured_reference


def main():
    out = (pathlib.Path(__file__).resolve().parents[1]
           / "src" / "homreg" / "data" / "reference.pgm")
    out.parent.mkdir(parents=True, exist_ok=True)
    img = textured_reference(height=533, width=800, seed=7)
    write_pgm(out, img)
    print(f"wrote {out} ({img.shape[1]}x{img.shape[0]})")


if __name__ == "__main__":
    main()
