"""Regenerate the PPM fixtures under tests/data from scikit-image samples."""

import pathlib

import numpy as np
from PIL import Image
from skimage import data

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data"


def write_ppm(path, rgb):
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    sources = {
        "astronaut": data.astronaut(),
        "coffee": data.coffee(),
        "chelsea": data.chelsea(),
        "rocket": data.rocket(),
    }
    rng = np.random.default_rng(20240611)
    names = list(sources)
    for i in range(10):
        src = sources[names[i % len(names)]]
        h = int(rng.integers(16, 65))
        w = int(rng.integers(16, 65))
        y = int(rng.integers(0, src.shape[0] - h))
        x = int(rng.integers(0, src.shape[1] - w))
        write_ppm(OUT / f"crop{i:02d}_{w}x{h}.ppm", src[y:y + h, x:x + w])

    # Larger crops for the rate sweeps.
    for name, (y, x) in {"astronaut": (40, 170), "coffee": (60, 200),
                         "chelsea": (60, 150), "rocket": (150, 250)}.items():
        write_ppm(OUT / f"sweep_{name}_128.ppm", sources[name][y:y + 128, x:x + 128])

    big = Image.fromarray(sources["coffee"]).resize((768, 512), Image.BICUBIC)
    write_ppm(OUT / "coffee_768x512.ppm", np.asarray(big))


if __name__ == "__main__":
    main()
