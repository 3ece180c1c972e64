"""Smoke test for the distractnet_py extension module.

Builds the extension with cargo (unless DISTRACTNET_PY_LIB points at an
already built library), imports it and exercises each exposed area on a
tiny synthetic dataset.

    python3 python/smoke_test.py
"""

import os
import random
import shutil
import struct
import subprocess
import sys
import tempfile
import zlib
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_library():
    lib = os.environ.get("DISTRACTNET_PY_LIB")
    if lib:
        return Path(lib)
    subprocess.run(["cargo", "build", "-p", "distractnet-py"], cwd=REPO, check=True)
    target = Path(os.environ.get("CARGO_TARGET_DIR", REPO / "target"))
    for name in ("libdistractnet_py.so", "libdistractnet_py.dylib", "distractnet_py.dll"):
        p = target / "debug" / name
        if p.exists():
            return p
    sys.exit("built library not found under " + str(target))


def import_module(lib):
    where = Path(tempfile.mkdtemp(prefix="distractnet_py_"))
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    shutil.copy(lib, where / ("distractnet_py" + suffix))
    sys.path.insert(0, str(where))
    import distractnet_py

    return distractnet_py


def write_png(path, width, height, rgb):
    raw = b"".join(b"\x00" + rgb[y * width * 3:(y + 1) * width * 3] for y in range(height))

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    png = b"\x89PNG\r\n\x1a\n"
    png += chunk(b"IHDR", struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0))
    png += chunk(b"IDAT", zlib.compress(raw))
    png += chunk(b"IEND", b"")
    path.write_bytes(png)


def make_dataset(root, per_class, size):
    rng = random.Random(0)
    for c in range(10):
        d = root / f"c{c}"
        d.mkdir(parents=True)
        for i in range(per_class):
            px = bytearray()
            for _ in range(size * size):
                px += bytes([c * 25 + 5, rng.randrange(256), rng.randrange(256)])
            write_png(d / f"img_{i}.png", size, size, bytes(px))


def main():
    dn = import_module(build_library())
    print("distractnet_py", dn.__version__)
    assert len(dn.variants()) == 10 and "VGG19_FT_B" in dn.variants()
    assert dn.class_names()[0] == "Safe driving"

    assert dn.compute_average_loss([(0.5, 2), (1.0, 2)]) == 0.75
    assert dn.compute_accuracy([1, 2, 3, 0], [1, 2, 3, 3]) == 0.75
    assert dn.stop_epoch([1.0, 0.9, 0.95, 0.96, 0.97], 3) == 5
    es = dn.EarlyStopper(patience=2)
    assert es.update(1.0) == (True, False)
    assert es.update(1.0) == (False, False)
    assert es.update(1.0) == (False, True)
    ranked = dn.compare_results([("HYBRID_CNN_TRANSFORMER", 0.98, 11.05), ("VGG19_FT_B", 0.98, 8.89)])
    assert ranked[0][1] == "VGG19_FT_B" and ranked[0][4] and not ranked[1][4]

    gray = bytes([100] * 12)
    assert dn.enhance_brightness(gray, 2, 2, 1.5) == bytes([150] * 12)
    assert dn.change_contrast(bytes([192] * 3), 1, 1, 0.5) == bytes([160] * 3)
    cfg = dn.AugmentationConfig()
    cfg.image_size = (8, 8)
    img = bytes(random.Random(1).randrange(256) for _ in range(10 * 12 * 3))
    a = dn.random_augment(img, 10, 12, cfg, 3)
    assert len(a) == 8 * 8 * 3 and a == dn.random_augment(img, 10, 12, cfg, 3)
    ident = dn.AugmentationConfig.identity((10, 12))
    assert dn.random_augment(img, 10, 12, ident, 3) == img

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        make_dataset(tmp / "data", 4, 16)
        m = dn.Manifest.scan(tmp / "data")
        assert len(m) == 40 and m.counts() == [4] * 10 and m.is_balanced()
        train, val = m.split(0.75, seed=1)
        assert len(train) == 30 and len(val) == 10
        assert len(val.test_subset(1, 0)) == 10
        hist = dict(m.histograms())
        assert sum(hist["R"]) == 40 * 16 * 16

        model = dn.Model("SIMPLE_CNN", input_size=(16, 16), seed=2)
        trainable, frozen = model.count_parameters()
        assert trainable > 0 and frozen == 0
        epochs = model.fit(train, val, tmp / "ckpt", epochs_max=2, batch_size=10, augment=False)
        assert 1 <= len(epochs) <= 2
        ckpt = tmp / "m.ckpt"
        model.save(ckpt)
        back = dn.Model.load(ckpt)
        probe = [(img, 10, 12)]
        assert back.predict(probe) == model.predict(probe)
        assert abs(sum(back.predict(probe)[0]) - 1.0) < 1e-5

        ft = dn.Model("VGG16_FT_B", input_size=(32, 32))
        assert ft.optimizer_family == "sgd"
        assert "backbone.features.19.weight" in ft.frozen_parameter_names()
        assert "backbone.features.21.weight" not in ft.frozen_parameter_names()

        try:
            dn.Model("NOPE")
        except ValueError as e:
            assert "VGG19_FT_B" in str(e)
        else:
            raise AssertionError("unknown variant accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
