#!/usr/bin/env python3
"""Write a stand-in CIFAR-10 binary release with random pixels.

Same file names, record layout and class composition as the real release
(five training batches and one test batch of 10,000 records, 1,000 per class
each), so the loader and the split code can be exercised without the download.

    python scripts/make_cifar_fixture.py /tmp/fake-cifar [--per-class-per-file 1000]
"""

import argparse
from pathlib import Path

import numpy as np

from hybridtrain.data import CIFAR_TEST_FILE, CIFAR_TRAIN_FILES, write_cifar10_batch


def make_fixture(directory, per_class_per_file=1000, seed=0):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for name in CIFAR_TRAIN_FILES + (CIFAR_TEST_FILE,):
        labels = rng.permutation(np.repeat(np.arange(10, dtype=np.uint8), per_class_per_file))
        pixels = rng.integers(0, 256, size=(labels.size, 3072), dtype=np.uint8)
        write_cifar10_batch(directory / name, pixels, labels)
    return directory


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("directory")
    ap.add_argument("--per-class-per-file", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    print(make_fixture(a.directory, a.per_class_per_file, a.seed))
