import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CACHE = Path(os.environ.get("KPA_CACHE", Path.home() / ".cache" / "chaoskpa"))


def real_mnist_dir():
    """``(directory of MNIST IDX files, description)``, or ``(None, reason)``.

    $KPA_MNIST_DIR wins; otherwise the 5000-digit sample shipped with mlxtend
    is converted to IDX once and cached.
    """
    from chaoskpa.data import import_mnist_csv, mlxtend_mnist_csv

    d = os.environ.get("KPA_MNIST_DIR")
    if d:
        return Path(d), f"KPA_MNIST_DIR={d}"
    try:
        csv = mlxtend_mnist_csv()
    except FileNotFoundError as e:
        return None, str(e)
    cache = CACHE / "mnist5k"
    if not (cache / "train-images-idx3-ubyte").exists():
        import_mnist_csv(csv, cache)
    return cache, "mlxtend 5000-digit MNIST sample"


def real_cifar_dir():
    d = os.environ.get("KPA_CIFAR_DIR")
    if d:
        return Path(d), f"KPA_CIFAR_DIR={d}"
    return None, "no CIFAR-10 source (set KPA_CIFAR_DIR to the binary batches)"


@pytest.fixture(scope="session")
def mnist_images():
    from chaoskpa.data import load_mnist_dir

    d, why = real_mnist_dir()
    if d is None:
        pytest.skip(f"no MNIST source: {why}")
    return load_mnist_dir(d)[0]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("acceptance_log")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.lines():
        terminalreporter.write_line(line)
