import pytest

from perceptron_flow.idx import RAW_MD5, default_data_dir


def mnist_available() -> bool:
    d = default_data_dir()
    return all((d / name).exists() for name in RAW_MD5)


requires_mnist = pytest.mark.skipif(not mnist_available(), reason="MNIST files not cached")
