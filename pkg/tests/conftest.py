import pytest

from depthfield.scenedata import generate_dataset, save_dataset
from helpers import TINY_SPEC


@pytest.fixture(scope="session")
def tiny_data():
    return generate_dataset(TINY_SPEC)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory, tiny_data):
    root = tmp_path_factory.mktemp("data")
    save_dataset(root, tiny_data[1], tiny_data[0])
    return root
