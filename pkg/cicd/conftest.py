import pytest

from cicd.settings import preset_model


@pytest.fixture(scope="session")
def heston_model():
    return preset_model("heston")


@pytest.fixture(scope="session")
def jump_model():
    return preset_model("heston_jumps")


@pytest.fixture(params=["heston", "heston_jumps"])
def model(request):
    return preset_model(request.param)
