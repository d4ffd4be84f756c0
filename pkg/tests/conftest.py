import json
from pathlib import Path

import pytest

from deftsim import (
    BucketProfile,
    ClusterSpec,
    LinkSpec,
    ModelProfile,
    load_cluster,
    load_profile,
)

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures"

# the two "equal" links cannot both have ratio exactly 1.0 (the cluster
# invariant wants a unique fast link), so the second one is epsilon slower
NEAR_ONE = 1.0000001


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURE_DIR


@pytest.fixture(scope="session")
def vgg_profile() -> ModelProfile:
    return load_profile(FIXTURE_DIR / "vgg19.json")


@pytest.fixture(scope="session")
def gpt2_profile() -> ModelProfile:
    return load_profile(FIXTURE_DIR / "gpt2.json")


@pytest.fixture(scope="session")
def resnet_profile() -> ModelProfile:
    return load_profile(FIXTURE_DIR / "resnet101.json")


@pytest.fixture(scope="session")
def dual_cluster() -> ClusterSpec:
    return load_cluster(FIXTURE_DIR / "cluster_dual.json")


@pytest.fixture(scope="session")
def fast_only_cluster() -> ClusterSpec:
    return ClusterSpec(links=(LinkSpec(name="fast"),))


@pytest.fixture(scope="session")
def equal_dual_cluster() -> ClusterSpec:
    return ClusterSpec(links=(
        LinkSpec(name="fast"),
        LinkSpec(name="twin", speed_ratio_to_fast=NEAR_ONE),
    ))


@pytest.fixture(scope="session")
def walk_params_dict() -> dict:
    return json.loads((FIXTURE_DIR / "walk_merged_updates.json").read_text())


def make_uniform_profile(
    n: int,
    comm_us: int = 900,
    total_forward_us: int = 3600,
    total_backward_us: int = 7200,
    batch_size: int = 256,
    name: str = "uniform",
) -> ModelProfile:
    """n equal buckets with exact integer totals; used by the frequency-law
    tests: with the equal dual-link cluster, CR_multi = n*comm/(2*10800)."""
    fwd = [total_forward_us // n] * n
    bwd = [total_backward_us // n] * n
    for i in range(total_forward_us - sum(fwd)):
        fwd[i] += 1
    for i in range(total_backward_us - sum(bwd)):
        bwd[i] += 1
    return ModelProfile(
        name=f"{name}{n}",
        buckets=tuple(
            BucketProfile(i + 1, 1000, fwd[i], bwd[i], comm_us) for i in range(n)
        ),
        batch_size=batch_size,
    )
