import re
import sys

import pytest

from hrtsim.machine import Machine
from hrtsim.mem import HIGHER_BASE
from hrtsim.ros import init_runtime
from hrtsim.sim import System
from hrtsim.toolchain import AeroKernelImage, AppDescriptor, embed


def make_fat(names=("worker",), payload_size=8192) -> bytes:
    symbols = {
        name: HIGHER_BASE + 0x0020_0000 + i * 0x40 for i, name in enumerate(sorted(names))
    }
    image = AeroKernelImage(
        entry=sorted(names)[0], symbol_table=symbols, payload_size=payload_size
    )
    return embed(AppDescriptor("test-app"), image)


def small_machine(**kw) -> Machine:
    kw.setdefault("phys_frames", 512)
    return Machine(**kw)


@pytest.fixture
def system() -> System:
    return System(machine=small_machine())


@pytest.fixture
def booted(system) -> System:
    init_runtime(system, make_fat(("worker", "helper", "leaf")))
    return system


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    match = re.match(r"test_criterion_(\d+)_(\w+)", name)
    if match:
        status = "PASS" if report.passed else "FAIL"
        number = int(match.group(1))
        title = match.group(2).replace("_", " ")
        sys.stderr.write(f"{status} criterion {number}: {title}\n")
        sys.stderr.flush()
