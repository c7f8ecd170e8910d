import pytest

from scene.errors import EncoderError
from scene.harness import Encoder

_ACCEPTANCE: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE.append(line)


@pytest.fixture(scope="session")
def encoder():
    try:
        enc = Encoder()
    except EncoderError as exc:
        pytest.skip(f"no usable ffmpeg: {exc}")
    return enc


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
