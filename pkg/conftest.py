import pytest

from app.config import settings


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training and experiment runs")


@pytest.fixture(autouse=True)
def isolated_logs(tmp_path, monkeypatch):
    """Keep log files of CLI invocations out of the working tree."""
    monkeypatch.setattr(settings, "LOG_DIR", str(tmp_path / "logs"))
