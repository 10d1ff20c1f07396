def pytest_addoption(parser):
    parser.addoption(
        "--heavy", action="store_true", default=False,
        help="run the long acceptance sweeps (2D multiplicity splitting)",
    )


def pytest_collection_modifyitems(config, items):
    import pytest
    if config.getoption("--heavy"):
        return
    skip = pytest.mark.skip(reason="needs --heavy")
    for item in items:
        if "heavy" in item.keywords:
            item.add_marker(skip)
