def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: multi-minute end-to-end training runs")
