import acceptance_registry


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = acceptance_registry.RESULTS
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        name, passed, elapsed = results[number]
        terminalreporter.write_line(
            acceptance_registry._line(number, name, passed, elapsed)
        )
