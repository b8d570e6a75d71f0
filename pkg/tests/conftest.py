import sys


def pytest_terminal_summary(terminalreporter):
    mods = [m for name, m in sys.modules.items() if name.endswith("test_acceptance")]
    lines = getattr(mods[0], "RESULTS", {}) if mods else {}
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
