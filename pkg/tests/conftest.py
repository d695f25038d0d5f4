import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        parts = mod.RESULTS[number]
        ok = all(p for p, _ in parts.values())
        detail = "; ".join(f"{name}: {'ok' if p else 'FAILED'} ({info})" for name, (p, info) in parts.items())
        terminalreporter.write_line(f"C{number:<2} {'PASS' if ok else 'FAIL'}  {detail}")
