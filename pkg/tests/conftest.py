import pytest

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def record(criterion: int, parts: dict[str, tuple[bool, str]], runtime: float, limit: float | None,
               info: str = ""):
        ok = all(p for p, _ in parts.values())
        if limit is not None:
            ok = ok and runtime < limit
        budget = f"{runtime:.1f}s" + (f" (limit {limit:.0f}s)" if limit is not None else "")
        detail = "; ".join(f"{name} {'ok' if p else 'FAIL'}: {text}" for name, (p, text) in parts.items())
        extra = f"; [not gating] {info}" if info else ""
        _CRITERIA[criterion] = (ok, f"{detail}; runtime {budget}{extra}")
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} | {_CRITERIA[criterion][1]}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(_CRITERIA):
        ok, detail = _CRITERIA[c]
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'} | {detail}")
