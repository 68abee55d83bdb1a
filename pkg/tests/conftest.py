import os

# pin BLAS pools to one thread: the suite's many small matmuls run several
# times faster that way, and runs become bit-reproducible.  The env vars only
# help if numpy is not loaded yet (pytest plugins may beat us to it), so also
# clamp any already-initialized pools when threadpoolctl is around.
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
try:
    import threadpoolctl
    _limiter = threadpoolctl.threadpool_limits(1)
except ImportError:
    pass

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_RESULTS: list[tuple[str, bool]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, ok in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}: {name}")
