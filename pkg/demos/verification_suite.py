"""The built-in verification registry, end to end.

Every mathematical claim the library leans on has a registered check:
exact information decay on random chains, the trained-classifier bound,
finite-difference gradient verification for every model, permutation
invariance of the set fusion, mixture-fit likelihood monotonicity, and
the selection arithmetic. `chainviews verify` runs the same registry from
the command line and exits non-zero if anything fails.
"""

import time

from chainviews import all_passed, run_checks

start = time.time()
results = run_checks()
elapsed = time.time() - start

print(f"{'check':28s} {'status':6s} {'statistic':>12s} {'threshold':>10s}  detail")
for r in results:
    status = "PASS" if r.passed else "FAIL"
    print(f"{r.name:28s} {status:6s} {r.statistic:12.3e} {r.threshold:10.1e}  {r.detail}")

print()
print(f"{len(results)} checks in {elapsed:.1f}s, all_passed={all_passed(results)}")
