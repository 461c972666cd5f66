"""Test-session setup: this workload is many small matrix products, where
BLAS thread fan-out is pure overhead on small machines."""

import threadpoolctl

threadpoolctl.threadpool_limits(limits=1)
