from .config import BenchConfig, load_config
from .harness import MethodResult, run_error_prediction, run_sweep, run_synthetic

__all__ = ["BenchConfig", "MethodResult", "load_config", "run_error_prediction",
           "run_sweep", "run_synthetic"]
