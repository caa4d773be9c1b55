"""Episode driver, experiments, sweeps and file outputs."""
from .config import EnvironmentConfig, RunConfig, builtin_environment, load_environment, load_run
from .episode import RunLog, new_qtable, product_size, run_episode, synthesize
from .experiment import SweepCell, SweepResult, run_experiment, run_seed, sweep_switching
from .outputs import emit_outputs, load_log, render_svg
