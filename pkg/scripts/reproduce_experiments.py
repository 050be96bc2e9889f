#!/usr/bin/env python3
"""
Reproduce every experiment in the default suite file.

Runs the bench subcommands in order (run, timing, memory, plot) and logs
to logs/reproduce_<date>.log. Exits non-zero if any step fails.
"""
import os
import sys
import logging
from datetime import datetime
import subprocess

# Add the project directory to Python path
project_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_dir)

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'negfeed.settings')

log_file = os.path.join(project_dir, 'logs', f'reproduce_{datetime.now().strftime("%Y%m%d")}.log')
os.makedirs(os.path.dirname(log_file), exist_ok=True)

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(log_file),
        logging.StreamHandler()
    ]
)

logger = logging.getLogger(__name__)

STEPS = [
    ['bench', 'run'],
    ['bench', 'timing'],
    ['bench', 'memory'],
    ['bench', 'plot'],
]
STEP_TIMEOUT = 3 * 60 * 60


def run_step(args, extra):
    cmd = [sys.executable, 'manage.py'] + args + extra
    logger.info(f"Running command: {' '.join(cmd)}")
    try:
        result = subprocess.run(cmd, capture_output=True, text=True, timeout=STEP_TIMEOUT)
    except subprocess.TimeoutExpired:
        logger.error(f"{' '.join(args)} timed out after {STEP_TIMEOUT} seconds")
        return False

    if result.returncode == 0:
        logger.info(f"{' '.join(args)} completed")
        logger.info(result.stdout)
    else:
        logger.error(f"{' '.join(args)} failed with exit code {result.returncode}")
        logger.error(result.stderr)
        logger.error(result.stdout)
    return result.returncode == 0


def reproduce(extra):
    os.chdir(project_dir)
    logger.info("Starting experiment reproduction")
    ok = True
    for step in STEPS:
        ok = run_step(step, extra) and ok

    try:
        import django
        django.setup()

        from avoidance.results_storage_service import ResultsStorageService
        info = ResultsStorageService().get_storage_info()
        logger.info(f"Results: {info['total_files']} files, {info['total_size']} bytes in {info['storage_path']}")
    except Exception as e:
        logger.error(f"Could not read results directory: {e}")

    logger.info("Reproduction finished" if ok else "Reproduction finished with failures")
    return ok


if __name__ == "__main__":
    # Extra arguments (e.g. --seed 3 --workers 4) are passed to every step.
    success = reproduce(sys.argv[1:])
    sys.exit(0 if success else 1)
