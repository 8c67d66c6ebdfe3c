import os

from dotenv import load_dotenv

load_dotenv()

# Logging level for the entry script; WARNING hides debug chatter by default
LOG_LEVEL = os.getenv("DFV2_LOG_LEVEL", "WARNING").upper()

# Base folder for command outputs (manifests, checkpoints, tables)
OUTPUT_DIR = os.getenv("DFV2_OUTPUT_DIR", "runs")

# SQLite run ledger; an empty value disables it
RUNS_DB = os.getenv("DFV2_RUNS_DB", "dformer_runs.db")

# Worker threads for data generation and evaluation
WORKERS = int(os.getenv("DFV2_WORKERS", "4"))
