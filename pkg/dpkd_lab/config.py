import os

class Settings:
    def __init__(self):
        self.output_dir = os.environ.get('DPKD_OUTPUT_DIR', 'runs')
        self.log_level = os.environ.get('DPKD_LOG_LEVEL', 'INFO')
        self.enum_budget = int(os.environ.get('DPKD_ENUM_BUDGET', '1000000'))
        self.max_workers = int(os.environ.get('DPKD_MAX_WORKERS', '4'))
        self.judge_url = os.environ.get('DPKD_JUDGE_URL', None)
        self.judge_token = os.environ.get('DPKD_JUDGE_TOKEN', None)
        self.judge_timeout = float(os.environ.get('DPKD_JUDGE_TIMEOUT', '10'))
        # wall_ms is the only nondeterministic metrics column; off keeps CSVs byte-identical
        self.record_wall_time = os.environ.get('DPKD_RECORD_WALL_TIME', '0').lower() not in ('0', 'false', 'no')

settings = Settings()
