"""
 this module keeps the logger for
 chebvio and saves it to the .logs/*.log folder
"""

import logging
from datetime import datetime
import os


date = datetime.now().strftime("%m-%d-%Y")
logger = logging.getLogger("chebvio")
logger.setLevel(logging.DEBUG)
formatter = logging.Formatter('%(levelname)s:%(name)s:%(message)s')

console_handler = logging.StreamHandler()
console_handler.setLevel(logging.WARNING)
console_handler.setFormatter(formatter)
logger.addHandler(console_handler)

log_filename = os.path.join(os.path.dirname(__file__), '.logs',
                            f'chebvio-{date}.log')
try:
    os.makedirs(os.path.dirname(log_filename), exist_ok=True)
    file_handler = logging.FileHandler(log_filename)
except OSError:
    # read-only install, console only
    file_handler = None
else:
    file_handler.setLevel(logging.WARNING)
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)


def set_level(level):
    """
    Sets the console verbosity. Accepts a logging level
    or its name ("DEBUG", "INFO", ...).
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            raise ValueError(f"unknown log level {level}")
    console_handler.setLevel(level)
